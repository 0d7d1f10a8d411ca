"""Interactive multi-agent imitation: MAIL-WARM and the MURMAIL baseline.

Both algorithms only ever see the reward-free dynamics of a game; expert actions are
the sole supervision, and every expert action drawn is booked in a QueryLedger.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from game_core import (P1, P2, GameDynamics, InducedMdp, PolicyPair, StagePolicy, best_response, check_pair,
                       induced_transition, occupancy, other_player, policy_chooser, sample_categorical,
                       simulate, strip_rewards)
from imitation import TrajectoryDataset, bc_fit
from reward_free import BACKENDS, PolicySet, collect_exploratory, run_qlearning, warmup
from seeding import derive_seed

logger = logging.getLogger("mailbench.mail_algorithms")

PLAYER_LABELS = {P1: "p1", P2: "p2"}
OUTPUT_MODES = ("uniform", "last", "average")
PLANNERS = ("exact", "sample")
STATE_SAMPLING = ("rollout", "exact")


class QueryLedger:
    """Expert actions consumed, keyed by (phase, player) in first-use order."""

    def __init__(self):
        self._rows: "OrderedDict[Tuple[str, str], int]" = OrderedDict()

    def add(self, phase: str, player: int, queries: int) -> None:
        if queries < 0:
            raise ValueError(f"query count must be non-negative, got {queries}")
        key = (phase, PLAYER_LABELS[player])
        self._rows[key] = self._rows.get(key, 0) + int(queries)

    def rows(self) -> List[Tuple[str, str, int]]:
        return [(phase, player, n) for (phase, player), n in self._rows.items()]

    def total(self, phases: Optional[Iterable[str]] = None) -> int:
        wanted = None if phases is None else set(phases)
        return sum(n for (phase, _), n in self._rows.items() if wanted is None or phase in wanted)

    def copy(self) -> "QueryLedger":
        other = QueryLedger()
        other._rows = OrderedDict(self._rows)
        return other

    def to_dicts(self) -> List[Dict[str, object]]:
        return [{"phase": phase, "player": player, "queries": n} for phase, player, n in self.rows()]


def query_ledger(*ledgers: QueryLedger) -> List[Tuple[str, str, int]]:
    """Merge ledgers into one (phase, player, queries) table; no ledgers, no rows."""
    merged = QueryLedger()
    for ledger in ledgers:
        for phase, player, n in ledger.rows():
            key = (phase, player)
            merged._rows[key] = merged._rows.get(key, 0) + n
    return merged.rows()


@dataclass(frozen=True)
class MailWarmConfig:
    n0: int = 50
    n: int = 1000
    backend: str = "qlearning"
    seed: int = 0
    n_iters: int = 100
    epsilon: float = 0.1
    skip_unreachable: bool = True
    euler_delta: float = 0.1

    def __post_init__(self):
        if self.n0 < 1 or self.n < 1:
            raise ValueError(f"n0 and n must be at least 1, got n0={self.n0}, n={self.n}")
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}; expected one of {BACKENDS}")


@dataclass(frozen=True, eq=False)
class WarmStart:
    """Warm-up policy sets: `fix_p2` explores for player 1 against nu^E, `fix_p1` for player 2."""

    fix_p2: PolicySet
    fix_p1: PolicySet

    def by_fixed(self, player: int) -> PolicySet:
        return self.fix_p1 if player == P1 else self.fix_p2


@dataclass(frozen=True, eq=False)
class MailWarmResult:
    pair: PolicyPair
    ledger: QueryLedger
    datasets: Dict[int, TrajectoryDataset] = field(default_factory=dict)


def _dynamics(game: GameDynamics) -> GameDynamics:
    return strip_rewards(game)


def warm_start(game: GameDynamics, experts: PolicyPair, cfg: MailWarmConfig) -> WarmStart:
    """Reward-free warm-up against each expert in turn."""
    dyn = _dynamics(game)
    check_pair(dyn, experts)
    sets = {}
    for fixed in (P2, P1):
        rng = np.random.default_rng(derive_seed(cfg.seed, "mail-warm", "warmup", fixed))
        sets[fixed] = warmup(dyn, experts.policy(fixed), fixed, cfg.n0, cfg.backend, rng,
                             n_iters=cfg.n_iters, epsilon=cfg.epsilon, skip_unreachable=cfg.skip_unreachable,
                             euler_delta=cfg.euler_delta)
    return WarmStart(fix_p2=sets[P2], fix_p1=sets[P1])


def mail_warm_path(game: GameDynamics, experts: PolicyPair, cfg: MailWarmConfig,
                   sizes: Sequence[int], start: Optional[WarmStart] = None
                   ) -> Iterator[Tuple[int, PolicyPair, QueryLedger]]:
    """MAIL-WARM evaluated at several exploratory dataset sizes.

    One dataset of max(sizes) trajectories is collected per fixed expert; each size uses
    its prefix, so the results are nested.

    Yields:
        (n, (mu_hat, nu_hat), ledger) for each n in `sizes`, in the given order.
    """
    dyn = _dynamics(game)
    check_pair(dyn, experts)
    if not sizes or min(sizes) < 1:
        raise ValueError("dataset sizes must be positive")
    start = start or warm_start(dyn, experts, cfg)
    n_max = max(sizes)
    full = {}
    for fixed in (P2, P1):
        rng = np.random.default_rng(derive_seed(cfg.seed, "mail-warm", "collect", fixed))
        full[fixed] = collect_exploratory(dyn, experts.policy(fixed), fixed, start.by_fixed(fixed), n_max, rng)
    for n in sizes:
        ledger = QueryLedger()
        fitted = {}
        for fixed in (P2, P1):
            data = full[fixed].head(n)
            fitted[fixed] = bc_fit(data, fixed, dyn.n_states, dyn.n_actions(fixed)).as_stage_policy()
            ledger.add("warmup", fixed, start.by_fixed(fixed).queries)
            ledger.add("collection", fixed, data.queries(fixed))
        yield n, PolicyPair(fitted[P1], fitted[P2]), ledger


def mail_warm(game: GameDynamics, experts: PolicyPair, cfg: MailWarmConfig) -> MailWarmResult:
    """Warm-up, exploratory collection and behavior cloning against both experts.

    Fixing nu^E yields the dataset D^{nu^E} whose player-2 labels fit nu_hat; fixing mu^E
    yields D^{mu^E} whose player-1 labels fit mu_hat.
    """
    dyn = _dynamics(game)
    check_pair(dyn, experts)
    start = warm_start(dyn, experts, cfg)
    ledger = QueryLedger()
    datasets = {}
    fitted = {}
    for fixed in (P2, P1):
        rng = np.random.default_rng(derive_seed(cfg.seed, "mail-warm", "collect", fixed))
        data = collect_exploratory(dyn, experts.policy(fixed), fixed, start.by_fixed(fixed), cfg.n, rng)
        datasets[fixed] = data
        fitted[fixed] = bc_fit(data, fixed, dyn.n_states, dyn.n_actions(fixed)).as_stage_policy()
        ledger.add("warmup", fixed, start.by_fixed(fixed).queries)
        ledger.add("collection", fixed, data.queries(fixed))
    return MailWarmResult(PolicyPair(fitted[P1], fitted[P2]), ledger, datasets)


@dataclass(frozen=True)
class MurmailConfig:
    n_iters: int = 100
    eta: float = 50.0
    inner_episodes: int = 10
    batch_size: int = 100
    seed: int = 0
    output: str = "uniform"
    planner: str = "exact"
    state_sampling: str = "rollout"
    epsilon: float = 0.1

    def __post_init__(self):
        if self.n_iters < 1 or self.inner_episodes < 1 or self.batch_size < 1:
            raise ValueError("n_iters, inner_episodes and batch_size must be positive")
        if self.eta < 0:
            raise ValueError(f"eta must be non-negative, got {self.eta}")
        if self.output not in OUTPUT_MODES:
            raise ValueError(f"unknown output mode {self.output!r}; expected one of {OUTPUT_MODES}")
        if self.planner not in PLANNERS:
            raise ValueError(f"unknown planner {self.planner!r}; expected one of {PLANNERS}")
        if self.state_sampling not in STATE_SAMPLING:
            raise ValueError(f"unknown state sampling {self.state_sampling!r}; expected one of {STATE_SAMPLING}")

    def queries_per_iteration(self, horizon: int) -> int:
        """Expert actions drawn per iteration for both players together."""
        per_player = 3 * self.batch_size
        if self.planner == "sample":
            per_player += 2 * self.inner_episodes * horizon
        return 2 * per_player


@dataclass(frozen=True, eq=False)
class MurmailResult:
    pair: PolicyPair
    ledger: QueryLedger


class _UncertaintyStats:
    """Running expert-draw statistics per (h, s) for the plug-in uncertainty reward."""

    def __init__(self, horizon: int, n_states: int, n_actions: int):
        self.hist = np.zeros((horizon, n_states, n_actions))
        self.pairs = np.zeros((horizon, n_states))
        self.collisions = np.zeros((horizon, n_states))

    def update(self, stages: np.ndarray, states: np.ndarray, first: np.ndarray, second: np.ndarray) -> None:
        np.add.at(self.hist, (stages, states, first), 1.0)
        np.add.at(self.pairs, (stages, states), 1.0)
        np.add.at(self.collisions, (stages, states), (first == second).astype(float))

    def reward(self, policy: np.ndarray) -> np.ndarray:
        """Estimate of ||pi(.|s) - pi^E(.|s)||^2; unseen (h, s) get the maximal value 2."""
        seen = self.pairs > 0
        pairs = np.maximum(self.pairs, 1.0)
        collision_rate = self.collisions / pairs
        expert_freq = self.hist / pairs[..., None]
        estimate = collision_rate - 2.0 * np.sum(policy * expert_freq, axis=-1) + np.sum(policy ** 2, axis=-1)
        return np.where(seen, estimate, 2.0)


def uncertainty_reward_draw(policy_rows: np.ndarray, first: np.ndarray, second: np.ndarray) -> np.ndarray:
    """One-sample uncertainty reward 1{A_E = A_E'} - 2 pi(A_E | s) + ||pi(. | s)||^2."""
    idx = np.arange(len(first))
    return (first == second).astype(float) - 2.0 * policy_rows[idx, first] + np.sum(policy_rows ** 2, axis=-1)


def _sample_states(dyn: GameDynamics, pair: PolicyPair, n: int, mode: str,
                   rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    stages = rng.integers(dyn.horizon, size=n)
    if mode == "exact":
        occ = occupancy(dyn, pair).state
        states = sample_categorical(rng, occ[stages])
        return stages, states
    traj, _, _ = simulate(dyn, policy_chooser(pair.mu, rng), policy_chooser(pair.nu, rng), n, rng)
    return stages, traj[np.arange(n), stages]


class _Murmail:
    def __init__(self, dyn: GameDynamics, experts: PolicyPair, cfg: MurmailConfig):
        self.dyn = dyn
        self.experts = experts
        self.cfg = cfg
        self.rng = np.random.default_rng(derive_seed(cfg.seed, "murmail", "run"))
        H, S = dyn.horizon, dyn.n_states
        self.current = {p: StagePolicy.uniform(H, S, dyn.n_actions(p)).probs.copy() for p in (P1, P2)}
        self.stats = {p: _UncertaintyStats(H, S, dyn.n_actions(p)) for p in (P1, P2)}
        self.ledger = QueryLedger()

    def _response(self, learner: int) -> StagePolicy:
        """Uncertainty response: the opponent policy steering play toward poorly imitated states."""
        dyn, cfg = self.dyn, self.cfg
        responder = other_player(learner)
        policy = StagePolicy(self.current[learner])
        transition = induced_transition(dyn, learner, policy)
        H, S = dyn.horizon, dyn.n_states
        n_resp = dyn.n_actions(responder)
        if cfg.planner == "exact":
            reward = np.repeat(self.stats[learner].reward(self.current[learner])[..., None], n_resp, axis=-1)
            return best_response(InducedMdp(transition, reward, dyn.initial_dist)).policy
        expert = self.experts.policy(learner).probs
        current = self.current[learner]
        stats = self.stats[learner]

        def drawn_reward(h, s, a):
            first = sample_categorical(self.rng, expert[h, s])
            second = sample_categorical(self.rng, expert[h, s])
            stats.update(np.full(len(s), h), s, first, second)
            return uncertainty_reward_draw(current[h, s], first, second)

        snapshots, _ = run_qlearning(transition, dyn.initial_dist, drawn_reward, 1, cfg.inner_episodes, 1,
                                     cfg.epsilon, self.rng, q_scale=2.0)
        self.ledger.add("planner", learner, 2 * cfg.inner_episodes * H)
        return StagePolicy.deterministic(snapshots[0, -1], n_resp)

    def _update(self, learner: int, response: StagePolicy) -> None:
        dyn, cfg = self.dyn, self.cfg
        H, S = dyn.horizon, dyn.n_states
        n_act = dyn.n_actions(learner)
        current = self.current[learner]
        play = PolicyPair(StagePolicy(current), response) if learner == P1 else PolicyPair(response,
                                                                                               StagePolicy(current))
        stages, states = _sample_states(dyn, play, cfg.batch_size, cfg.state_sampling, self.rng)
        expert = self.experts.policy(learner).probs[stages, states]
        first = sample_categorical(self.rng, expert)
        second = sample_categorical(self.rng, expert)
        labels = sample_categorical(self.rng, expert)
        self.stats[learner].update(stages, states, first, second)
        self.ledger.add("reward", learner, 2 * cfg.batch_size)
        self.ledger.add("update", learner, cfg.batch_size)

        grad = np.zeros((H, S, n_act))
        np.add.at(grad, (stages, states), current[stages, states])
        np.add.at(grad, (stages, states, labels), -1.0)
        grad /= cfg.batch_size
        logits = np.log(np.maximum(current, 1e-300)) - cfg.eta * grad
        logits -= logits.max(axis=-1, keepdims=True)
        updated = np.exp(logits)
        self.current[learner] = updated / updated.sum(axis=-1, keepdims=True)

    def step(self) -> None:
        responses = {learner: self._response(learner) for learner in (P1, P2)}
        for learner in (P1, P2):
            self._update(learner, responses[learner])


def _select(iterates: List[np.ndarray], last: np.ndarray, mode: str, index: int) -> np.ndarray:
    if mode == "last":
        return last
    if mode == "average":
        return np.mean(iterates, axis=0)
    return iterates[index]


def murmail_path(game: GameDynamics, experts: PolicyPair, cfg: MurmailConfig,
                 checkpoints: Sequence[int]) -> Iterator[Tuple[int, PolicyPair, QueryLedger]]:
    """Run MURMAIL for max(checkpoints) iterations, emitting an output pair at each checkpoint.

    At checkpoint k the output is built from the iterates mu_1..mu_k (mu_1 uniform) as
    selected by cfg.output: a uniformly drawn iterate, the last update, or the average.
    """
    dyn = _dynamics(game)
    check_pair(dyn, experts)
    if not checkpoints or min(checkpoints) < 1:
        raise ValueError("iteration checkpoints must be positive")
    wanted = sorted(set(int(k) for k in checkpoints))
    run = _Murmail(dyn, experts, cfg)
    pick_rng = np.random.default_rng(derive_seed(cfg.seed, "murmail", "output"))
    history = {P1: [], P2: []}
    for k in range(1, wanted[-1] + 1):
        for p in (P1, P2):
            history[p].append(run.current[p].copy())
        run.step()
        if k in wanted:
            # both players output the same iteration
            index = int(pick_rng.integers(k)) if cfg.output == "uniform" else k - 1
            mu = _select(history[P1], run.current[P1], cfg.output, index)
            nu = _select(history[P2], run.current[P2], cfg.output, index)
            logger.debug("murmail iteration=%d queries=%d", k, run.ledger.total())
            yield k, PolicyPair(StagePolicy(mu), StagePolicy(nu)), run.ledger.copy()


def murmail(game: GameDynamics, experts: PolicyPair, cfg: MurmailConfig) -> MurmailResult:
    """Maximum-uncertainty-response imitation with exponentiated-gradient updates."""
    for _, pair, ledger in murmail_path(game, experts, cfg, [cfg.n_iters]):
        return MurmailResult(pair, ledger)
    raise RuntimeError("murmail produced no output")
