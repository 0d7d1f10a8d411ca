"""Reward-free warm-up: reachability planning in the expert-induced MDP.

For every target (s, h) an indicator-reward problem is solved in the MDP induced by the
fixed expert, either with EULER or with a tabular Q-learning planner. The resulting
policies are made uniform from their target stage on and pooled into a PolicySet whose
uniform mixture drives the exploratory data collection.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

from game_core import (P1, GameDynamics, InducedMdp, StagePolicy, check_policy, induced_transition,
                       max_visitation_table, other_player, policy_chooser, sample_categorical, simulate)
from imitation import RngLike, TrajectoryDataset
from seeding import make_rng

logger = logging.getLogger("mailbench.reward_free")

BACKENDS = ("qlearning", "euler")


@dataclass(frozen=True)
class EulerConstants:
    delta_prime: float
    log_term: float
    b_p: float
    b_v: float
    j: float


@dataclass(frozen=True)
class EulerConfig:
    n_episodes: int = 50
    delta: float = 0.1

    def __post_init__(self):
        if self.n_episodes < 1:
            raise ValueError(f"n_episodes must be at least 1, got {self.n_episodes}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")

    def constants(self, n_states: int, n_actions: int, horizon: int) -> EulerConstants:
        # J is read as (H / 3) * ln(4 S A N0 / delta')
        delta_prime = self.delta / 7.0
        log_term = float(np.log(4.0 * n_states * n_actions * self.n_episodes / delta_prime))
        return EulerConstants(
            delta_prime=delta_prime,
            log_term=log_term,
            b_p=horizon * np.sqrt(2.0 * log_term),
            b_v=np.sqrt(2.0 * log_term),
            j=horizon / 3.0 * log_term,
        )


@dataclass(frozen=True, eq=False)
class EulerResult:
    actions: np.ndarray
    optimistic_values: np.ndarray

    @property
    def n_episodes(self) -> int:
        return len(self.optimistic_values)


def _euler_plan(mdp: InducedMdp, counts: np.ndarray, trans: np.ndarray,
                const: EulerConstants) -> Tuple[np.ndarray, np.ndarray]:
    H, S = mdp.horizon, mdp.n_states
    L = const.log_term
    V_up = np.zeros((H + 1, S))
    V_low = np.zeros((H + 1, S))
    actions = np.zeros((H, S), dtype=int)
    rows = np.arange(S)
    for h in reversed(range(H)):
        n = counts[h]
        visited = n > 0
        n_safe = np.maximum(n, 1)
        p_hat = trans[h] / n_safe[..., None]
        nxt = p_hat @ V_up[h + 1]
        var = np.maximum(p_hat @ V_up[h + 1] ** 2 - nxt ** 2, 0.0)
        bonus = np.sqrt(2.0 * var * L / n_safe) + H * L / (3.0 * np.maximum(n - 1, 1))
        spread = np.sqrt(p_hat @ (V_up[h + 1] - V_low[h + 1]) ** 2)
        B = bonus + ((4.0 * const.j + const.b_p) / np.sqrt(n_safe) + const.b_v * spread) / np.sqrt(n_safe)
        cap = float(H - h)
        Q = np.where(visited, np.minimum(cap, mdp.reward[h] + nxt + B), cap)
        actions[h] = np.argmax(Q, axis=-1)
        V_up[h] = Q[rows, actions[h]]
        low = np.where(visited, mdp.reward[h] + p_hat @ V_low[h + 1] - B, 0.0)
        V_low[h] = np.maximum(0.0, low[rows, actions[h]])
    return actions, V_up


def euler(mdp: InducedMdp, cfg: EulerConfig, rng: RngLike = None) -> EulerResult:
    """EULER on a known-reward induced MDP.

    Episode 1 plays the uniform policy; every later episode plays the greedy policy of
    the optimistic Q built from all earlier episodes. Unvisited (s, a) get the maximal
    value H - h, and the (N - 1) denominator of the variance bonus is floored at 1.

    Returns:
        EulerResult with the played policies as an (N0, H, S) action table (-1 = uniform)
        and the optimistic initial value <d0, V_up_0> behind each policy.
    """
    gen, _ = make_rng(rng)
    H, S, A = mdp.horizon, mdp.n_states, mdp.n_actions
    const = cfg.constants(S, A, H)
    counts = np.zeros((H, S, A), dtype=np.int64)
    trans = np.zeros((H, S, A, S))
    played = np.zeros((cfg.n_episodes, H, S), dtype=np.int16)
    values = np.zeros(cfg.n_episodes)
    for k in range(cfg.n_episodes):
        actions, V_up = _euler_plan(mdp, counts, trans, const)
        values[k] = mdp.initial_dist @ V_up[0]
        if k == 0:
            actions = np.full((H, S), -1)
        played[k] = actions
        s = int(sample_categorical(gen, mdp.initial_dist[None])[0])
        for h in range(H):
            a = int(actions[h, s]) if actions[h, s] >= 0 else int(gen.integers(A))
            s_next = int(sample_categorical(gen, mdp.transition[h, s, a][None])[0])
            counts[h, s, a] += 1
            trans[h, s, a, s_next] += 1.0
            s = s_next
    return EulerResult(played, values)


RewardFn = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


def run_qlearning(transition: np.ndarray, initial_dist: np.ndarray, reward_fn: RewardFn, n_tasks: int,
                  n_episodes: int, n_snapshots: int, epsilon: float, rng: np.random.Generator,
                  q_scale: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Episodic tabular Q-learning for several reward functions over one MDP, in lock-step.

    Q starts optimistic at q_scale * (H - h), the behavior is epsilon-greedy with lowest
    index tie-breaking and the step size is 1 / visit count.

    Args:
        reward_fn: (stage, states, actions) -> reward per task, arrays of length n_tasks.

    Returns:
        (snapshots, returns): greedy (H, S) action tables after each of the last
        `n_snapshots` episodes, shape (n_tasks, n_snapshots, H, S), and the summed reward
        each task collected.
    """
    if not 1 <= n_snapshots <= n_episodes:
        raise ValueError(f"need 1 <= n_snapshots <= n_episodes, got {n_snapshots} and {n_episodes}")
    H, S, A = transition.shape[:3]
    tasks = np.arange(n_tasks)
    Q = np.zeros((n_tasks, H + 1, S, A))
    Q[:, :H] = q_scale * (H - np.arange(H))[None, :, None, None]
    counts = np.zeros((n_tasks, H, S, A), dtype=np.int64)
    snapshots = np.zeros((n_tasks, n_snapshots, H, S), dtype=np.int16)
    returns = np.zeros(n_tasks)
    first_snapshot = n_episodes - n_snapshots
    d0 = np.broadcast_to(initial_dist, (n_tasks, S))
    for episode in range(n_episodes):
        s = sample_categorical(rng, d0)
        for h in range(H):
            greedy = np.argmax(Q[tasks, h, s], axis=-1)
            explore = rng.random(n_tasks) < epsilon
            a = np.where(explore, rng.integers(A, size=n_tasks), greedy)
            r = reward_fn(h, s, a)
            s_next = sample_categorical(rng, transition[h, s, a])
            target = r + Q[tasks, h + 1, s_next].max(axis=-1)
            counts[tasks, h, s, a] += 1
            Q[tasks, h, s, a] += (target - Q[tasks, h, s, a]) / counts[tasks, h, s, a]
            returns += r
            s = s_next
        if episode >= first_snapshot:
            snapshots[:, episode - first_snapshot] = np.argmax(Q[:, :H], axis=-1)
    return snapshots, returns


def qlearning_planner(mdp: InducedMdp, n_iters: int = 100, rng: RngLike = None,
                      epsilon: float = 0.1) -> StagePolicy:
    """Greedy policy after `n_iters` episodes of optimistic Q-learning on `mdp`."""
    if n_iters < 1:
        raise ValueError(f"n_iters must be at least 1, got {n_iters}")
    gen, _ = make_rng(rng)

    def reward(h, s, a):
        return mdp.reward[h, s, a]

    snapshots, _ = run_qlearning(mdp.transition, mdp.initial_dist, reward, 1, n_iters, 1, epsilon, gen)
    return StagePolicy.deterministic(snapshots[0, -1], mdp.n_actions)


def action_probs(actions: np.ndarray, n_actions: int) -> np.ndarray:
    """Expand an action table (-1 = uniform) into probability vectors along a new last axis."""
    probs = (actions[..., None] == np.arange(n_actions)).astype(float)
    probs[actions < 0] = 1.0 / n_actions
    return probs


@dataclass(frozen=True, eq=False)
class PolicySet:
    """Warm-up policies of the free player as an (n, H, S) action table, -1 meaning uniform.

    `targets[i]` is the (state, stage) policy i was trained for, `episodes[i]` its episode
    index within that target, and `queries` the expert actions consumed while training.
    """

    actions: np.ndarray
    targets: np.ndarray
    episodes: np.ndarray
    n_actions: int
    queries: int = 0

    def __len__(self) -> int:
        return self.actions.shape[0]

    def policy(self, index: int) -> StagePolicy:
        return StagePolicy(action_probs(self.actions[index], self.n_actions))

    def uniform_from_target(self) -> bool:
        """Every policy is uniform at and after its target stage."""
        stages = np.arange(self.actions.shape[1])
        after = stages[None, :] >= self.targets[:, 1:2]
        return bool(np.all(self.actions[after] < 0))


@dataclass(frozen=True, eq=False)
class MixtureDistribution:
    """p_h(s, a): state-action distribution of the uniform mixture over a PolicySet."""

    p: np.ndarray

    def state_marginal(self) -> np.ndarray:
        return self.p.sum(axis=-1)


def _targets(horizon: int, n_states: int) -> List[Tuple[int, int]]:
    return [(s, h) for s in range(n_states) for h in range(horizon)]


def warmup(game: GameDynamics, expert: StagePolicy, fixed_player: int, n0: int, backend: str = "qlearning",
           rng: RngLike = None, n_iters: int = 100, epsilon: float = 0.1, skip_unreachable: bool = True,
           euler_delta: float = 0.1) -> PolicySet:
    """Solve one reachability problem per (s, h) in the MDP induced by `expert`.

    Each target contributes n0 policies: EULER's episode policies or the Q-learning greedy
    snapshots after each of the last n0 of max(n_iters, n0) episodes. Targets the known
    model proves unreachable are skipped and contribute uniform policies unless
    `skip_unreachable` is off. Every policy is overwritten with uniform from its target
    stage on. Expert queries are H per training episode.
    """
    if n0 < 1:
        raise ValueError(f"n0 must be at least 1, got {n0}")
    if backend not in BACKENDS:
        raise ValueError(f"unknown warm-up backend {backend!r}; expected one of {BACKENDS}")
    check_policy(game, fixed_player, expert)
    gen, _ = make_rng(rng)
    H, S = game.horizon, game.n_states
    n_free = game.n_actions(other_player(fixed_player))
    transition = induced_transition(game, fixed_player, expert)
    base = InducedMdp(transition, np.zeros((H, S, n_free)), game.initial_dist, exploration=True)
    reach = max_visitation_table(base)

    targets = _targets(H, S)
    active = [t for t in targets if not skip_unreachable or reach[t[1], t[0]] > 0.0]
    blocks = {t: np.full((n0, H, S), -1, dtype=np.int16) for t in targets}
    episodes_used = {t: 0 for t in targets}
    hit_rate = {t: 0.0 for t in targets}

    if active and backend == "qlearning":
        n_episodes = max(n_iters, n0)
        target_s = np.array([t[0] for t in active])
        target_h = np.array([t[1] for t in active])

        def indicator(h, s, a):
            return ((s == target_s) & (target_h == h)).astype(float)

        snapshots, returns = run_qlearning(transition, game.initial_dist, indicator, len(active),
                                           n_episodes, n0, epsilon, gen)
        for i, t in enumerate(active):
            blocks[t] = snapshots[i]
            episodes_used[t] = n_episodes
            hit_rate[t] = returns[i] / n_episodes
    elif active:
        cfg = EulerConfig(n_episodes=n0, delta=euler_delta)
        for s, h in active:
            reward = np.zeros((H, S, n_free))
            reward[h, s, :] = 1.0
            result = euler(base.with_reward(reward, exploration=True), cfg, gen)
            blocks[(s, h)] = result.actions
            episodes_used[(s, h)] = n0
            hit_rate[(s, h)] = float(result.optimistic_values[-1])

    actions = np.zeros((len(targets) * n0, H, S), dtype=np.int16)
    target_rows = np.zeros((len(targets) * n0, 2), dtype=np.int64)
    for i, (s, h) in enumerate(targets):
        block = np.array(blocks[(s, h)], dtype=np.int16)
        block[:, h:, :] = -1
        actions[i * n0:(i + 1) * n0] = block
        target_rows[i * n0:(i + 1) * n0] = (s, h)
        logger.debug("warmup target=(%d,%d) episodes=%d reach=%.4f estimate=%.4f",
                     s, h, episodes_used[(s, h)], reach[h, s], hit_rate[(s, h)])
    total_episodes = sum(episodes_used.values())
    logger.info("warmup player=%d backend=%s targets=%d active=%d episodes=%d",
                other_player(fixed_player), backend, len(targets), len(active), total_episodes)
    episode_index = np.tile(np.arange(n0), len(targets))
    return PolicySet(actions, target_rows, episode_index, n_free, total_episodes * H)


def mixture_distribution(game: GameDynamics, expert: StagePolicy, fixed_player: int,
                         policy_set: PolicySet) -> MixtureDistribution:
    """Exact p_h(s, a) = |Psi|^-1 sum over Psi of d_h(s) pi_h(a | s) in the induced MDP.

    Identical policies are merged first; occupancies of the distinct ones are propagated
    together as one batched matrix product per stage.
    """
    if len(policy_set) == 0:
        raise ValueError("policy set is empty")
    transition = induced_transition(game, fixed_player, expert)
    H, S, A = transition.shape[:3]
    n = len(policy_set)
    unique, counts = np.unique(policy_set.actions.reshape(n, -1), axis=0, return_counts=True)
    weights = counts / n
    unique = unique.reshape(-1, H, S)
    d = np.broadcast_to(game.initial_dist, (len(unique), S))
    p = np.zeros((H, S, A))
    for h in range(H):
        joint = d[:, :, None] * action_probs(unique[:, h], A)
        p[h] = np.tensordot(weights, joint, axes=1)
        d = joint.reshape(len(unique), S * A) @ transition[h].reshape(S * A, S)
    return MixtureDistribution(p)


def collect_exploratory(game: GameDynamics, expert: StagePolicy, fixed_player: int, policy_set: PolicySet,
                        n: int, rng: RngLike = None) -> TrajectoryDataset:
    """n trajectories, each pairing a policy drawn uniformly from the set with the expert.

    Only the fixed expert is queried: H actions per trajectory.
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if len(policy_set) == 0:
        raise ValueError("policy set is empty")
    check_policy(game, fixed_player, expert)
    gen, seed = make_rng(rng)
    chosen = gen.integers(len(policy_set), size=n)
    n_free = policy_set.n_actions

    def choose_free(h, states):
        acts = policy_set.actions[chosen, h, states].astype(int)
        return np.where(acts < 0, gen.integers(n_free, size=len(states)), acts)

    choose_expert = policy_chooser(expert, gen)
    if fixed_player == P1:
        states, a, b = simulate(game, choose_expert, choose_free, n, gen)
        q1, q2 = n * game.horizon, 0
    else:
        states, a, b = simulate(game, choose_free, choose_expert, n, gen)
        q1, q2 = 0, n * game.horizon
    H = game.horizon
    stages = np.broadcast_to(np.arange(H), (n, H))
    return TrajectoryDataset(stages.ravel(), states.ravel(), a.ravel(), b.ravel(), H, q1, q2, seed)
