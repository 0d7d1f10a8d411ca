"""Finite-horizon two-player zero-sum Markov games and the dynamic-programming primitives.

Stages are indexed 0..H-1 and V_H is identically zero. Rewards are player-1 payoffs;
player 2 receives their negation. All containers are immutable after construction:
arrays are copied, validated and marked read-only.

Tensor layout:
    transition  (H, S, A, B, S)   P_h(s' | s, a, b)
    reward      (H, S, A, B)      r_h(s, a, b)
    initial     (S,)              d0
    policies    (H, S, n_actions) pi_h(a | s)
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

logger = logging.getLogger("mailbench.game_core")

P1 = 1
P2 = 2

ROW_TOL = 1e-12


def other_player(player: int) -> int:
    check_player(player)
    return P2 if player == P1 else P1


def check_player(player: int) -> None:
    if player not in (P1, P2):
        raise ValueError(f"player must be {P1} or {P2}, got {player!r}")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def as_distribution(values, name: str, tol: float = ROW_TOL) -> np.ndarray:
    """Validate that the last axis of `values` holds probability vectors.

    Rows within `tol` of summing to one are renormalized; anything else is rejected.

    Raises:
        ValueError: on non-finite or negative entries, or rows that do not sum to one.
    """
    arr = np.array(values, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] == 0:
        raise ValueError(f"{name} must have a non-empty last axis")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    if np.any(arr < 0.0):
        raise ValueError(f"{name} contains negative entries")
    sums = arr.sum(axis=-1, keepdims=True)
    worst = float(np.max(np.abs(sums - 1.0)))
    if worst > tol:
        raise ValueError(f"{name} rows must sum to 1 (worst deviation {worst:.3e})")
    return arr / sums


@dataclass(frozen=True, eq=False)
class GameDynamics:
    """Reward-free view of a Markov game: transitions and initial distribution only."""

    transition: np.ndarray
    initial_dist: np.ndarray

    def __post_init__(self):
        P = as_distribution(self.transition, "transition")
        if P.ndim != 5 or P.shape[1] != P.shape[4]:
            raise ValueError(f"transition must have shape (H, S, A, B, S), got {P.shape}")
        d0 = as_distribution(self.initial_dist, "initial_dist")
        if d0.shape != (P.shape[1],):
            raise ValueError(f"initial_dist must have shape ({P.shape[1]},), got {d0.shape}")
        object.__setattr__(self, "transition", _frozen(P))
        object.__setattr__(self, "initial_dist", _frozen(d0))

    @property
    def horizon(self) -> int:
        return self.transition.shape[0]

    @property
    def n_states(self) -> int:
        return self.transition.shape[1]

    @property
    def n_actions_p1(self) -> int:
        return self.transition.shape[2]

    @property
    def n_actions_p2(self) -> int:
        return self.transition.shape[3]

    def n_actions(self, player: int) -> int:
        check_player(player)
        return self.n_actions_p1 if player == P1 else self.n_actions_p2

    def dynamics(self) -> "GameDynamics":
        return GameDynamics(self.transition, self.initial_dist)


@dataclass(frozen=True, eq=False)
class MarkovGame(GameDynamics):
    """Two-player zero-sum Markov game with a declared reward bound r_max."""

    reward: np.ndarray = None
    r_max: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        if self.reward is None:
            raise ValueError("reward is required")
        R = np.array(self.reward, dtype=float)
        expected = self.transition.shape[:4]
        if R.shape != expected:
            raise ValueError(f"reward must have shape {expected}, got {R.shape}")
        if not np.all(np.isfinite(R)):
            raise ValueError("reward contains non-finite entries")
        if not (self.r_max > 0 and np.isfinite(self.r_max)):
            raise ValueError(f"r_max must be positive and finite, got {self.r_max}")
        if np.any(np.abs(R) > self.r_max + ROW_TOL):
            raise ValueError(f"rewards exceed the declared bound r_max={self.r_max}")
        object.__setattr__(self, "reward", _frozen(R))
        object.__setattr__(self, "r_max", float(self.r_max))

    def with_reward(self, reward: np.ndarray, r_max: Optional[float] = None) -> "MarkovGame":
        return MarkovGame(self.transition, self.initial_dist, reward, self.r_max if r_max is None else r_max)


def strip_rewards(game: GameDynamics) -> GameDynamics:
    """Return the reward-free dynamics of a game (a no-op for plain dynamics)."""
    return GameDynamics(game.transition, game.initial_dist)


@dataclass(frozen=True, eq=False)
class StagePolicy:
    """Stage-indexed stochastic policy, probs[h, s, a] = pi_h(a | s)."""

    probs: np.ndarray

    def __post_init__(self):
        probs = as_distribution(self.probs, "policy")
        if probs.ndim != 3:
            raise ValueError(f"policy must have shape (H, S, n_actions), got {probs.shape}")
        object.__setattr__(self, "probs", _frozen(probs))

    @property
    def horizon(self) -> int:
        return self.probs.shape[0]

    @property
    def n_states(self) -> int:
        return self.probs.shape[1]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[2]

    @classmethod
    def uniform(cls, horizon: int, n_states: int, n_actions: int) -> "StagePolicy":
        return cls(np.full((horizon, n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions: np.ndarray, n_actions: int) -> "StagePolicy":
        """Build a policy from an (H, S) action table; entries of -1 mean uniform."""
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros(actions.shape + (n_actions,))
        uniform = actions < 0
        probs[uniform] = 1.0 / n_actions
        h_idx, s_idx = np.nonzero(~uniform)
        probs[h_idx, s_idx, actions[h_idx, s_idx]] = 1.0
        return cls(probs)

    def is_deterministic(self) -> bool:
        return bool(np.all(np.isclose(self.probs.max(axis=-1), 1.0, atol=ROW_TOL)))


@dataclass(frozen=True, eq=False)
class PolicyPair:
    mu: StagePolicy
    nu: StagePolicy

    def __post_init__(self):
        if self.mu.horizon != self.nu.horizon:
            raise ValueError(f"horizon mismatch: mu has {self.mu.horizon}, nu has {self.nu.horizon}")
        if self.mu.n_states != self.nu.n_states:
            raise ValueError(f"state count mismatch: mu has {self.mu.n_states}, nu has {self.nu.n_states}")

    def policy(self, player: int) -> StagePolicy:
        check_player(player)
        return self.mu if player == P1 else self.nu

    def replace(self, player: int, policy: StagePolicy) -> "PolicyPair":
        check_player(player)
        return PolicyPair(policy, self.nu) if player == P1 else PolicyPair(self.mu, policy)


@dataclass(frozen=True, eq=False)
class InducedMdp:
    """Single-agent MDP seen by the free player when the other player is frozen."""

    transition: np.ndarray
    reward: np.ndarray
    initial_dist: np.ndarray
    exploration: bool = False

    def __post_init__(self):
        P = as_distribution(self.transition, "induced transition")
        if P.ndim != 4 or P.shape[1] != P.shape[3]:
            raise ValueError(f"induced transition must have shape (H, S, A, S), got {P.shape}")
        R = np.array(self.reward, dtype=float)
        if R.shape != P.shape[:3]:
            raise ValueError(f"induced reward must have shape {P.shape[:3]}, got {R.shape}")
        if not np.all(np.isfinite(R)):
            raise ValueError("induced reward contains non-finite entries")
        if self.exploration and not np.all((R == 0.0) | (R == 1.0)):
            raise ValueError("exploration rewards must be exactly 0 or 1")
        d0 = as_distribution(self.initial_dist, "initial_dist")
        if d0.shape != (P.shape[1],):
            raise ValueError(f"initial_dist must have shape ({P.shape[1]},), got {d0.shape}")
        object.__setattr__(self, "transition", _frozen(P))
        object.__setattr__(self, "reward", _frozen(R))
        object.__setattr__(self, "initial_dist", _frozen(d0))

    @property
    def horizon(self) -> int:
        return self.transition.shape[0]

    @property
    def n_states(self) -> int:
        return self.transition.shape[1]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[2]

    def with_reward(self, reward: np.ndarray, exploration: bool = False) -> "InducedMdp":
        return InducedMdp(self.transition, reward, self.initial_dist, exploration)


@dataclass(frozen=True, eq=False)
class OccupancyTable:
    """Per-stage state occupancies and their action refinement.

    `state` has shape (H, S); `joint` has shape (H, S, A, B) for games and (H, S, A) for
    induced MDPs.
    """

    state: np.ndarray
    joint: np.ndarray


@dataclass(frozen=True, eq=False)
class BestResponse:
    policy: StagePolicy
    value: float
    q: np.ndarray
    values: np.ndarray
    actions: np.ndarray


def check_pair(game: GameDynamics, pair: PolicyPair) -> None:
    expected_mu = (game.horizon, game.n_states, game.n_actions_p1)
    expected_nu = (game.horizon, game.n_states, game.n_actions_p2)
    if pair.mu.probs.shape != expected_mu:
        raise ValueError(f"mu has shape {pair.mu.probs.shape}, game expects {expected_mu}")
    if pair.nu.probs.shape != expected_nu:
        raise ValueError(f"nu has shape {pair.nu.probs.shape}, game expects {expected_nu}")


def check_policy(game: GameDynamics, player: int, policy: StagePolicy) -> None:
    expected = (game.horizon, game.n_states, game.n_actions(player))
    if policy.probs.shape != expected:
        raise ValueError(f"policy for player {player} has shape {policy.probs.shape}, expected {expected}")


def evaluate(game: MarkovGame, pair: PolicyPair) -> Tuple[np.ndarray, np.ndarray]:
    """Evaluate a policy pair by backward induction.

    Returns:
        (V, Q) with V of shape (H+1, S), V[H] = 0, and Q of shape (H, S, A, B).
    """
    check_pair(game, pair)
    H, S = game.horizon, game.n_states
    V = np.zeros((H + 1, S))
    Q = np.zeros(game.reward.shape)
    for h in reversed(range(H)):
        Q[h] = game.reward[h] + game.transition[h] @ V[h + 1]
        V[h] = np.einsum("sa,sb,sab->s", pair.mu.probs[h], pair.nu.probs[h], Q[h])
    return V, Q


def game_value(game: MarkovGame, pair: PolicyPair) -> float:
    V, _ = evaluate(game, pair)
    return float(game.initial_dist @ V[0])


def occupancy(game: GameDynamics, pair: PolicyPair) -> OccupancyTable:
    """Forward occupancy DP: d_0 = d0, d_{h+1}(s') = sum d_h(s) mu(a|s) nu(b|s) P_h(s'|s,a,b)."""
    check_pair(game, pair)
    H, S = game.horizon, game.n_states
    state = np.zeros((H, S))
    joint = np.zeros((H, S, game.n_actions_p1, game.n_actions_p2))
    d = game.initial_dist.copy()
    for h in range(H):
        state[h] = d
        joint[h] = d[:, None, None] * pair.mu.probs[h][:, :, None] * pair.nu.probs[h][:, None, :]
        d = np.einsum("sab,sabt->t", joint[h], game.transition[h])
    return OccupancyTable(_frozen(state), _frozen(joint))


def induced_transition(game: GameDynamics, fixed_player: int, policy: StagePolicy) -> np.ndarray:
    """Marginalize the fixed player's policy into the transitions, shape (H, S, n_free, S)."""
    check_policy(game, fixed_player, policy)
    if fixed_player == P2:
        return np.einsum("hsb,hsabt->hsat", policy.probs, game.transition)
    return np.einsum("hsa,hsabt->hsbt", policy.probs, game.transition)


def free_player_reward(game: MarkovGame, fixed_player: int, policy: StagePolicy) -> np.ndarray:
    """Expected stage reward seen by the free player, from its own (maximizing) perspective."""
    check_policy(game, fixed_player, policy)
    if fixed_player == P2:
        return np.einsum("hsb,hsab->hsa", policy.probs, game.reward)
    return -np.einsum("hsa,hsab->hsb", policy.probs, game.reward)


def induce_mdp(game: GameDynamics, fixed_player: int, policy: StagePolicy,
               reward: Optional[np.ndarray] = None, exploration: bool = False) -> InducedMdp:
    """Freeze `fixed_player` to `policy` and return the MDP of the other player.

    `reward` is attached unchanged; when omitted the game's own reward is marginalized
    from the free player's perspective (requires a full MarkovGame).
    """
    P = induced_transition(game, fixed_player, policy)
    if reward is None:
        if not isinstance(game, MarkovGame):
            raise ValueError("a reward table is required when inducing from reward-free dynamics")
        reward = free_player_reward(game, fixed_player, policy)
    reward = np.asarray(reward, dtype=float)
    if reward.shape != P.shape[:3]:
        raise ValueError(f"reward must have shape {P.shape[:3]} for the free player, got {reward.shape}")
    return InducedMdp(P, reward, game.initial_dist, exploration)


def best_response(mdp: InducedMdp, allowed: Optional[np.ndarray] = None) -> BestResponse:
    """Deterministic optimal policy of an induced MDP by backward induction.

    Ties are broken by the lowest action index. `allowed` optionally restricts the
    action set per (h, s) with a boolean (H, S, A) mask; every (h, s) needs one action.
    """
    H, S, A = mdp.horizon, mdp.n_states, mdp.n_actions
    if allowed is not None:
        allowed = np.asarray(allowed, dtype=bool)
        if allowed.shape != (H, S, A):
            raise ValueError(f"allowed mask must have shape {(H, S, A)}, got {allowed.shape}")
        if not np.all(allowed.any(axis=-1)):
            raise ValueError("allowed mask leaves some (stage, state) without actions")
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A))
    actions = np.zeros((H, S), dtype=int)
    for h in reversed(range(H)):
        Q[h] = mdp.reward[h] + mdp.transition[h] @ V[h + 1]
        q = Q[h] if allowed is None else np.where(allowed[h], Q[h], -np.inf)
        actions[h] = np.argmax(q, axis=-1)
        V[h] = q[np.arange(S), actions[h]]
    value = float(mdp.initial_dist @ V[0])
    return BestResponse(StagePolicy.deterministic(actions, A), value, _frozen(Q), _frozen(V), _frozen(actions))


def indicator_reward(mdp: InducedMdp, target_state: int, target_stage: int) -> np.ndarray:
    if not 0 <= target_stage < mdp.horizon:
        raise ValueError(f"target stage must lie in [0, {mdp.horizon}), got {target_stage}")
    if not 0 <= target_state < mdp.n_states:
        raise ValueError(f"target state must lie in [0, {mdp.n_states}), got {target_state}")
    reward = np.zeros(mdp.transition.shape[:3])
    reward[target_stage, target_state, :] = 1.0
    return reward


def max_visitation(mdp: InducedMdp, target_state: int, target_stage: int,
                   allowed: Optional[np.ndarray] = None) -> Tuple[float, StagePolicy]:
    """max over policies of d_h(s), solved as a best response to the indicator reward."""
    reward = indicator_reward(mdp, target_state, target_stage)
    br = best_response(mdp.with_reward(reward, exploration=True), allowed=allowed)
    return float(np.clip(br.value, 0.0, 1.0)), br.policy


def max_visitation_table(mdp: InducedMdp, allowed: Optional[np.ndarray] = None) -> np.ndarray:
    """max_visitation for every target at once, shape (H, S).

    One backward sweep per target stage carries a value column per target state.
    """
    H, S = mdp.horizon, mdp.n_states
    table = np.zeros((H, S))
    for target_h in range(H):
        W = np.eye(S)
        for h in reversed(range(target_h)):
            Q = mdp.transition[h] @ W  # (S, A, targets)
            if allowed is not None:
                Q = np.where(allowed[h][:, :, None], Q, -np.inf)
            W = Q.max(axis=1)
        table[target_h] = mdp.initial_dist @ W
    return np.clip(table, 0.0, 1.0)


def sample_categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """Draw one index per row of `probs` by inverse-CDF sampling.

    Zero-probability entries are never drawn.
    """
    probs = np.atleast_2d(probs)
    cdf = np.cumsum(probs, axis=-1)
    cdf /= cdf[:, -1:]
    u = 1.0 - rng.random(probs.shape[0])
    return (cdf < u[:, None]).sum(axis=-1)


ActionChooser = Callable[[int, np.ndarray], np.ndarray]


def policy_chooser(policy: StagePolicy, rng: np.random.Generator) -> ActionChooser:
    def choose(h: int, states: np.ndarray) -> np.ndarray:
        return sample_categorical(rng, policy.probs[h, states])
    return choose


def simulate(game: GameDynamics, choose_p1: ActionChooser, choose_p2: ActionChooser, n: int,
             rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Roll n trajectories forward in lock-step.

    Random draws happen in a fixed order (initial states, then per stage player 1,
    player 2, next states), so a seeded generator reproduces the rollouts exactly.

    Returns:
        (states, actions_p1, actions_p2), each of shape (n, H).
    """
    H = game.horizon
    states = np.zeros((n, H), dtype=int)
    acts_p1 = np.zeros((n, H), dtype=int)
    acts_p2 = np.zeros((n, H), dtype=int)
    if n == 0:
        return states, acts_p1, acts_p2
    s = sample_categorical(rng, np.broadcast_to(game.initial_dist, (n, game.n_states)))
    for h in range(H):
        a = choose_p1(h, s)
        b = choose_p2(h, s)
        states[:, h], acts_p1[:, h], acts_p2[:, h] = s, a, b
        if h + 1 < H:
            s = sample_categorical(rng, game.transition[h, s, a, b])
    return states, acts_p1, acts_p2


def game_to_dict(game: MarkovGame) -> dict:
    return {
        "H": game.horizon,
        "S": game.n_states,
        "A": game.n_actions_p1,
        "B": game.n_actions_p2,
        "r_max": game.r_max,
        "d0": game.initial_dist.tolist(),
        "P": game.transition.tolist(),
        "R": game.reward.tolist(),
    }


def game_from_dict(data: dict) -> MarkovGame:
    """Build a game from the JSON layout {H, S, A, B, r_max, d0, P, R}.

    Raises:
        KeyError: if a required key is missing.
        ValueError: if dimensions disagree or an invariant fails.
    """
    for key in ("H", "S", "A", "B", "d0", "P", "R"):
        if key not in data:
            raise KeyError(f"Missing '{key}' in game description")
    H, S, A, B = (int(data[k]) for k in ("H", "S", "A", "B"))
    P = np.asarray(data["P"], dtype=float)
    R = np.asarray(data["R"], dtype=float)
    if P.shape != (H, S, A, B, S):
        raise ValueError(f"P has shape {P.shape}, header declares {(H, S, A, B, S)}")
    if R.shape != (H, S, A, B):
        raise ValueError(f"R has shape {R.shape}, header declares {(H, S, A, B)}")
    return MarkovGame(P, data["d0"], R, float(data.get("r_max", 1.0)))
