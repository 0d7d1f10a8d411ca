"""Trajectory datasets with expert-query accounting and tabular behavior cloning."""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from game_core import (P1, P2, GameDynamics, PolicyPair, StagePolicy, as_distribution, check_pair,
                       check_player, policy_chooser, sample_categorical, simulate)
from seeding import make_rng

logger = logging.getLogger("mailbench.imitation")

RngLike = Union[np.random.Generator, int, None]


@dataclass(frozen=True, eq=False)
class TrajectoryDataset:
    """Records (h, s, a, b) stored column-wise, plus the expert actions they consumed.

    Records are ordered sample-major: record i * H + h belongs to sample i at stage h.
    """

    h: np.ndarray
    s: np.ndarray
    a: np.ndarray
    b: np.ndarray
    horizon: int
    queries_p1: int = 0
    queries_p2: int = 0
    rng_seed: Optional[int] = None

    def __post_init__(self):
        cols = [np.asarray(c, dtype=np.int64).ravel() for c in (self.h, self.s, self.a, self.b)]
        if len({len(c) for c in cols}) != 1:
            raise ValueError("record columns must have equal length")
        if len(cols[0]) and (cols[0].min() < 0 or cols[0].max() >= self.horizon):
            raise ValueError(f"record stages must lie in [0, {self.horizon})")
        if self.queries_p1 < 0 or self.queries_p2 < 0:
            raise ValueError("query counters must be non-negative")
        for name, col in zip(("h", "s", "a", "b"), cols):
            col.setflags(write=False)
            object.__setattr__(self, name, col)

    def __len__(self) -> int:
        return len(self.h)

    @property
    def n_samples(self) -> int:
        return len(self) // self.horizon

    def queries(self, player: int) -> int:
        check_player(player)
        return self.queries_p1 if player == P1 else self.queries_p2

    def actions(self, player: int) -> np.ndarray:
        check_player(player)
        return self.a if player == P1 else self.b

    def head(self, n_samples: int) -> "TrajectoryDataset":
        """First `n_samples` samples (trajectories), with proportionally scaled query counters."""
        if n_samples < 0:
            raise ValueError(f"n_samples must be non-negative, got {n_samples}")
        total = self.n_samples
        n_samples = min(n_samples, total)
        k = n_samples * self.horizon
        scale = (lambda q: q * n_samples // total) if total else (lambda q: 0)
        return TrajectoryDataset(self.h[:k], self.s[:k], self.a[:k], self.b[:k], self.horizon,
                                 scale(self.queries_p1), scale(self.queries_p2), self.rng_seed)

    def first_sample_with(self, stage: int, state: int) -> Optional[int]:
        """1-based index of the first sample holding a record at (stage, state), or None."""
        hits = np.flatnonzero((self.h == stage) & (self.s == state))
        if len(hits) == 0:
            return None
        return int(hits[0]) // self.horizon + 1


def _from_grid(states, acts_p1, acts_p2, horizon, queries_p1, queries_p2, seed) -> TrajectoryDataset:
    n = states.shape[0]
    stages = np.broadcast_to(np.arange(horizon), (n, horizon))
    return TrajectoryDataset(stages.ravel(), states.ravel(), acts_p1.ravel(), acts_p2.ravel(), horizon,
                             queries_p1, queries_p2, seed)


def collect_trajectories(game: GameDynamics, pair: PolicyPair, n: int, rng: RngLike = None) -> TrajectoryDataset:
    """Roll n trajectories under `pair`; every record costs one action from each expert."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    check_pair(game, pair)
    gen, seed = make_rng(rng)
    states, a, b = simulate(game, policy_chooser(pair.mu, gen), policy_chooser(pair.nu, gen), n, gen)
    H = game.horizon
    return _from_grid(states, a, b, H, n * H, n * H, seed)


def collect_from_state_dist(game: GameDynamics, rho: np.ndarray, experts: PolicyPair, n: int,
                            rng: RngLike = None) -> TrajectoryDataset:
    """Draw, for each sample and stage h, s ~ rho_h, a ~ mu^E(.|s) and b ~ nu^E(.|s)."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    check_pair(game, experts)
    H, S = game.horizon, game.n_states
    rho = as_distribution(rho, "rho")
    if rho.shape != (H, S):
        raise ValueError(f"rho must have shape {(H, S)}, got {rho.shape}")
    gen, seed = make_rng(rng)
    states = np.zeros((n, H), dtype=int)
    acts_p1 = np.zeros((n, H), dtype=int)
    acts_p2 = np.zeros((n, H), dtype=int)
    for h in range(H):
        states[:, h] = sample_categorical(gen, np.broadcast_to(rho[h], (n, S)))
        acts_p1[:, h] = sample_categorical(gen, experts.mu.probs[h, states[:, h]])
        acts_p2[:, h] = sample_categorical(gen, experts.nu.probs[h, states[:, h]])
    return _from_grid(states, acts_p1, acts_p2, H, n * H, n * H, seed)


@dataclass(frozen=True, eq=False)
class EmpiricalPolicy:
    """Per-(stage, state) action counts and the derived maximum-likelihood policy."""

    counts: np.ndarray

    @property
    def visited(self) -> np.ndarray:
        return self.counts.sum(axis=-1) > 0

    @property
    def probs(self) -> np.ndarray:
        totals = self.counts.sum(axis=-1, keepdims=True)
        n_actions = self.counts.shape[-1]
        with np.errstate(invalid="ignore", divide="ignore"):
            freq = self.counts / totals
        return np.where(totals > 0, freq, 1.0 / n_actions)

    def as_stage_policy(self) -> StagePolicy:
        return StagePolicy(self.probs)

    def stationary(self) -> np.ndarray:
        """Stage-pooled action frequencies, shape (S, n_actions); for display only."""
        pooled = self.counts.sum(axis=0)
        totals = pooled.sum(axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            freq = pooled / totals
        return np.where(totals > 0, freq, 1.0 / pooled.shape[-1])


def bc_fit(dataset: TrajectoryDataset, player: int, n_states: int, n_actions: int) -> EmpiricalPolicy:
    """Tabular log-loss minimizer: per-(stage, state) empirical action frequencies.

    Unvisited (stage, state) rows are uniform. No smoothing is applied.
    """
    check_player(player)
    H = dataset.horizon
    actions = dataset.actions(player)
    if len(dataset) and (dataset.s.max() >= n_states or actions.max() >= n_actions):
        raise ValueError("dataset indices exceed the declared dimensions")
    if len(dataset) == 0:
        logger.warning("bc_fit on an empty dataset; returning the uniform policy")
    flat = (dataset.h * n_states + dataset.s) * n_actions + actions
    counts = np.bincount(flat, minlength=H * n_states * n_actions).reshape(H, n_states, n_actions)
    return EmpiricalPolicy(counts)


def bc_pair(dataset_p1: TrajectoryDataset, dataset_p2: TrajectoryDataset, game: GameDynamics) -> PolicyPair:
    """Fit mu_hat on the player-1 labels of one dataset and nu_hat on the player-2 labels of another."""
    mu = bc_fit(dataset_p1, P1, game.n_states, game.n_actions_p1).as_stage_policy()
    nu = bc_fit(dataset_p2, P2, game.n_states, game.n_actions_p2).as_stage_policy()
    return PolicyPair(mu, nu)
