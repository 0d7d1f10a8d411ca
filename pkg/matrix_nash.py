"""Zero-sum matrix games, zero-sum value iteration and the Nash gap.

The row player maximizes. Matrix games are solved exactly: a pure saddle point when one
exists, otherwise support enumeration for games up to 4x4, and a HiGHS linear program for
larger or degenerate games.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog

from game_core import (P1, P2, MarkovGame, PolicyPair, StagePolicy, as_distribution,
                       best_response, check_pair, induce_mdp)

logger = logging.getLogger("mailbench.matrix_nash")

NASH_TOL = 1e-9
ENUMERATION_MAX_DIM = 4


@dataclass(frozen=True, eq=False)
class MatrixGame:
    payoff: np.ndarray

    def __post_init__(self):
        M = np.array(self.payoff, dtype=float)
        if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
            raise ValueError(f"payoff must be a non-empty matrix, got shape {M.shape}")
        if not np.all(np.isfinite(M)):
            raise ValueError("payoff contains non-finite entries")
        M.setflags(write=False)
        object.__setattr__(self, "payoff", M)


@dataclass(frozen=True, eq=False)
class NashSolution:
    row_strategy: np.ndarray
    col_strategy: np.ndarray
    value: float

    def exploitability(self, payoff: np.ndarray) -> Tuple[float, float]:
        """Best pure-deviation gains (row player, column player)."""
        M = np.asarray(payoff, dtype=float)
        row_gain = float(np.max(M @ self.col_strategy) - self.value)
        col_gain = float(self.value - np.min(self.row_strategy @ M))
        return row_gain, col_gain


def _priority(order: Optional[Sequence[int]], n: int) -> np.ndarray:
    if order is None:
        return np.arange(n)
    order = np.asarray(order, dtype=int)
    if sorted(order.tolist()) != list(range(n)):
        raise ValueError(f"priority must be a permutation of range({n}), got {order.tolist()}")
    return order


def _pure_saddle(M: np.ndarray, rows: np.ndarray, cols: np.ndarray, tol: float):
    row_min = M.min(axis=1)
    col_max = M.max(axis=0)
    lower, upper = row_min.max(), col_max.min()
    if upper - lower > tol:
        return None
    i = next(int(r) for r in rows if row_min[r] >= lower - tol)
    j = next(int(c) for c in cols if col_max[c] <= upper + tol)
    x = np.zeros(M.shape[0])
    y = np.zeros(M.shape[1])
    x[i] = 1.0
    y[j] = 1.0
    return NashSolution(x, y, float(M[i, j]))


def _equalizer(sub: np.ndarray) -> Optional[Tuple[np.ndarray, float]]:
    """Solve sub @ w = v * 1, sum(w) = 1 for the strategy w and value v."""
    k_rows, k_cols = sub.shape
    system = np.zeros((k_rows + 1, k_cols + 1))
    system[:k_rows, :k_cols] = sub
    system[:k_rows, k_cols] = -1.0
    system[k_rows, :k_cols] = 1.0
    rhs = np.zeros(k_rows + 1)
    rhs[k_rows] = 1.0
    try:
        solution = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError:
        return None
    return solution[:k_cols], float(solution[k_cols])


def _support_enumeration(M: np.ndarray, rows: np.ndarray, cols: np.ndarray, tol: float):
    m, n = M.shape
    for k in range(1, min(m, n) + 1):
        for I in itertools.combinations(rows, k):
            for J in itertools.combinations(cols, k):
                I_idx, J_idx = np.array(I), np.array(J)
                col_part = _equalizer(M[np.ix_(I_idx, J_idx)])
                row_part = _equalizer(M[np.ix_(I_idx, J_idx)].T)
                if col_part is None or row_part is None:
                    continue
                y_sub, v = col_part
                x_sub, _ = row_part
                if np.any(x_sub < -tol) or np.any(y_sub < -tol):
                    continue
                x = np.zeros(m)
                y = np.zeros(n)
                x[I_idx] = np.clip(x_sub, 0.0, None)
                y[J_idx] = np.clip(y_sub, 0.0, None)
                x /= x.sum()
                y /= y.sum()
                value = float(x @ M @ y)
                if np.max(M @ y) <= value + tol and np.min(x @ M) >= value - tol:
                    return NashSolution(x, y, value)
    return None


def _linear_program(M: np.ndarray) -> NashSolution:
    """Joint maximin LP: maximize v s.t. x^T M[:, j] >= v and M[i, :] y <= v."""
    m, n = M.shape
    shift = M.min()
    scale = max(M.max() - shift, 1.0)
    Ms = (M - shift) / scale
    num = m + n + 1
    c = np.zeros(num)
    c[-1] = -1.0
    A_ub = np.zeros((n + m, num))
    A_ub[:n, :m] = -Ms.T
    A_ub[:n, -1] = 1.0
    A_ub[n:, m:m + n] = Ms
    A_ub[n:, -1] = -1.0
    b_ub = np.zeros(n + m)
    A_eq = np.zeros((2, num))
    A_eq[0, :m] = 1.0
    A_eq[1, m:m + n] = 1.0
    b_eq = np.ones(2)
    bounds = [(0, None)] * (m + n) + [(None, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"matrix game LP failed: {res.message}")
    x = np.clip(res.x[:m], 0.0, None)
    y = np.clip(res.x[m:m + n], 0.0, None)
    x /= x.sum()
    y /= y.sum()
    return NashSolution(x, y, float(x @ M @ y))


def solve_matrix_game(game, row_priority: Optional[Sequence[int]] = None,
                      col_priority: Optional[Sequence[int]] = None, tol: float = NASH_TOL) -> NashSolution:
    """Solve a zero-sum matrix game (row player maximizes).

    Args:
        game: a MatrixGame or a payoff matrix.
        row_priority, col_priority: order in which pure actions and supports are tried;
            different orders select different equilibria when several exist.
        tol: equilibrium tolerance on pure deviations.

    Returns:
        NashSolution with value = x^T M y.

    Raises:
        ValueError: on an empty or non-finite payoff.
    """
    M = game.payoff if isinstance(game, MatrixGame) else MatrixGame(game).payoff
    rows = _priority(row_priority, M.shape[0])
    cols = _priority(col_priority, M.shape[1])
    scale_tol = tol * max(1.0, float(np.max(np.abs(M))))

    solution = _pure_saddle(M, rows, cols, scale_tol)
    if solution is None and max(M.shape) <= ENUMERATION_MAX_DIM:
        solution = _support_enumeration(M, rows, cols, scale_tol)
    if solution is None:
        logger.debug("falling back to LP for a %dx%d matrix game", *M.shape)
        solution = _linear_program(M)
    return solution


@dataclass(frozen=True, eq=False)
class ValueIterationResult:
    pair: PolicyPair
    nash_value: float
    values: np.ndarray


def zero_sum_value_iteration(game: MarkovGame, row_priority: Optional[Sequence[int]] = None,
                             col_priority: Optional[Sequence[int]] = None) -> ValueIterationResult:
    """Backward induction solving the stage matrix game Q_h(s, ., .) at every (s, h).

    The returned pair is a subgame-perfect equilibrium; the priorities select among tied
    equilibria of the stage games.
    """
    H, S, A, B = game.horizon, game.n_states, game.n_actions_p1, game.n_actions_p2
    V = np.zeros((H + 1, S))
    mu = np.zeros((H, S, A))
    nu = np.zeros((H, S, B))
    for h in reversed(range(H)):
        Q = game.reward[h] + game.transition[h] @ V[h + 1]
        for s in range(S):
            sol = solve_matrix_game(Q[s], row_priority, col_priority)
            mu[h, s] = sol.row_strategy
            nu[h, s] = sol.col_strategy
            V[h, s] = sol.value
    pair = PolicyPair(StagePolicy(mu), StagePolicy(nu))
    return ValueIterationResult(pair, float(game.initial_dist @ V[0]), V)


def nash_gap(game: MarkovGame, pair: PolicyPair) -> float:
    """max_mu V(mu, nu_hat) - min_nu V(mu_hat, nu), via two exact best responses."""
    check_pair(game, pair)
    best_p1 = best_response(induce_mdp(game, P2, pair.nu)).value
    best_p2 = best_response(induce_mdp(game, P1, pair.mu)).value
    # best_p2 is player 2's payoff, i.e. minus player 1's value
    return best_p1 + best_p2


def exploitabilities(game: MarkovGame, pair: PolicyPair) -> Tuple[float, float]:
    """Per-side split of the Nash gap around the game's Nash value.

    Returns (gain of the best player-1 deviation against nu_hat, loss of player 1 when
    mu_hat faces a best player-2 response), both measured against the value of the game.
    """
    value = zero_sum_value_iteration(game).nash_value
    best_p1 = best_response(induce_mdp(game, P2, pair.nu)).value
    best_p2 = best_response(induce_mdp(game, P1, pair.mu)).value
    return best_p1 - value, value + best_p2


def mix_equilibria(pairs: Sequence[PolicyPair], weights: Sequence[float]) -> PolicyPair:
    """Per-state convex combination of the action distributions of several pairs."""
    if len(pairs) == 0:
        raise ValueError("at least one pair is required")
    w = as_distribution(weights, "weights")
    if w.shape != (len(pairs),):
        raise ValueError(f"expected {len(pairs)} weights, got {w.shape}")
    shape_mu = pairs[0].mu.probs.shape
    shape_nu = pairs[0].nu.probs.shape
    for pair in pairs:
        if pair.mu.probs.shape != shape_mu or pair.nu.probs.shape != shape_nu:
            raise ValueError("all pairs must share the same dimensions")
    mu = np.tensordot(w, np.stack([p.mu.probs for p in pairs]), axes=1)
    nu = np.tensordot(w, np.stack([p.nu.probs for p in pairs]), axes=1)
    return PolicyPair(StagePolicy(mu), StagePolicy(nu))


def game_from_matrix(payoff) -> MarkovGame:
    """One-stage, one-state Markov game with the given payoff."""
    M = MatrixGame(payoff).payoff
    A, B = M.shape
    P = np.ones((1, 1, A, B, 1))
    r_max = max(1.0, float(np.max(np.abs(M))))
    return MarkovGame(P, np.ones(1), M[None, None], r_max)


def is_nash(game: MarkovGame, pair: PolicyPair, tol: float = 1e-6) -> bool:
    return nash_gap(game, pair) <= tol
