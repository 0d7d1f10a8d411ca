"""Executable cross-checks of the lower-bound closed forms against exact solvers."""

import logging
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

from analysis import (LowerBoundFamily, bh_lower, chi2_bernoulli, chi2_nash_means, chi2_nash_means_upper,
                      exploitability_by_dp, exploitability_by_dp_row, exploitability_closed_form,
                      exploitability_closed_form_row, kl_bernoulli, perturbed_mp_nash, strategy_class_minimizer)
from envs import perturbed_payoff
from game_core import PolicyPair, StagePolicy
from matrix_nash import game_from_matrix, nash_gap, solve_matrix_game

logger = logging.getLogger("mailbench.formulas")

CHECK_TOL = 1e-9
DELTAS = (0.0, 0.2, 1.0, 2.0)
EPSILON_GRID = np.linspace(0.01, 0.99, 99)


@dataclass(frozen=True)
class FormulaCheck:
    check: str
    passed: bool
    detail: str

    def to_row(self) -> dict:
        return {"check": self.check, "passed": self.passed, "detail": self.detail}


def _perturbed_mp_vs_solver(sign: float) -> Tuple[bool, str]:
    worst = 0.0
    for delta in DELTAS:
        sol = solve_matrix_game(perturbed_payoff(sign * delta))
        p, v = perturbed_mp_nash(delta)
        worst = max(worst, abs(sol.row_strategy[0] - p), abs(sol.col_strategy[0] - p), abs(sol.value - v))
    return worst <= CHECK_TOL, f"max deviation {worst:.3e} over delta in {list(DELTAS)}"


def _matching_pennies_limit() -> Tuple[bool, str]:
    p, v = perturbed_mp_nash(0.0)
    return p == 0.5 and v == 0.0, f"p={p!r} value={v!r}"


def _exploitability_column() -> Tuple[bool, str]:
    worst = max(abs(exploitability_closed_form(d, q) - exploitability_by_dp(d, q))
                for d in DELTAS for q in np.linspace(0.0, 1.0, 21))
    return worst <= CHECK_TOL, f"max deviation {worst:.3e}"


def _exploitability_row() -> Tuple[bool, str]:
    worst = max(abs(exploitability_closed_form_row(d, p) - exploitability_by_dp_row(d, p))
                for d in DELTAS for p in np.linspace(0.0, 1.0, 21))
    return worst <= CHECK_TOL, f"max deviation {worst:.3e}"


def _exploitability_zero_at_equilibrium() -> Tuple[bool, str]:
    lowest = min(exploitability_closed_form(d, q) for d in DELTAS for q in np.linspace(0.0, 1.0, 101))
    at_nash = max(abs(exploitability_closed_form(d, perturbed_mp_nash(d)[0])) for d in DELTAS)
    return lowest >= -CHECK_TOL and at_nash <= CHECK_TOL, f"min {lowest:.3e}, at equilibrium {at_nash:.3e}"


def _family_exploitability(which: str) -> Tuple[bool, str]:
    worst = 0.0
    for eps in (0.1, 0.3, 0.5, 0.7, 0.9):
        fam = LowerBoundFamily(eps)
        for beta in (0.0, 0.25, 0.5, 0.75, 1.0):
            q = fam.q_beta(beta)
            if which == "g1":
                expected, delta = fam.g1_exploitability(beta), fam.delta_g1
            else:
                expected, delta = fam.g2_exploitability(beta), fam.delta_g2
            worst = max(worst, abs(expected - exploitability_by_dp(delta, q)))
    return worst <= CHECK_TOL, f"max deviation {worst:.3e} over 25 (eps, beta)"


def _nash_gap_is_sum() -> Tuple[bool, str]:
    worst = 0.0
    for eps in (0.1, 0.5, 0.9):
        fam = LowerBoundFamily(eps)
        game = game_from_matrix(perturbed_payoff(fam.delta_g1))
        for alpha in (0.0, 0.5, 1.0):
            for beta in (0.0, 0.5, 1.0):
                p, q = fam.p_alpha(alpha), fam.q_beta(beta)
                pair = PolicyPair(StagePolicy(np.array([[[p, 1.0 - p]]])), StagePolicy(np.array([[[q, 1.0 - q]]])))
                closed = (exploitability_closed_form_row(fam.delta_g1, p)
                          + exploitability_closed_form(fam.delta_g1, q))
                worst = max(worst, abs(nash_gap(game, pair) - closed))
    return worst <= CHECK_TOL, f"max deviation {worst:.3e} over 27 (eps, alpha, beta)"


def _chi2_upper_form_bounds() -> Tuple[bool, str]:
    values = np.array([chi2_nash_means_upper(e) for e in EPSILON_GRID])
    lower, upper = 9.0 * EPSILON_GRID ** 2 / 300.0, 16.0 * EPSILON_GRID ** 2 / 128.0
    ok = bool(np.all(values >= lower - 1e-15) and np.all(values <= upper + 1e-15))
    return ok, f"{int(np.sum((values >= lower) & (values <= upper)))}/{len(EPSILON_GRID)} grid points inside"


def _chi2_exact() -> Tuple[bool, str]:
    worst = 0.0
    below = True
    for eps in EPSILON_GRID:
        r, s = LowerBoundFamily(eps).nash_means()
        exact = chi2_bernoulli(r, s)
        worst = max(worst, abs(exact - chi2_nash_means(eps)))
        below &= exact <= 16.0 * eps ** 2 / 128.0 and exact <= chi2_nash_means_upper(eps)
    return worst <= 1e-12 and below, f"max deviation {worst:.3e}; below upper bounds: {below}"


def _kl_below_chi2() -> Tuple[bool, str]:
    rng = np.random.default_rng(0)
    pairs = rng.uniform(0.01, 0.99, size=(10_000, 2))
    violations = sum(kl_bernoulli(r, s) > chi2_bernoulli(r, s) + 1e-12 for r, s in pairs)
    return violations == 0, f"{violations} violations over {len(pairs)} pairs"


def _q_star_grid_search() -> Tuple[bool, str]:
    grid = np.linspace(0.0, 1.0, 1_000_001)
    worst = 0.0
    for eps in (0.1, 0.5, 0.9):
        fam = LowerBoundFamily(eps)
        q_grid = grid[int(np.argmin(fam.worst_case(grid)))]
        worst = max(worst, abs(q_grid - strategy_class_minimizer(eps)[0]))
    return worst <= 1e-5, f"max |argmin - q*| {worst:.3e}"


def _beta_star_reproduces_q_star() -> Tuple[bool, str]:
    worst = 0.0
    for eps in (0.1, 0.5, 0.9):
        q_star, beta_star = strategy_class_minimizer(eps)
        worst = max(worst, abs(LowerBoundFamily(eps).q_beta(beta_star) - q_star))
    return worst <= 1e-12, f"max deviation {worst:.3e}"


def _beta_star_range() -> Tuple[bool, str]:
    betas = [strategy_class_minimizer(e)[1] for e in EPSILON_GRID]
    ok = all(0.5 < b < 1.0 for b in betas)
    return ok, f"beta* in [{min(betas):.4f}, {max(betas):.4f}]"


def _q_star_at_one() -> Tuple[bool, str]:
    # eps = 1 sits outside the family's range; evaluate the closed forms directly
    q_star = (2.0 + 1.0 / 3.0 - 1.0 / 5.0) / 6.0
    beta_star = 2.0 / 3.0
    ok = abs(q_star - 32.0 / 90.0) <= 1e-12 and abs((1.0 + 1.0) / (1.0 + 2.0) - beta_star) <= 1e-12
    return ok, f"q*={q_star!r} beta*={beta_star!r}"


def _worst_case_convex() -> Tuple[bool, str]:
    grid = np.linspace(0.0, 1.0, 10_000)
    lowest = 0.0
    for eps in (0.1, 0.5, 0.9):
        lowest = min(lowest, float(np.diff(LowerBoundFamily(eps).worst_case(grid), n=2).min()))
    return lowest >= -1e-12, f"min second difference {lowest:.3e}"


def _bh_lower_decreasing() -> Tuple[bool, str]:
    eps = 0.5
    kl = kl_bernoulli(*LowerBoundFamily(eps).nash_means())
    values = [bh_lower(eps, n, kl) for n in (0, 10, 100, 1000)]
    ok = values[0] == eps / 30.0 and all(b < a for a, b in zip(values, values[1:]))
    return ok, "values " + ", ".join(f"{v:.3e}" for v in values)


def formula_suite(flip_delta_sign: bool = False) -> List[FormulaCheck]:
    """Run every closed-form cross-check.

    Args:
        flip_delta_sign: feed the solver -delta instead of delta; the equilibrium check
            must then fail.

    Returns:
        One FormulaCheck per check, in a fixed order.
    """
    checks: List[Tuple[str, Callable[[], Tuple[bool, str]]]] = [
        ("perturbed_mp_nash_vs_solver", lambda: _perturbed_mp_vs_solver(-1.0 if flip_delta_sign else 1.0)),
        ("matching_pennies_limit", _matching_pennies_limit),
        ("exploitability_column_vs_dp", _exploitability_column),
        ("exploitability_row_vs_dp", _exploitability_row),
        ("exploitability_zero_at_equilibrium", _exploitability_zero_at_equilibrium),
        ("g1_exploitability_closed_form", lambda: _family_exploitability("g1")),
        ("g2_exploitability_closed_form", lambda: _family_exploitability("g2")),
        ("nash_gap_is_sum_of_exploitabilities", _nash_gap_is_sum),
        ("chi2_upper_form_bounds", _chi2_upper_form_bounds),
        ("chi2_exact_nash_means", _chi2_exact),
        ("kl_below_chi2", _kl_below_chi2),
        ("q_star_grid_search", _q_star_grid_search),
        ("beta_star_reproduces_q_star", _beta_star_reproduces_q_star),
        ("beta_star_range", _beta_star_range),
        ("q_star_eps_one", _q_star_at_one),
        ("worst_case_convex", _worst_case_convex),
        ("bh_lower_decreasing", _bh_lower_decreasing),
    ]
    results = []
    for name, fn in checks:
        passed, detail = fn()
        results.append(FormulaCheck(name, bool(passed), detail))
        if passed:
            logger.debug("check %s passed: %s", name, detail)
        else:
            logger.warning("check %s FAILED: %s", name, detail)
    logger.info("formula suite: %d/%d checks passed", sum(r.passed for r in results), len(results))
    return results
