"""Concentrability, coverage and exploitability analytics, and the lower-bound closed forms.

Best-response sets are handled exactly: the optimal actions of the deviator's MDP are
computed by backward induction, and maximizing any occupancy functional over the
best-response set becomes a best response in the MDP restricted to those actions.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Set, Tuple

import numpy as np

from envs import GameInstance, make_lower_bound_game
from game_core import (P1, P2, GameDynamics, InducedMdp, MarkovGame, PolicyPair, StagePolicy, as_distribution,
                       best_response, check_pair, induce_mdp, induced_transition, max_visitation_table,
                       other_player)
from matrix_nash import game_from_matrix, nash_gap
from reward_free import PolicySet, mixture_distribution

logger = logging.getLogger("mailbench.analysis")

OPTIMALITY_TOL = 1e-9
POSITIVE_TOL = 1e-15


def optimal_action_mask(mdp: InducedMdp, tol: float = OPTIMALITY_TOL) -> np.ndarray:
    """Actions within `tol` of the optimal Q-value at every (h, s), shape (H, S, A)."""
    br = best_response(mdp)
    return br.q >= br.values[:-1, :, None] - tol


def occupancy_ratios(numerator: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """numerator / rho with 0/0 = 0 and positive/0 = +inf."""
    positive = numerator > POSITIVE_TOL
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(rho > 0, numerator / np.where(rho > 0, rho, 1.0), np.inf)
    return np.where(positive, ratios, 0.0)


def format_inf(value: float):
    return "inf" if math.isinf(value) else float(value)


@dataclass(frozen=True, eq=False)
class ConcentrabilityReport:
    """c_expert = C(mu^E, nu^E) and c_deviation, the all-deviation upper bound on C_max.

    Ratio tables are (H, S) per deviating player, keyed "p1"/"p2".
    """

    c_expert: float
    c_deviation: float
    ratios_expert: Dict[str, np.ndarray]
    ratios_deviation: Dict[str, np.ndarray]
    rho: np.ndarray

    def to_dict(self) -> dict:
        def table(t: np.ndarray):
            return [[format_inf(v) for v in row] for row in t]

        return {
            "c_expert": format_inf(self.c_expert),
            "c_deviation": format_inf(self.c_deviation),
            "c_deviation_is_upper_bound": True,
            "ratios_expert": {k: table(v) for k, v in self.ratios_expert.items()},
            "ratios_deviation": {k: table(v) for k, v in self.ratios_deviation.items()},
            "rho": self.rho.tolist(),
        }

    def ratio_rows(self) -> List[dict]:
        """Flat (deviator, stage, state) rows for CSV output."""
        rows = []
        for player in sorted(self.ratios_expert):
            restricted, free = self.ratios_expert[player], self.ratios_deviation[player]
            for h in range(restricted.shape[0]):
                for s in range(restricted.shape[1]):
                    rows.append({"deviator": player, "stage": h, "state": s,
                                 "ratio_best_response": format_inf(restricted[h, s]),
                                 "ratio_any": format_inf(free[h, s])})
        return rows


def concentrability(game: MarkovGame, experts: PolicyPair, rho: np.ndarray) -> ConcentrabilityReport:
    """Concentrability of the expert pair with respect to per-stage state distributions rho.

    For each deviator, the expert opponent is frozen, the deviator is restricted to its
    optimal actions under the true reward, and max d_h(s) over that restricted MDP is
    divided by rho_h(s). The unrestricted maximum gives c_deviation.

    Raises:
        ValueError: if rho is not an (H, S) table of distributions.
    """
    check_pair(game, experts)
    rho = as_distribution(rho, "rho")
    if rho.shape != (game.horizon, game.n_states):
        raise ValueError(f"rho must have shape {(game.horizon, game.n_states)}, got {rho.shape}")
    restricted, unrestricted = {}, {}
    for frozen in (P1, P2):
        deviator = other_player(frozen)
        mdp = induce_mdp(game, frozen, experts.policy(frozen))
        allowed = optimal_action_mask(mdp)
        label = "p1" if deviator == P1 else "p2"
        restricted[label] = occupancy_ratios(max_visitation_table(mdp, allowed), rho)
        unrestricted[label] = occupancy_ratios(max_visitation_table(mdp), rho)
    c_expert = max(float(t.max()) for t in restricted.values())
    c_deviation = max(float(t.max()) for t in unrestricted.values())
    return ConcentrabilityReport(c_expert, c_deviation, restricted, unrestricted, rho)


def _reach_table(game: GameDynamics, expert: StagePolicy, fixed_player: int) -> np.ndarray:
    transition = induced_transition(game, fixed_player, expert)
    mdp = InducedMdp(transition, np.zeros(transition.shape[:3]), game.initial_dist, exploration=True)
    return max_visitation_table(mdp)


def significant_states(game: GameDynamics, expert: StagePolicy, fixed_player: int,
                       delta: float) -> Set[Tuple[int, int]]:
    """(s, h) pairs some free-player policy reaches with probability at least delta."""
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    reach = _reach_table(game, expert, fixed_player)
    stages, states = np.nonzero(reach >= delta)
    return {(int(s), int(h)) for h, s in zip(stages, states)}


def default_significance(epsilon: float, n_states: int, n_actions_max: int, horizon: int) -> float:
    return epsilon / (n_states * n_actions_max * horizon ** 2)


@dataclass(frozen=True)
class CoverageRow:
    state: int
    stage: int
    max_visitation: float
    ratio: float
    bound: float

    @property
    def ok(self) -> bool:
        return bool(self.ratio <= self.bound)


def coverage_certificate(game: GameDynamics, expert: StagePolicy, fixed_player: int, policy_set: PolicySet,
                         delta: float) -> List[CoverageRow]:
    """Check max_a [max_pi d_h(s, a)] / p_h(s, a) <= 2 S A H on every delta-significant (s, h).

    The numerator is the exact indicator-reward optimum; p is the exact mixture of the set.
    """
    H, S = game.horizon, game.n_states
    n_free = game.n_actions(other_player(fixed_player))
    reach = _reach_table(game, expert, fixed_player)
    mixture = mixture_distribution(game, expert, fixed_player, policy_set).p
    bound = 2.0 * S * n_free * H
    rows = []
    for s, h in sorted(significant_states(game, expert, fixed_player, delta), key=lambda t: (t[1], t[0])):
        p_min = float(mixture[h, s].min())
        ratio = reach[h, s] / p_min if p_min > 0 else math.inf
        rows.append(CoverageRow(s, h, float(reach[h, s]), ratio, bound))
    return rows


@dataclass(frozen=True, eq=False)
class DecompositionReport:
    nash_gap: float
    err_mu: np.ndarray
    err_nu: np.ndarray
    bound: float

    @property
    def holds(self) -> bool:
        return self.nash_gap <= self.bound + 1e-9


def imitation_errors(game: MarkovGame, experts: PolicyPair, pair: PolicyPair, player: int) -> np.ndarray:
    """Err_h of the imitated policy of `player`, for every stage h.

    Err_h = max over deviations pi in br(imitated policy) of
    E_{s ~ d_h^{pi, expert}} || imitated_h(.|s) - expert_h(.|s) ||_1.
    """
    H, S = game.horizon, game.n_states
    imitated, expert = pair.policy(player), experts.policy(player)
    tv = np.abs(imitated.probs - expert.probs).sum(axis=-1)
    allowed = optimal_action_mask(induce_mdp(game, player, imitated))
    transition = induced_transition(game, player, expert)
    n_dev = transition.shape[2]
    errors = np.zeros(H)
    for h in range(H):
        reward = np.zeros((H, S, n_dev))
        reward[h] = tv[h][:, None]
        mdp = InducedMdp(transition, reward, game.initial_dist)
        errors[h] = best_response(mdp, allowed=allowed).value
    return errors


def decomposition_bound(game: MarkovGame, experts: PolicyPair, pair: PolicyPair) -> DecompositionReport:
    """Exact Nash gap of `pair` next to 2H sum_h (Err_h(mu_hat) + Err_h(nu_hat))."""
    check_pair(game, experts)
    check_pair(game, pair)
    gap = nash_gap(game, pair)
    err_mu = imitation_errors(game, experts, pair, P1)
    err_nu = imitation_errors(game, experts, pair, P2)
    bound = 2.0 * game.horizon * float(err_mu.sum() + err_nu.sum())
    return DecompositionReport(gap, err_mu, err_nu, bound)


def tv_concentration_bound(n_outcomes: int, n: int, delta: float) -> float:
    """With probability 1 - delta, ||P - P_hat||_1 <= sqrt(2 |X| log(1/delta) / n)."""
    return math.sqrt(2.0 * n_outcomes * math.log(1.0 / delta) / n)


def binomial_ratio_bound(n: int, delta: float) -> float:
    """With probability 1 - delta, p / max(N, 1) <= 8 log(1/delta) / n for N ~ Bin(n, p)."""
    return 8.0 * math.log(1.0 / delta) / n


# lower-bound family closed forms


def perturbed_mp_nash(delta: float) -> Tuple[float, float]:
    """Equilibrium probability p of the first action and value of [[1+delta, -1], [-1, 1]]."""
    if delta < 0:
        raise ValueError(f"delta must be non-negative, got {delta}")
    p = 1.0 / (2.0 + delta / 2.0)
    return p, (delta / 2.0) / (2.0 + delta / 2.0)


def exploitability_closed_form(delta: float, q: float) -> float:
    """Gain of the row player's best response when the column player mixes (q, 1 - q)."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    _, v = perturbed_mp_nash(delta)
    return max((2.0 + delta) * q - 1.0, 1.0 - 2.0 * q) - v


def exploitability_closed_form_row(delta: float, p: float) -> float:
    """Loss of the row player mixing (p, 1 - p) against the column player's best response."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    _, v = perturbed_mp_nash(delta)
    return v - min((2.0 + delta) * p - 1.0, 1.0 - 2.0 * p)


def exploitability_by_dp(delta: float, q: float) -> float:
    """Same quantity as exploitability_closed_form, via a best response on a one-stage game."""
    game = game_from_matrix([[1.0 + delta, -1.0], [-1.0, 1.0]])
    nu = StagePolicy(np.array([[[q, 1.0 - q]]]))
    _, v = perturbed_mp_nash(delta)
    return best_response(induce_mdp(game, P2, nu)).value - v


def exploitability_by_dp_row(delta: float, p: float) -> float:
    game = game_from_matrix([[1.0 + delta, -1.0], [-1.0, 1.0]])
    mu = StagePolicy(np.array([[[p, 1.0 - p]]]))
    _, v = perturbed_mp_nash(delta)
    # the column player's best value is minus the row player's payoff
    return v + best_response(induce_mdp(game, P1, mu)).value


@dataclass(frozen=True)
class LowerBoundFamily:
    """The two games G1 (delta = 2 eps) and G2 (delta = eps) that are hard to tell apart."""

    epsilon: float

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")

    @property
    def delta_g1(self) -> float:
        return 2.0 * self.epsilon

    @property
    def delta_g2(self) -> float:
        return self.epsilon

    def games(self, rho_s3: float = 0.5) -> Tuple[GameInstance, GameInstance]:
        return make_lower_bound_game(self.delta_g1, rho_s3), make_lower_bound_game(self.delta_g2, rho_s3)

    def nash_means(self) -> Tuple[float, float]:
        return perturbed_mp_nash(self.delta_g1)[0], perturbed_mp_nash(self.delta_g2)[0]

    def mixed_strategy(self, weight: float) -> float:
        """q_beta: weight 1 gives the G1 equilibrium, weight 0 the G2 equilibrium."""
        eps = self.epsilon
        return 0.5 - (2.0 * weight * eps / (8.0 + 4.0 * eps) + (1.0 - weight) * eps / (8.0 + 2.0 * eps))

    q_beta = mixed_strategy
    p_alpha = mixed_strategy

    def g1_exploitability(self, beta: float) -> float:
        eps = self.epsilon
        first = 2.0 * eps * (1.0 + eps) * (1.0 - beta) / ((4.0 + eps) * (2.0 + eps))
        second = -2.0 * eps * (1.0 - beta) / ((2.0 + eps) * (4.0 + eps))
        return max(first, second)

    def g2_exploitability(self, beta: float) -> float:
        eps = self.epsilon
        return max(-beta * eps / (4.0 + eps), 2.0 * eps * beta / ((2.0 + eps) * (4.0 + eps)))

    def pieces(self, q: np.ndarray) -> Dict[str, np.ndarray]:
        """The four affine exploitability pieces; f1, f2 belong to G1, f3, f4 to G2."""
        eps = self.epsilon
        q = np.asarray(q, dtype=float)
        v1 = eps / (2.0 + eps)
        v2 = (eps / 2.0) / (2.0 + eps / 2.0)
        return {
            "f1": (2.0 + 2.0 * eps) * q - 1.0 - v1,
            "f2": 1.0 - 2.0 * q - v1,
            "f3": (2.0 + eps) * q - 1.0 - v2,
            "f4": 1.0 - 2.0 * q - v2,
        }

    def worst_case(self, q: np.ndarray) -> np.ndarray:
        """F(q) = max(f1(q), f4(q))."""
        parts = self.pieces(q)
        return np.maximum(parts["f1"], parts["f4"])


def strategy_class_minimizer(epsilon: float) -> Tuple[float, float]:
    """Minimizer q* of F and the mixing weight beta* with q_beta* = q*."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    q_star = (2.0 + epsilon / (2.0 + epsilon) - epsilon / (4.0 + epsilon)) / (2.0 * (2.0 + epsilon))
    beta_star = (epsilon + 1.0) / (epsilon + 2.0)
    return q_star, beta_star


def _check_open_unit(name: str, x: float) -> None:
    if not 0.0 < x < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {x}")


def chi2_bernoulli(r: float, s: float) -> float:
    """chi^2(Ber(r) || Ber(s)) = (r - s)^2 / (s (1 - s))."""
    _check_open_unit("r", r)
    _check_open_unit("s", s)
    return (r - s) ** 2 / (s * (1.0 - s))


def kl_bernoulli(r: float, s: float) -> float:
    _check_open_unit("r", r)
    _check_open_unit("s", s)
    return r * math.log(r / s) + (1.0 - r) * math.log((1.0 - r) / (1.0 - s))


def chi2_nash_means(epsilon: float) -> float:
    """Exact chi^2 between the G1 and G2 equilibrium means: eps^2 / (2 (2 + eps)^3)."""
    return epsilon ** 2 / (2.0 * (2.0 + epsilon) ** 3)


def chi2_nash_means_upper(epsilon: float) -> float:
    """Closed form eps^2 (eps - 4)^2 / ((8 + 2 eps)(4 + eps)(4 + 2 eps)) used for the sample bound.

    It upper-bounds chi2_nash_means, so sample-size bounds derived from it stay valid.
    """
    eps = epsilon
    return eps ** 2 * (eps - 4.0) ** 2 / ((8.0 + 2.0 * eps) * (4.0 + eps) * (4.0 + 2.0 * eps))


def bh_lower(epsilon: float, n: int, kl: float) -> float:
    """Lower bound (eps / 30) exp(-N kl) on the worst-case expected exploitability."""
    return epsilon / 30.0 * math.exp(-n * kl)
