import math

import numpy as np
import pytest

from analysis import (LowerBoundFamily, binomial_ratio_bound, bh_lower, chi2_bernoulli, chi2_nash_means,
                      chi2_nash_means_upper, concentrability, coverage_certificate, decomposition_bound,
                      default_significance, exploitability_by_dp, exploitability_by_dp_row,
                      exploitability_closed_form, exploitability_closed_form_row, format_inf, kl_bernoulli,
                      occupancy_ratios, perturbed_mp_nash, significant_states, strategy_class_minimizer)
from envs import S1, S2, S3, make_lower_bound_game, make_lower_bound_simplified, make_random_game, random_pair
from game_core import P1, P2, PolicyPair, StagePolicy
from mail_algorithms import MailWarmConfig, warm_start
from matrix_nash import nash_gap, zero_sum_value_iteration
from reward_free import PolicySet


class TestConcentrability:
    def test_lower_bound_with_full_rho(self):
        inst = make_lower_bound_game(0.2, rho_s3=0.5)
        report = concentrability(inst.game, inst.experts, inst.rho)
        assert report.c_expert == pytest.approx(2.0)
        assert report.c_deviation == pytest.approx(2.0)
        # player 2's only best response at s1 is b1, so s3 is out of reach
        assert report.ratios_expert["p2"][1, S3] == 0.0
        assert report.ratios_deviation["p2"][1, S3] == pytest.approx(2.0)

    def test_expert_finite_while_deviation_infinite(self):
        inst = make_lower_bound_game(0.2, rho_s3=0.0)
        report = concentrability(inst.game, inst.experts, inst.rho)
        assert report.c_expert == pytest.approx(1.0)
        assert math.isinf(report.c_deviation)
        assert report.to_dict()["c_deviation"] == "inf"

    def test_zero_delta_makes_b2_a_best_response(self):
        inst = make_lower_bound_game(0.0, rho_s3=0.0)
        report = concentrability(inst.game, inst.experts, inst.rho)
        assert math.isinf(report.c_expert)

    def test_ratio_rows_cover_every_cell(self):
        inst = make_lower_bound_game(0.2)
        rows = concentrability(inst.game, inst.experts, inst.rho).ratio_rows()
        assert len(rows) == 2 * 2 * 3
        assert {r["deviator"] for r in rows} == {"p1", "p2"}

    def test_rejects_bad_rho(self):
        inst = make_lower_bound_game(0.2)
        with pytest.raises(ValueError, match="shape"):
            concentrability(inst.game, inst.experts, np.ones((1, 3)) / 3)


def test_occupancy_ratios_zero_over_zero():
    ratios = occupancy_ratios(np.array([0.0, 0.5, 0.5]), np.array([0.0, 0.0, 0.25]))
    assert ratios[0] == 0.0
    assert math.isinf(ratios[1])
    assert ratios[2] == pytest.approx(2.0)


def test_format_inf():
    assert format_inf(math.inf) == "inf"
    assert format_inf(2.5) == 2.5


class TestSignificantStates:
    def test_lower_bound_against_nu_expert(self):
        inst = make_lower_bound_game(0.2)
        assert significant_states(inst.game, inst.experts.nu, P2, 0.5) == {(S1, 0), (S2, 1)}

    def test_player_2_can_reach_s3(self):
        inst = make_lower_bound_game(0.2)
        assert (S3, 1) in significant_states(inst.game, inst.experts.mu, P1, 0.5)

    def test_rejects_delta_out_of_range(self):
        inst = make_lower_bound_game(0.2)
        with pytest.raises(ValueError):
            significant_states(inst.game, inst.experts.mu, P1, 0.0)

    def test_default_significance(self):
        assert default_significance(0.1, 4, 2, 3) == pytest.approx(0.1 / 72)


class TestCoverage:
    def _audit(self, game, experts, n0, delta, seed):
        start = warm_start(game, experts, MailWarmConfig(n0=n0, seed=seed))
        rows = []
        for fixed in (P2, P1):
            rows += coverage_certificate(game, experts.policy(fixed), fixed, start.by_fixed(fixed), delta)
        return rows

    def test_lower_bound_game(self):
        inst = make_lower_bound_game(0.2)
        rows = self._audit(inst.game, inst.experts, 50, 0.05, seed=0)
        assert rows
        assert all(r.ok for r in rows)
        assert rows[0].bound == 2 * 3 * 2 * 2

    def test_random_game(self):
        game = make_random_game(4, 2, 2, 3, seed=7)
        experts = zero_sum_value_iteration(game).pair
        rows = self._audit(game, experts, 50, 0.05, seed=1)
        assert len({(r.state, r.stage) for r in rows}) > 4
        assert all(r.ok for r in rows)

    def test_uncovered_pair_fails(self):
        inst = make_lower_bound_game(0.2)
        start = warm_start(inst.game, inst.experts, MailWarmConfig(n0=5, seed=0))
        ps = start.by_fixed(P1)
        # every policy plays b1 at s1, so s3 is never entered
        actions = ps.actions.copy()
        actions[:, 0, S1] = 0
        blocked = PolicySet(actions, ps.targets, ps.episodes, ps.n_actions, ps.queries)
        rows = coverage_certificate(inst.game, inst.experts.mu, P1, blocked, 0.5)
        s3 = [r for r in rows if (r.state, r.stage) == (S3, 1)]
        assert s3 and not s3[0].ok and math.isinf(s3[0].ratio)


class TestDecomposition:
    @pytest.mark.parametrize("seed", range(10))
    def test_bound_holds_on_random_games(self, seed):
        game = make_random_game(3, 2, 2, 3, seed=100 + seed)
        experts = zero_sum_value_iteration(game).pair
        pair = random_pair(game, np.random.default_rng(seed))
        report = decomposition_bound(game, experts, pair)
        assert report.holds
        assert report.nash_gap >= -1e-9

    def test_experts_have_zero_error(self):
        game = make_random_game(3, 2, 2, 3, seed=5)
        experts = zero_sum_value_iteration(game).pair
        report = decomposition_bound(game, experts, experts)
        assert report.bound == pytest.approx(0.0, abs=1e-12)
        assert report.nash_gap == pytest.approx(0.0, abs=1e-9)


class TestSimplifiedGame:
    def test_uniform_at_s3_costs_five_and_a_half(self):
        inst = make_lower_bound_simplified(0.0)
        mu = np.array(inst.experts.mu.probs)
        mu[1, S3] = (0.5, 0.5)
        pair = PolicyPair(StagePolicy(mu), inst.experts.nu)
        assert nash_gap(inst.game, pair) == pytest.approx(5.5)

    def test_stage_level_gap(self):
        M = np.array([[1.0, 1.0], [0.0, -12.0]])
        uniform = np.array([0.5, 0.5])
        assert np.max(M @ uniform) - np.min(uniform @ M) == pytest.approx(6.5)


class TestClosedForms:
    @pytest.mark.parametrize("delta", [0.0, 0.2, 1.0, 2.0])
    @pytest.mark.parametrize("q", [0.0, 0.3, 0.5, 1.0])
    def test_exploitability_matches_dp(self, delta, q):
        assert exploitability_closed_form(delta, q) == pytest.approx(exploitability_by_dp(delta, q), abs=1e-12)
        assert exploitability_closed_form_row(delta, q) == pytest.approx(exploitability_by_dp_row(delta, q),
                                                                         abs=1e-12)

    def test_perturbed_nash(self):
        p, v = perturbed_mp_nash(0.2)
        assert p == pytest.approx(1 / 2.1)
        assert v == pytest.approx(0.1 / 2.1)

    def test_rejects_q_outside_unit_interval(self):
        with pytest.raises(ValueError):
            exploitability_closed_form(0.2, 1.5)

    def test_family_endpoints_are_equilibria(self):
        fam = LowerBoundFamily(0.4)
        g1_nash, g2_nash = fam.nash_means()
        assert fam.q_beta(1.0) == pytest.approx(g1_nash)
        assert fam.q_beta(0.0) == pytest.approx(g2_nash)
        assert fam.g1_exploitability(1.0) == pytest.approx(0.0)
        assert fam.g2_exploitability(0.0) == pytest.approx(0.0)

    def test_family_games(self):
        g1, g2 = LowerBoundFamily(0.3).games()
        assert g1.game.reward[1, S3, 0, 0] == pytest.approx(1.6)
        assert g2.game.reward[1, S3, 0, 0] == pytest.approx(1.3)

    def test_minimizer_balances_worst_case(self):
        eps = 0.5
        fam = LowerBoundFamily(eps)
        q_star, beta_star = strategy_class_minimizer(eps)
        parts = fam.pieces(q_star)
        assert parts["f1"] == pytest.approx(parts["f4"])
        assert fam.q_beta(beta_star) == pytest.approx(q_star)
        grid = np.linspace(0.0, 1.0, 100_001)
        assert grid[np.argmin(fam.worst_case(grid))] == pytest.approx(q_star, abs=1e-4)

    def test_epsilon_must_lie_in_unit_interval(self):
        with pytest.raises(ValueError):
            LowerBoundFamily(1.0)
        with pytest.raises(ValueError):
            strategy_class_minimizer(0.0)

    @pytest.mark.parametrize("eps", [0.05, 0.3, 0.9])
    def test_chi2_forms(self, eps):
        r, s = LowerBoundFamily(eps).nash_means()
        exact = chi2_bernoulli(r, s)
        assert exact == pytest.approx(chi2_nash_means(eps))
        assert exact <= chi2_nash_means_upper(eps)
        assert 9 * eps ** 2 / 300 <= chi2_nash_means_upper(eps) <= 16 * eps ** 2 / 128
        assert kl_bernoulli(r, s) <= exact

    def test_bh_lower(self):
        assert bh_lower(0.3, 0, 0.1) == pytest.approx(0.01)
        assert bh_lower(0.3, 10, 0.1) < bh_lower(0.3, 1, 0.1)


def test_binomial_ratio_bound_rarely_violated():
    rng = np.random.default_rng(0)
    n, delta = 500, 0.1
    bound = binomial_ratio_bound(n, delta)
    violations = 0
    for p in (0.001, 0.01, 0.05, 0.3):
        counts = rng.binomial(n, p, size=2000)
        violations += np.sum(p / np.maximum(counts, 1) > bound)
    assert violations / 8000 <= delta
