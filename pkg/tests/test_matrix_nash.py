import numpy as np
import pytest

from envs import make_lower_bound_game, make_random_game, perturbed_payoff, random_pair
from game_core import PolicyPair, StagePolicy
from matrix_nash import (MatrixGame, exploitabilities, game_from_matrix, is_nash, mix_equilibria, nash_gap,
                         solve_matrix_game, zero_sum_value_iteration)


@pytest.mark.parametrize("delta", [0.0, 0.2, 1.0, 2.0])
def test_perturbed_matching_pennies_closed_form(delta):
    sol = solve_matrix_game(perturbed_payoff(delta))
    p = 1.0 / (2.0 + delta / 2.0)
    v = (delta / 2.0) / (2.0 + delta / 2.0)
    assert sol.row_strategy[0] == pytest.approx(p, abs=1e-9)
    assert sol.col_strategy[0] == pytest.approx(p, abs=1e-9)
    assert sol.value == pytest.approx(v, abs=1e-9)


def test_pure_saddle_point():
    sol = solve_matrix_game([[1, 1], [0, -12]])
    np.testing.assert_array_equal(sol.row_strategy, [1.0, 0.0])
    assert sol.value == 1.0


def test_priority_selects_among_tied_equilibria():
    M = np.zeros((2, 2))
    first = solve_matrix_game(M)
    second = solve_matrix_game(M, row_priority=[1, 0], col_priority=[1, 0])
    np.testing.assert_array_equal(first.row_strategy, [1.0, 0.0])
    np.testing.assert_array_equal(second.row_strategy, [0.0, 1.0])


def test_priority_must_be_permutation():
    with pytest.raises(ValueError, match="permutation"):
        solve_matrix_game(np.eye(2), row_priority=[0, 0])


def test_rejects_non_finite_payoff():
    with pytest.raises(ValueError):
        MatrixGame([[np.inf, 0.0], [0.0, 1.0]])


@pytest.mark.parametrize("seed", range(10))
def test_random_matrices_are_solved_exactly(seed):
    rng = np.random.default_rng(seed)
    shape = (int(rng.integers(2, 7)), int(rng.integers(2, 7)))
    M = rng.uniform(-1, 1, size=shape)
    sol = solve_matrix_game(M)
    row_gain, col_gain = sol.exploitability(M)
    assert row_gain <= 1e-7
    assert col_gain <= 1e-7


def test_rock_paper_scissors_uses_full_support():
    M = np.array([[0, -1, 1], [1, 0, -1], [-1, 1, 0]], dtype=float)
    sol = solve_matrix_game(M)
    np.testing.assert_allclose(sol.row_strategy, 1.0 / 3.0, atol=1e-9)
    assert sol.value == pytest.approx(0.0, abs=1e-9)


class TestValueIteration:
    @pytest.mark.parametrize("seed", range(20))
    def test_random_games_have_zero_gap(self, seed):
        game = make_random_game(3, 2, 2, 3, seed=seed)
        result = zero_sum_value_iteration(game)
        assert nash_gap(game, result.pair) <= 1e-6

    def test_lower_bound_game_value_zero(self):
        inst = make_lower_bound_game(0.0)
        result = zero_sum_value_iteration(inst.game)
        assert result.nash_value == pytest.approx(0.0, abs=1e-12)

    def test_expert_pair_is_nash(self):
        inst = make_lower_bound_game(0.6)
        assert is_nash(inst.game, inst.experts)


class TestNashGap:
    def test_nonnegative_on_random_pairs(self):
        game = make_random_game(4, 3, 2, 3, seed=2)
        rng = np.random.default_rng(0)
        for _ in range(10):
            assert nash_gap(game, random_pair(game, rng)) >= -1e-9

    def test_split_sums_to_gap(self):
        game = make_random_game(3, 2, 2, 2, seed=4)
        pair = random_pair(game, np.random.default_rng(1))
        gain, loss = exploitabilities(game, pair)
        assert gain >= -1e-9 and loss >= -1e-9
        assert gain + loss == pytest.approx(nash_gap(game, pair), abs=1e-9)

    def test_one_stage_matches_matrix_exploitability(self):
        M = perturbed_payoff(1.0)
        game = game_from_matrix(M)
        mu = StagePolicy(np.array([[[0.2, 0.8]]]))
        nu = StagePolicy(np.array([[[0.7, 0.3]]]))
        expected = np.max(M @ nu.probs[0, 0]) - np.min(mu.probs[0, 0] @ M)
        assert nash_gap(game, PolicyPair(mu, nu)) == pytest.approx(expected, abs=1e-12)


def test_mix_equilibria_stays_nash():
    game = game_from_matrix(np.zeros((2, 2)))
    a = PolicyPair(StagePolicy.deterministic([[0]], 2), StagePolicy.deterministic([[0]], 2))
    b = PolicyPair(StagePolicy.deterministic([[1]], 2), StagePolicy.deterministic([[1]], 2))
    mixed = mix_equilibria([a, b], [0.5, 0.5])
    np.testing.assert_allclose(mixed.mu.probs[0, 0], [0.5, 0.5])
    assert is_nash(game, mixed)


def test_mix_equilibria_rejects_bad_weights():
    a = PolicyPair(StagePolicy.uniform(1, 1, 2), StagePolicy.uniform(1, 1, 2))
    with pytest.raises(ValueError):
        mix_equilibria([a, a], [0.5])
