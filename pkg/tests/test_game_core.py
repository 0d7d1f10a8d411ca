import itertools

import numpy as np
import pytest

from envs import make_lower_bound_game, make_random_game, random_pair
from game_core import (P1, P2, GameDynamics, MarkovGame, PolicyPair, StagePolicy, as_distribution, best_response,
                       evaluate, game_from_dict, game_to_dict, game_value, induce_mdp, max_visitation,
                       max_visitation_table, occupancy, other_player, policy_chooser, sample_categorical, simulate)


def _one_state_game(payoff, horizon=1):
    M = np.asarray(payoff, dtype=float)
    A, B = M.shape
    P = np.ones((horizon, 1, A, B, 1))
    return MarkovGame(P, np.ones(1), np.broadcast_to(M, (horizon, 1, A, B)), r_max=float(np.abs(M).max()))


def _all_deterministic(horizon, n_states, n_actions):
    for table in itertools.product(range(n_actions), repeat=horizon * n_states):
        yield StagePolicy.deterministic(np.reshape(table, (horizon, n_states)), n_actions)


class TestValidation:
    def test_rejects_rows_not_summing_to_one(self):
        P = np.full((1, 2, 1, 1, 2), 0.4)
        with pytest.raises(ValueError, match="sum to 1"):
            GameDynamics(P, np.array([1.0, 0.0]))

    def test_rejects_negative_probabilities(self):
        with pytest.raises(ValueError, match="negative"):
            as_distribution([1.5, -0.5], "d0")

    def test_rejects_reward_above_bound(self):
        P = np.ones((1, 1, 1, 1, 1))
        with pytest.raises(ValueError, match="r_max"):
            MarkovGame(P, np.ones(1), np.full((1, 1, 1, 1), 2.0), r_max=1.0)

    def test_renormalizes_tiny_drift(self):
        d = as_distribution([0.5, 0.5 + 1e-14], "d0")
        assert d.sum() == pytest.approx(1.0, abs=1e-15)

    def test_arrays_are_read_only(self):
        game = make_random_game(3, 2, 2, 2, seed=0)
        with pytest.raises(ValueError):
            game.transition[0, 0, 0, 0, 0] = 1.0

    def test_dynamics_drops_reward(self):
        game = make_random_game(3, 2, 2, 2, seed=0)
        dyn = game.dynamics()
        assert not isinstance(dyn, MarkovGame)
        assert dyn.n_states == 3 and dyn.horizon == 2

    def test_other_player(self):
        assert other_player(P1) == P2
        assert other_player(P2) == P1
        with pytest.raises(ValueError):
            other_player(3)


class TestEvaluation:
    def test_matching_pennies_uniform_value_zero(self):
        game = _one_state_game([[1, -1], [-1, 1]])
        pair = PolicyPair(StagePolicy.uniform(1, 1, 2), StagePolicy.uniform(1, 1, 2))
        assert game_value(game, pair) == pytest.approx(0.0, abs=1e-12)

    def test_pure_pair_value(self):
        game = _one_state_game([[1, -1], [-1, 1]])
        pair = PolicyPair(StagePolicy.deterministic([[0]], 2), StagePolicy.deterministic([[0]], 2))
        assert game_value(game, pair) == pytest.approx(1.0)

    def test_value_sums_over_stages(self):
        game = _one_state_game([[0.5, 0.5], [0.5, 0.5]], horizon=3)
        pair = PolicyPair(StagePolicy.uniform(3, 1, 2), StagePolicy.uniform(3, 1, 2))
        V, Q = evaluate(game, pair)
        assert V[0, 0] == pytest.approx(1.5)
        assert V[3, 0] == 0.0
        assert Q.shape == (3, 1, 2, 2)

    def test_occupancy_rows_are_distributions(self):
        game = make_random_game(5, 3, 2, 4, seed=3)
        pair = random_pair(game, np.random.default_rng(1))
        occ = occupancy(game, pair)
        np.testing.assert_allclose(occ.state.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(occ.joint.sum(axis=(2, 3)), occ.state, atol=1e-12)

    def test_expert_never_reaches_s3(self):
        inst = make_lower_bound_game(0.4)
        occ = occupancy(inst.game, inst.experts)
        assert occ.state[1, 2] == 0.0


class TestBestResponse:
    def test_value_matches_evaluation(self):
        game = make_random_game(4, 2, 3, 3, seed=5)
        pair = random_pair(game, np.random.default_rng(0))
        br = best_response(induce_mdp(game, P2, pair.nu))
        assert br.value == pytest.approx(game_value(game, PolicyPair(br.policy, pair.nu)), abs=1e-10)
        br2 = best_response(induce_mdp(game, P1, pair.mu))
        assert -br2.value == pytest.approx(game_value(game, PolicyPair(pair.mu, br2.policy)), abs=1e-10)

    def test_best_response_dominates_random_policies(self):
        game = make_random_game(4, 2, 2, 3, seed=9)
        rng = np.random.default_rng(2)
        pair = random_pair(game, rng)
        best = best_response(induce_mdp(game, P2, pair.nu)).value
        for _ in range(20):
            other = random_pair(game, rng).mu
            assert game_value(game, PolicyPair(other, pair.nu)) <= best + 1e-10

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_exhaustive_deterministic_search(self, seed):
        game = make_random_game(3, 2, 2, 2, seed=seed)
        pair = random_pair(game, np.random.default_rng(seed))
        best_mu = max(game_value(game, PolicyPair(mu, pair.nu)) for mu in _all_deterministic(2, 3, 2))
        best_nu = min(game_value(game, PolicyPair(pair.mu, nu)) for nu in _all_deterministic(2, 3, 2))
        assert best_response(induce_mdp(game, P2, pair.nu)).value == pytest.approx(best_mu, abs=1e-10)
        assert -best_response(induce_mdp(game, P1, pair.mu)).value == pytest.approx(best_nu, abs=1e-10)

    def test_ties_pick_lowest_index(self):
        game = _one_state_game([[1, 1], [1, 1]])
        br = best_response(induce_mdp(game, P2, StagePolicy.uniform(1, 1, 2)))
        assert br.actions[0, 0] == 0

    def test_mask_restricts_actions(self):
        game = _one_state_game([[1, 1], [0, 0]])
        mdp = induce_mdp(game, P2, StagePolicy.uniform(1, 1, 2))
        allowed = np.array([[[False, True]]])
        assert best_response(mdp, allowed=allowed).value == pytest.approx(0.0)

    def test_mask_must_leave_an_action(self):
        game = _one_state_game([[1, 1], [0, 0]])
        mdp = induce_mdp(game, P2, StagePolicy.uniform(1, 1, 2))
        with pytest.raises(ValueError, match="without actions"):
            best_response(mdp, allowed=np.zeros((1, 1, 2), dtype=bool))

    def test_reward_free_dynamics_need_reward(self):
        game = make_random_game(3, 2, 2, 2, seed=0)
        with pytest.raises(ValueError, match="reward table"):
            induce_mdp(game.dynamics(), P2, StagePolicy.uniform(2, 3, 2))


class TestMaxVisitation:
    def test_lower_bound_reachability(self):
        inst = make_lower_bound_game(0.0)
        # player 1 cannot steer to s3 while player 2 plays b1
        mdp = induce_mdp(inst.game, P2, inst.experts.nu)
        value, _ = max_visitation(mdp, target_state=2, target_stage=1)
        assert value == 0.0
        value, _ = max_visitation(mdp, target_state=1, target_stage=1)
        assert value == 1.0

    def test_table_matches_pointwise(self):
        game = make_random_game(4, 2, 2, 3, seed=11)
        mdp = induce_mdp(game, P1, StagePolicy.uniform(3, 4, 2))
        table = max_visitation_table(mdp)
        for h in range(3):
            for s in range(4):
                assert table[h, s] == pytest.approx(max_visitation(mdp, s, h)[0], abs=1e-12)

    def test_table_matches_exhaustive_search(self):
        game = make_random_game(3, 2, 2, 2, seed=6)
        nu = random_pair(game, np.random.default_rng(6)).nu
        table = max_visitation_table(induce_mdp(game, P2, nu))
        exhaustive = np.max([occupancy(game, PolicyPair(mu, nu)).state for mu in _all_deterministic(2, 3, 2)],
                            axis=0)
        np.testing.assert_allclose(table, exhaustive, atol=1e-12)

    def test_rejects_bad_target(self):
        game = make_random_game(3, 2, 2, 2, seed=0)
        mdp = induce_mdp(game, P1, StagePolicy.uniform(2, 3, 2))
        with pytest.raises(ValueError):
            max_visitation(mdp, 0, 5)


class TestSampling:
    def test_zero_probability_never_drawn(self):
        rng = np.random.default_rng(0)
        draws = sample_categorical(rng, np.tile([0.0, 0.3, 0.0, 0.7], (5000, 1)))
        assert set(np.unique(draws)) <= {1, 3}

    def test_simulate_is_reproducible(self):
        game = make_random_game(4, 2, 2, 3, seed=1)
        pair = random_pair(game, np.random.default_rng(0))

        def run(seed):
            rng = np.random.default_rng(seed)
            return simulate(game, policy_chooser(pair.mu, rng), policy_chooser(pair.nu, rng), 50, rng)

        for x, y in zip(run(7), run(7)):
            np.testing.assert_array_equal(x, y)

    def test_empirical_occupancy_close_to_exact(self):
        game = make_random_game(3, 2, 2, 3, seed=4)
        pair = random_pair(game, np.random.default_rng(3))
        rng = np.random.default_rng(5)
        states, _, _ = simulate(game, policy_chooser(pair.mu, rng), policy_chooser(pair.nu, rng), 20000, rng)
        exact = occupancy(game, pair).state
        for h in range(3):
            freq = np.bincount(states[:, h], minlength=3) / 20000
            np.testing.assert_allclose(freq, exact[h], atol=0.02)


def test_game_dict_round_trip_preserves_arrays():
    game = make_random_game(3, 2, 2, 2, seed=8)
    restored = game_from_dict(game_to_dict(game))
    np.testing.assert_allclose(restored.transition, game.transition)
    np.testing.assert_allclose(restored.reward, game.reward)


def test_game_dict_missing_key():
    data = game_to_dict(make_random_game(2, 2, 2, 1, seed=0))
    del data["P"]
    with pytest.raises(KeyError):
        game_from_dict(data)


def test_game_dict_shape_mismatch():
    data = game_to_dict(make_random_game(2, 2, 2, 1, seed=0))
    data["S"] = 3
    with pytest.raises(ValueError):
        game_from_dict(data)
