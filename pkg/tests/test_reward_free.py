import numpy as np
import pytest

from envs import S1, S2, make_lower_bound_game, make_random_game
from game_core import P1, P2, InducedMdp, PolicyPair, StagePolicy, induced_transition, occupancy
from reward_free import (EulerConfig, PolicySet, action_probs, collect_exploratory, euler, mixture_distribution,
                         qlearning_planner, warmup)


def _chain(horizon=3, n_states=3):
    P = np.zeros((horizon, n_states, 1, n_states))
    for s in range(n_states):
        P[:, s, 0, min(s + 1, n_states - 1)] = 1.0
    d0 = np.zeros(n_states)
    d0[0] = 1.0
    reward = np.zeros((horizon, n_states, 1))
    reward[horizon - 1, n_states - 1, 0] = 1.0
    return InducedMdp(P, reward, d0, exploration=True)


class TestEuler:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            EulerConfig(n_episodes=0)
        with pytest.raises(ValueError):
            EulerConfig(delta=1.0)

    def test_first_episode_is_uniform(self):
        result = euler(_chain(), EulerConfig(n_episodes=5), rng=0)
        assert result.n_episodes == 5
        assert np.all(result.actions[0] == -1)
        assert np.all(result.actions[1:] == 0)

    def test_optimistic_values_never_increase_on_a_chain(self):
        result = euler(_chain(), EulerConfig(n_episodes=30), rng=1)
        assert np.all(np.diff(result.optimistic_values) <= 1e-12)
        assert np.all(result.optimistic_values >= 1.0 - 1e-12)

    def test_constants(self):
        const = EulerConfig(n_episodes=10, delta=0.07).constants(n_states=3, n_actions=2, horizon=4)
        assert const.delta_prime == pytest.approx(0.01)
        assert const.log_term == pytest.approx(np.log(4 * 3 * 2 * 10 / 0.01))
        assert const.j == pytest.approx(4 / 3 * const.log_term)


def test_qlearning_planner_finds_rewarding_action():
    P = np.ones((1, 1, 2, 1))
    mdp = InducedMdp(P, np.array([[[0.0, 1.0]]]), np.ones(1))
    policy = qlearning_planner(mdp, n_iters=50, rng=0)
    np.testing.assert_array_equal(policy.probs[0, 0], [0.0, 1.0])


def test_action_probs_expands_uniform_entries():
    probs = action_probs(np.array([[1, -1]]), 2)
    np.testing.assert_allclose(probs, [[[0.0, 1.0], [0.5, 0.5]]])


class TestWarmup:
    def test_policy_set_layout(self):
        inst = make_lower_bound_game(0.2)
        ps = warmup(inst.game.dynamics(), inst.experts.nu, P2, n0=5, rng=0)
        assert len(ps) == 3 * 2 * 5
        assert ps.n_actions == 2
        assert ps.uniform_from_target()
        # only (s1, 0) and (s2, 1) are reachable against the expert
        assert ps.queries == 2 * 100 * 2

    def test_euler_backend_queries(self):
        inst = make_lower_bound_game(0.2)
        ps = warmup(inst.game.dynamics(), inst.experts.nu, P2, n0=5, backend="euler", rng=0)
        assert ps.queries == 2 * 5 * 2
        assert ps.uniform_from_target()

    def test_unreachable_targets_can_be_trained(self):
        inst = make_lower_bound_game(0.2)
        ps = warmup(inst.game.dynamics(), inst.experts.nu, P2, n0=5, rng=0, skip_unreachable=False)
        assert ps.queries == 6 * 100 * 2

    def test_rejects_unknown_backend(self):
        inst = make_lower_bound_game(0.2)
        with pytest.raises(ValueError, match="backend"):
            warmup(inst.game, inst.experts.nu, P2, n0=5, backend="ucbvi")

    def test_rejects_empty_block(self):
        inst = make_lower_bound_game(0.2)
        with pytest.raises(ValueError):
            warmup(inst.game, inst.experts.nu, P2, n0=0)


class TestMixture:
    def test_rows_sum_to_one(self):
        game = make_random_game(4, 2, 3, 3, seed=6)
        expert = StagePolicy.uniform(3, 4, 3)
        ps = warmup(game, expert, P2, n0=4, rng=2)
        p = mixture_distribution(game, expert, P2, ps).p
        np.testing.assert_allclose(p.sum(axis=(1, 2)), 1.0, atol=1e-12)

    def test_all_uniform_set_matches_uniform_occupancy(self):
        game = make_random_game(3, 2, 2, 3, seed=1)
        expert = StagePolicy.uniform(3, 3, 2)
        actions = np.full((4, 3, 3), -1, dtype=np.int16)
        ps = PolicySet(actions, np.zeros((4, 2), dtype=np.int64), np.arange(4), 2)
        mix = mixture_distribution(game, expert, P1, ps)
        exact = occupancy(game, PolicyPair(expert, StagePolicy.uniform(3, 3, 2))).state
        np.testing.assert_allclose(mix.state_marginal(), exact, atol=1e-12)

    def test_induced_transition_shape(self):
        inst = make_lower_bound_game(0.0)
        assert induced_transition(inst.game, P1, inst.experts.mu).shape == (2, 3, 2, 3)


class TestExploratoryCollection:
    def test_only_fixed_expert_is_queried(self):
        inst = make_lower_bound_game(0.2)
        ps = warmup(inst.game, inst.experts.nu, P2, n0=3, rng=0)
        data = collect_exploratory(inst.game, inst.experts.nu, P2, ps, 40, rng=4)
        assert data.queries(P1) == 0
        assert data.queries(P2) == 80
        # player 2 follows its expert, so s3 is never entered
        assert set(np.unique(data.s[data.h == 1])) == {S2}
        assert np.all(data.s[data.h == 0] == S1)

    def test_rejects_empty_policy_set(self):
        inst = make_lower_bound_game(0.2)
        empty = PolicySet(np.zeros((0, 2, 3), dtype=np.int16), np.zeros((0, 2), dtype=np.int64), np.zeros(0), 2)
        with pytest.raises(ValueError, match="empty"):
            collect_exploratory(inst.game, inst.experts.nu, P2, empty, 5)
