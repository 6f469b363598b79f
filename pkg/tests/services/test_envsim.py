import numpy as np
import pytest

from bgrl.core.exceptions import EnumerationLimitError, InvalidParameterError, RolloutError
from bgrl.models.config import EnvSpec
from bgrl.models.enums import EnvKind
from bgrl.services.envsim import (
    ChainEnv,
    DeceptivePointEnv,
    DeceptiveQuadLiteEnv,
    MultiGoalEnv,
    TabularEnv,
    Trajectory,
    deceptive_point_step,
    enumerate_trajectories,
    make_env,
    multigoal_reward,
    rollout,
    rollout_many,
    tabular_value,
    verify_policy_improvement,
)
from bgrl.services.policy import GaussianPolicy, TabularPolicy, dense_arch, init_params


class _ConstantPolicy:
    def __init__(self, action):
        self.action = np.asarray(action, dtype=np.float64)

    def act(self, state, rng):
        return self.action


def test_multigoal_reward_is_taken_before_the_move():
    env = MultiGoalEnv()
    state, reward = env.step(np.array([1.0, 0.0]), np.array([0.1, 0.0]), np.random.default_rng(0))
    assert reward == pytest.approx(-0.3)
    np.testing.assert_allclose(state, [1.1, 0.0])
    assert multigoal_reward([0.0, 0.0], [0.0, 0.0]) == pytest.approx(-1.0)


def test_wall_truncates_crossing_moves():
    state, reward = deceptive_point_step(np.array([0.0, 1.4]), np.array([0.0, 0.25]))
    assert state[0] == 0.0
    assert state[1] < 1.5
    assert state[1] == np.nextafter(1.5, 1.4)
    assert reward == pytest.approx(-(3.0 - state[1]))


def test_moves_around_the_wall_are_free():
    state, _ = deceptive_point_step(np.array([2.1, 1.4]), np.array([0.0, 0.25]))
    np.testing.assert_allclose(state, [2.1, 1.65])


def test_point_env_clips_speed():
    env = DeceptivePointEnv()
    state, _ = env.step(np.array([0.0, 0.0]), np.array([3.0, -3.0]), np.random.default_rng(0))
    np.testing.assert_allclose(state, [0.25, -0.25])
    assert env.blocked_distance() == pytest.approx(1.5)


def test_quad_lite_stops_vertical_motion_at_the_wall():
    env = DeceptiveQuadLiteEnv()
    state, _ = env.step(np.array([0.0, 1.45, 0.0, 0.1]), np.array([0.0, 0.1]), np.random.default_rng(0))
    assert state[1] < 1.5
    assert state[3] == 0.0
    free, _ = env.step(np.array([0.0, 0.0, 0.0, 0.0]), np.array([0.05, 0.5]), np.random.default_rng(0))
    np.testing.assert_allclose(free, [0.05, 0.1, 0.05, 0.1])


def test_chain_rewards_and_expert():
    env = ChainEnv(length=10, horizon=20)
    rng = np.random.default_rng(0)
    start = env.reset(rng)
    np.testing.assert_array_equal(start, [0.0])
    stay, reward = env.step(start, np.array([-1.0]), rng)
    assert env.position(stay) == 0
    assert reward == pytest.approx(0.05)
    expert = env.scripted_expert()
    assert expert.total_reward == pytest.approx(13.0)
    assert env.position(expert.states[-1]) == 9


def test_trajectory_length_checked():
    with pytest.raises(InvalidParameterError):
        Trajectory(np.zeros((3, 2)), np.zeros((3, 2)), np.zeros(2), horizon=2)


def test_rollout_records_horizon_plus_one_steps():
    env = DeceptivePointEnv(horizon=5)
    tau = rollout(env, _ConstantPolicy([0.0, 0.1]), seed=0)
    assert len(tau.states) == len(tau.actions) == len(tau.rewards) == 6
    np.testing.assert_allclose(tau.states[-1], [0.0, 0.5])


def test_rollout_rejects_non_finite_actions():
    with pytest.raises(RolloutError) as info:
        rollout(DeceptivePointEnv(horizon=3), _ConstantPolicy([np.nan, 0.0]), seed=0, perturbation=4)
    assert info.value.step == 0
    assert info.value.perturbation == 4


def test_rollouts_are_seeded_and_order_preserving(threads):
    env = MultiGoalEnv(horizon=10)
    policy = GaussianPolicy(init_params(dense_arch(2, 2, (4,)), seed=1))
    seeds = list(range(6))
    sequential = [rollout(env, policy, s) for s in seeds]
    threads(3)
    pooled = rollout_many(env, [policy] * 6, seeds)
    for a, b in zip(sequential, pooled):
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.actions, b.actions)


def test_make_env_builds_each_kind():
    assert isinstance(make_env(EnvSpec(kind=EnvKind.MULTI_GOAL)), MultiGoalEnv)
    assert isinstance(make_env(EnvSpec(kind=EnvKind.CHAIN, chain_length=4)), ChainEnv)
    tabular = make_env(EnvSpec(kind=EnvKind.TABULAR_RANDOM, horizon=2, states_per_layer=3), seed=1)
    assert isinstance(tabular, TabularEnv)
    assert tabular.num_states == 9


def test_exact_value_matches_enumeration(small_mdp):
    pi = TabularPolicy.random(small_mdp.num_states, small_mdp.num_actions, seed=0)
    values = tabular_value(small_mdp, pi)
    enumerated = enumerate_trajectories(small_mdp, pi)
    assert enumerated.probabilities.sum() == pytest.approx(1.0)
    expected = sum(p * tau.total_reward for p, tau in zip(enumerated.probabilities, enumerated.trajectories))
    assert values.total == pytest.approx(expected, abs=1e-12)
    assert values.rho.sum() == pytest.approx(small_mdp.horizon + 1)


def test_enumeration_limit(small_mdp):
    with pytest.raises(EnumerationLimitError):
        enumerate_trajectories(small_mdp, TabularPolicy.uniform(small_mdp.num_states, 2), limit=3)


def test_improvement_bound_is_tight_for_identical_policies(small_mdp):
    pi = TabularPolicy.random(small_mdp.num_states, 2, seed=4)
    report = verify_policy_improvement(small_mdp, pi, pi, wd0=0.0)
    assert report.holds
    assert report.visitation_bound_holds
    assert report.slack == pytest.approx(0.0, abs=1e-12)
    assert report.value_pi == pytest.approx(report.value_pi_tilde)


def test_policy_table_shape_checked(small_mdp):
    with pytest.raises(InvalidParameterError):
        tabular_value(small_mdp, np.full((2, 2), 0.5))
