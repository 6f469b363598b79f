import numpy as np
import pytest

from bgrl.core.exceptions import InvalidParameterError
from bgrl.models.enums import BEMKind
from bgrl.services.embed import (
    ProbeDistribution,
    embed_trajectory,
    embedding_distribution,
    exact_embedding_distribution,
    make_bem,
    probe_embedding,
    probe_points,
    tabular_bem,
)
from bgrl.services.envsim import DeceptivePointEnv, MultiGoalEnv, TabularEnv, Trajectory, tabular_value
from bgrl.services.policy import GaussianPolicy, TabularPolicy, dense_arch, init_params


@pytest.fixture
def point_trajectory():
    states = np.array([[0.0, 0.0], [0.5, 0.0], [1.5, 1.0]])
    actions = np.array([[0.5, 0.0], [1.0, 1.0], [0.0, 0.0]])
    rewards = np.array([1.0, 2.0, 3.0])
    return Trajectory(states, actions, rewards, horizon=2)


def test_continuous_embeddings(point_trajectory):
    env = DeceptivePointEnv(horizon=2)
    cases = {
        BEMKind.FINAL_STATE: [1.5, 1.0],
        BEMKind.ACTION_CONCAT: [0.5, 0.0, 1.0, 1.0, 0.0, 0.0],
        BEMKind.TOTAL_REWARD: [6.0],
        BEMKind.REWARD_TO_GO: [6.0, 5.0, 3.0],
        BEMKind.MEAN_X_DISPLACEMENT: [0.75],
    }
    for kind, expected in cases.items():
        bem = make_bem(kind, env)
        point = embed_trajectory(bem, point_trajectory)
        assert point.shape == (bem.output_dim,)
        np.testing.assert_allclose(point, expected)


def test_count_embeddings_on_tabular_trajectories(small_mdp):
    tau = Trajectory(np.array([0, 2, 5]), np.array([1, 0, 1]), np.zeros(3), horizon=2)
    visits = embed_trajectory(tabular_bem(BEMKind.STATE_VISIT_COUNT, small_mdp), tau)
    np.testing.assert_array_equal(np.flatnonzero(visits), [0, 2, 5])
    pairs = embed_trajectory(tabular_bem(BEMKind.STATE_ACTION_COUNT, small_mdp), tau)
    np.testing.assert_array_equal(np.flatnonzero(pairs), [1, 4, 11])
    frequency = embed_trajectory(tabular_bem(BEMKind.FIXED_STATE_FREQ, small_mdp, fixed_state=2), tau)
    np.testing.assert_array_equal(frequency, [1.0])


def test_count_embeddings_need_tabular_environments():
    with pytest.raises(InvalidParameterError):
        make_bem(BEMKind.STATE_VISIT_COUNT, MultiGoalEnv())


def test_embedding_distribution_merges_equal_points(point_trajectory):
    bem = make_bem(BEMKind.TOTAL_REWARD, DeceptivePointEnv(horizon=2))
    distribution = embedding_distribution(bem, [point_trajectory, point_trajectory])
    assert distribution.size == 1
    np.testing.assert_allclose(distribution.weights, [1.0])


def test_visit_count_mean_is_the_visitation_measure(small_mdp):
    pi = TabularPolicy.random(small_mdp.num_states, 2, seed=2)
    bem = tabular_bem(BEMKind.STATE_VISIT_COUNT, small_mdp)
    distribution = exact_embedding_distribution(small_mdp, pi, bem)
    assert distribution.weights.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(distribution.mean(), tabular_value(small_mdp, pi).rho, atol=1e-12)


def test_probe_buffer_is_fifo():
    probe = ProbeDistribution(capacity=3, seed=0)
    probe.add([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    assert len(probe) == 3
    np.testing.assert_array_equal(probe.snapshot()[:, 0], [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(probe.sample(5, seed=1), probe.sample(5, seed=1))


def test_empty_probe_cannot_be_sampled():
    with pytest.raises(InvalidParameterError):
        ProbeDistribution(capacity=2).sample(1)


def test_probe_points_pair_states_with_mean_actions():
    policy = GaussianPolicy(init_params(dense_arch(2, 2, (3,)), seed=0))
    states = np.array([[0.0, 1.0], [2.0, -1.0]])
    points = probe_points(policy, states)
    np.testing.assert_array_equal(points[:, :2], states)
    np.testing.assert_allclose(points[:, 2:], policy.mean_actions(states))
    assert probe_points(policy, states, include_log_std=True).shape == (2, 6)

    probe = ProbeDistribution(capacity=10)
    probe.add(states)
    assert probe_embedding(probe, policy, 8, seed=0).dim == 4


def test_tabular_env_reports_discrete_kinds(small_mdp):
    bem = make_bem(BEMKind.STATE_ACTION_COUNT, TabularEnv(small_mdp))
    assert bem.output_dim == small_mdp.num_states * small_mdp.num_actions
