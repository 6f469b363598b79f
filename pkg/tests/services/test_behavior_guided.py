import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bgrl.core.exceptions import InvalidParameterError
from bgrl.core.seeding import derive_seed
from bgrl.models.config import RegularizedObjectiveCfg
from bgrl.models.enums import BEMKind, CostKind
from bgrl.services.baselines import es_step_with_divergence
from bgrl.services.behavior_guided import (
    BehaviorGuidedES,
    BehaviorGuidedPG,
    RepulsionLearner,
    bges_step,
    bgpg_step_offpolicy,
    bgpg_step_onpolicy,
    es_gradient,
    imitation_run,
    pathwise_lambda_grad,
    reinforce_gradient,
    repulsion_step,
    repulsion_surrogates,
    reward_to_go_advantages,
    trajectory_scores,
)
from bgrl.services.embed import ProbeDistribution, embed_all, make_bem, probe_points, tabular_bem
from bgrl.services.envsim import MultiGoalEnv, TabularEnv, Trajectory, rollout_many
from bgrl.services.policy import GaussianPolicy, TabularPolicy, dense_arch, init_params
from bgrl.services.rff import rff_new
from bgrl.services.transport import EmpiricalEmbedding, offpolicy_lambda_gap, potentials_new


@pytest.fixture
def env():
    return MultiGoalEnv(horizon=4)


@pytest.fixture
def gaussian_policy():
    return GaussianPolicy(init_params(dense_arch(2, 2, (4,)), seed=5))


def _potentials(dim, features=50, gamma=0.1):
    return potentials_new(rff_new(dim, features, 1.0, seed=2), gamma=gamma, alpha=0.05)


def test_es_gradient_mixes_reward_and_novelty():
    eps = np.eye(2)
    gradient = es_gradient(eps, np.array([2.0, 0.0]), 1.0, np.array([0.5, 0.5]), beta=0.5, sigma=0.1)
    np.testing.assert_allclose(gradient, [7.5, -2.5])


def test_zero_beta_bges_is_vanilla_es(env, gaussian_policy):
    policy = GaussianPolicy(gaussian_policy.params, deterministic=True)
    bem = make_bem(BEMKind.FINAL_STATE, env)
    cfg = RegularizedObjectiveCfg(beta=0.0, gamma=0.1, warm_start_steps=5)
    guided = bges_step(policy, env, bem, cfg, _potentials(2), n=4, sigma=0.05, eta=0.1, seed=9)
    vanilla = es_step_with_divergence(policy, env, bem, None, n=4, sigma=0.05, eta=0.1, beta=0.7, seed=9)
    np.testing.assert_array_equal(guided.policy.theta, vanilla.policy.theta)
    assert guided.record.mean_reward == vanilla.record.mean_reward


def test_bges_warm_starts_the_potentials(env, gaussian_policy):
    bem = make_bem(BEMKind.FINAL_STATE, env)
    cfg = RegularizedObjectiveCfg(beta=0.5, gamma=0.1, warm_start_steps=7)
    result = bges_step(gaussian_policy, env, bem, cfg, _potentials(2), n=4, sigma=0.05, eta=0.1, seed=1)
    assert result.potentials.t == 7
    assert result.embedding.dim == 2
    assert np.isfinite(result.record.wd_estimate)
    assert result.policy.theta.shape == gaussian_policy.theta.shape


def test_behavior_guided_es_keeps_a_window(env, gaussian_policy):
    bem = make_bem(BEMKind.FINAL_STATE, env)
    cfg = RegularizedObjectiveCfg(beta=0.5, gamma=0.1, warm_start_steps=3, base_policy_window=2)
    learner = BehaviorGuidedES(gaussian_policy, env, bem, cfg, _potentials(2), n=3, sigma=0.05, eta=0.1)
    assert learner.base() is None
    records = [learner.step(seed) for seed in range(3)]
    assert [record.iter for record in records] == [0, 1, 2]
    assert len(learner.window) == 2
    assert learner.base().size <= 6


def test_imitation_needs_attraction(env, gaussian_policy):
    bem = make_bem(BEMKind.FINAL_STATE, env)
    expert = EmpiricalEmbedding.from_points(np.zeros((1, 2)))
    cfg = RegularizedObjectiveCfg(beta=0.5)
    with pytest.raises(InvalidParameterError):
        imitation_run(gaussian_policy, env, bem, expert, cfg, _potentials(2), iterations=1, n=3, sigma=0.05,
                      eta=0.1, seed=0)


def test_imitation_runs_against_a_fixed_expert(env, gaussian_policy):
    bem = make_bem(BEMKind.FINAL_STATE, env)
    expert = EmpiricalEmbedding.from_points(np.array([[1.0, 1.0]]))
    cfg = RegularizedObjectiveCfg(beta=-0.5, gamma=0.1, warm_start_steps=5)
    policy, records = imitation_run(gaussian_policy, env, bem, expert, cfg, _potentials(2), iterations=2, n=3,
                                    sigma=0.05, eta=0.1, seed=0)
    assert len(records) == 2
    assert policy.theta.shape == gaussian_policy.theta.shape


def test_reinforce_with_equal_returns_is_zero(env, gaussian_policy):
    trajectories = rollout_many(env, [gaussian_policy] * 3, [1, 2, 3])
    gradient = reinforce_gradient(gaussian_policy, trajectories, np.full(3, 4.0))
    np.testing.assert_array_equal(gradient, np.zeros_like(gaussian_policy.theta))


def test_reward_to_go_advantages_are_centered():
    taus = [Trajectory(np.zeros((3, 1)), np.zeros((3, 1)), np.array(r, dtype=float), horizon=2)
            for r in ([1, 0, 1], [0, 0, 3])]
    advantages = reward_to_go_advantages(taus)
    np.testing.assert_allclose(advantages, [[-0.5, -1.0, -1.0], [0.5, 1.0, 1.0]])


def test_repulsion_surrogates_with_zero_potentials():
    pot = _potentials(1, gamma=0.5)
    xs, ys = np.array([[0.0], [1.0]]), np.array([[1.0], [1.0]])
    shaped_a, shaped_b, saturated = repulsion_surrogates(pot, [1.0, 2.0], [3.0, 4.0], xs, ys, beta=0.2,
                                                         cost=CostKind.SQUARED_ABS_SCALAR)
    damping = 0.2 * 0.5 * np.exp(-np.array([1.0, 0.0]) / 0.5)
    np.testing.assert_allclose(shaped_a, np.array([1.0, 2.0]) + damping)
    np.testing.assert_allclose(shaped_b, np.array([3.0, 4.0]) + damping)
    assert saturated == 0


def test_tabular_onpolicy_step(small_mdp):
    env = TabularEnv(small_mdp)
    policy = TabularPolicy.uniform(small_mdp.num_states, small_mdp.num_actions)
    bem = tabular_bem(BEMKind.STATE_VISIT_COUNT, small_mdp)
    cfg = RegularizedObjectiveCfg(beta=0.1, gamma=0.1, dual_steps_per_iter=5)
    result = bgpg_step_onpolicy(policy, env, bem, cfg, _potentials(small_mdp.num_states), M=4, L=2, eta=0.1,
                                seed=3, cost=CostKind.L1)
    assert result.potentials.t == 10
    assert result.policy.logits.shape == policy.logits.shape
    assert np.isfinite(result.record.dual_objective)


def test_onpolicy_needs_enough_trajectories(small_mdp):
    env = TabularEnv(small_mdp)
    policy = TabularPolicy.uniform(small_mdp.num_states, small_mdp.num_actions)
    bem = tabular_bem(BEMKind.STATE_VISIT_COUNT, small_mdp)
    with pytest.raises(InvalidParameterError):
        bgpg_step_onpolicy(policy, env, bem, RegularizedObjectiveCfg(), _potentials(6), M=1, L=1, eta=0.1, seed=0)


def test_offpolicy_step_fills_the_probe(env, gaussian_policy):
    probe = ProbeDistribution(capacity=100, seed=0)
    cfg = RegularizedObjectiveCfg(beta=0.2, gamma=0.1, dual_steps_per_iter=5)
    result = bgpg_step_offpolicy(gaussian_policy, env, probe, cfg, _potentials(4), M=3, L=1, eta=0.05, seed=4,
                                 probe_samples=8)
    assert len(probe) == 3 * (env.horizon + 1)
    assert result.potentials.t == 5
    assert np.isfinite(result.record.wd_estimate)


def test_behavior_guided_pg_needs_an_embedding(env, gaussian_policy):
    with pytest.raises(InvalidParameterError):
        BehaviorGuidedPG(gaussian_policy, env, None, RegularizedObjectiveCfg(), _potentials(4), M=2, L=1, eta=0.1)


def test_pathwise_gradient_matches_finite_differences(rng, gaussian_policy):
    pot = _potentials(4, features=30)
    pot = replace(pot, p_mu=rng.normal(size=30))
    states = rng.normal(size=(5, 2))
    beta = 0.7
    analytic = pathwise_lambda_grad(pot, gaussian_policy, states, beta=beta)

    def objective(theta):
        shifted = gaussian_policy.with_theta(theta)
        return beta * float(pot.lambda_mu(probe_points(shifted, states)).mean())

    theta, h = gaussian_policy.theta, 1e-6
    numeric = np.zeros_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        numeric[j] = (objective(theta + e) - objective(theta - e)) / (2 * h)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


def test_pathwise_damping_gradient_matches_finite_differences(rng, gaussian_policy):
    pot = _potentials(4, features=30, gamma=1.0)
    pot = replace(pot, p_mu=0.5 * rng.normal(size=30), p_nu=0.5 * rng.normal(size=30))
    states = rng.normal(size=(5, 2))
    partner = rng.normal(size=(5, 4))
    beta = 0.7
    analytic = pathwise_lambda_grad(pot, gaussian_policy, states, partner=partner, beta=beta,
                                    cost=CostKind.SQUARED_L2, differentiate_cost=True)

    def objective(theta):
        points = probe_points(gaussian_policy.with_theta(theta), states)
        lam_mu = pot.lambda_mu(points)
        costs = np.sum((points - partner) ** 2, axis=1)
        damping = pot.gamma * np.exp((lam_mu - pot.lambda_nu(partner) - costs) / pot.gamma)
        return beta * float(np.mean(lam_mu + damping))

    theta, h = gaussian_policy.theta, 1e-6
    numeric = np.zeros_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        numeric[j] = (objective(theta + e) - objective(theta - e)) / (2 * h)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


def test_repulsion_learner_updates_both_policies(env):
    policy_a = GaussianPolicy(init_params(dense_arch(2, 2, (3,)), seed=1))
    policy_b = GaussianPolicy(init_params(dense_arch(2, 2, (3,)), seed=2))
    bem = make_bem(BEMKind.MEAN_X_DISPLACEMENT, env)
    cfg = RegularizedObjectiveCfg(beta=0.5, gamma=0.1, dual_steps_per_iter=5)
    learner = RepulsionLearner(policy_a, policy_b, env, bem, cfg, _potentials(1), M=3, eta=0.05)
    record_a, record_b = learner.step(seed=0)
    assert record_a.iter == record_b.iter == 0
    assert record_a.wd_estimate == record_b.wd_estimate
    assert not np.array_equal(learner.policy_a.theta, policy_a.theta)
    assert learner.potentials.t == 5
    left, right = learner.mean_displacements(episodes=2, seed=0)
    assert np.isfinite(left) and np.isfinite(right)


rewards_ints = st.integers(min_value=-1000, max_value=1000)


@settings(max_examples=50, deadline=None)
@given(rewards=st.lists(rewards_ints, min_size=2, max_size=6), baseline=rewards_ints, shift=rewards_ints,
       beta=st.floats(min_value=0.0, max_value=1.0), seed=st.integers(min_value=0, max_value=1000))
def test_es_gradient_ignores_a_common_reward_shift(rewards, baseline, shift, beta, seed):
    rewards = np.array(rewards, dtype=np.float64)
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((len(rewards), 3))
    novelty = rng.normal(size=len(rewards))
    unshifted = es_gradient(eps, rewards, float(baseline), novelty, beta, sigma=0.1)
    shifted = es_gradient(eps, rewards + shift, float(baseline + shift), novelty, beta, sigma=0.1)
    np.testing.assert_array_equal(shifted, unshifted)


def test_offpolicy_lambda_terms_cancel_on_shared_probe_states(rng, gaussian_policy):
    states = rng.normal(size=(16, 2))
    current = probe_points(gaussian_policy, states)
    previous = probe_points(gaussian_policy.with_theta(gaussian_policy.theta.copy()), states)
    pot = _potentials(4, features=30)
    coefficients = rng.normal(size=30)
    symmetric = replace(pot, p_mu=coefficients, p_nu=coefficients.copy())
    assert offpolicy_lambda_gap(symmetric, current, previous) == pytest.approx(0.0, abs=1e-12)

    skewed = replace(pot, p_mu=coefficients, p_nu=coefficients + 0.1 * rng.normal(size=30))
    bound = np.linalg.norm(skewed.p_mu - skewed.p_nu) * math.sqrt(2.0)
    assert abs(offpolicy_lambda_gap(skewed, current, previous)) <= bound


def test_repulsion_dual_update_is_a_damped_step(env):
    policy = GaussianPolicy(init_params(dense_arch(2, 2, (3,)), seed=1))
    bem = make_bem(BEMKind.MEAN_X_DISPLACEMENT, env)
    cfg = RegularizedObjectiveCfg(beta=0.5, gamma=0.1, dual_steps_per_iter=1)
    pot = _potentials(1)
    result = repulsion_step(policy, policy, env, bem, cfg, pot, M=3, eta=0.05, seed=6)

    xs = embed_all(bem, rollout_many(env, [policy] * 3, [derive_seed(6, "repulsion/a", i) for i in range(3)]))
    ys = embed_all(bem, rollout_many(env, [policy] * 3, [derive_seed(6, "repulsion/b", i) for i in range(3)]))
    candidates = []
    for x in xs:
        for y in ys:
            coef = pot.alpha * (1.0 - math.exp(-float(x[0] - y[0]) ** 2 / pot.gamma))
            candidates.append((coef * pot.map_mu(x), -coef * pot.map_nu(y)))
    assert result.potentials.t == 1
    assert any(np.allclose(result.potentials.p_mu, p_mu, rtol=0, atol=1e-12)
               and np.allclose(result.potentials.p_nu, p_nu, rtol=0, atol=1e-12)
               for p_mu, p_nu in candidates)


def test_reinforce_sums_scores_over_every_recorded_step(env, gaussian_policy):
    trajectories = rollout_many(env, [gaussian_policy] * 2, [3, 4])
    _, per_step = gaussian_policy.log_prob_grad_batch(trajectories[0].states, trajectories[0].actions)
    assert per_step.shape[0] == env.horizon + 1
    scores = trajectory_scores(gaussian_policy, trajectories)
    np.testing.assert_allclose(scores[0], per_step.sum(axis=0), rtol=1e-12, atol=1e-12)
    gradient = reinforce_gradient(gaussian_policy, trajectories, np.array([1.0, 0.0]), baseline=False)
    np.testing.assert_allclose(gradient, 0.5 * scores[0], rtol=1e-12, atol=1e-12)
