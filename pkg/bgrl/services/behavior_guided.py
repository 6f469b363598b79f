"""
Behavior-guided optimizers

Each learner alternates two phases per outer iteration: a dual phase that
updates the random-feature potentials from embedding samples, and a policy
phase that reads the (fixed) potentials to score behaviors. The dual phase
never reads θ gradients and the policy phase never writes the potentials.
"""

import logging
import time
from collections import deque
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..core.config import settings
from ..core.exceptions import InvalidParameterError
from ..core.seeding import derive_seed, make_rng
from ..models.config import RegularizedObjectiveCfg
from ..models.enums import CostKind
from ..models.records import IterationRecord
from .embed import BEM, ProbeDistribution, embed_all, probe_points
from .envsim import Env, Trajectory, rollout_many
from .policy import GaussianPolicy, Policy, mean_vjp
from .transport import (
    CostFn,
    DualPotentials,
    EmpiricalEmbedding,
    cost_gradient,
    damping_factor,
    dual_objective_samples,
    wd_estimate,
    wd_solve,
)

logger = logging.getLogger(__name__)
record_logger = logging.getLogger("bgrl.records")


class ESResult(NamedTuple):
    policy: Policy
    potentials: Optional[DualPotentials]
    record: IterationRecord
    embedding: EmpiricalEmbedding


class PGResult(NamedTuple):
    policy: Policy
    potentials: DualPotentials
    record: IterationRecord


class RepulsionResult(NamedTuple):
    policy_a: Policy
    policy_b: Policy
    potentials: DualPotentials
    record_a: IterationRecord
    record_b: IterationRecord


class PerturbationBatch(NamedTuple):
    eps: np.ndarray  # (n, P)
    rewards: np.ndarray  # (n,)
    baseline_reward: float
    points: np.ndarray  # (n, e) embeddings of the perturbed rollouts
    baseline_point: np.ndarray  # (e,) embedding of the unperturbed rollout
    trajectories: List[Trajectory]


# ---------------------------------------------------------------------------
# Shared pieces
# ---------------------------------------------------------------------------

def es_gradient(eps: np.ndarray, rewards: np.ndarray, baseline_reward: float, novelty: np.ndarray,
                beta: float, sigma: float) -> np.ndarray:
    """(1/σ)·Σ_k [(1−β)(R_k − R_t) + β·D_k]·ε_k"""
    weights = (1.0 - beta) * (np.asarray(rewards) - baseline_reward) + beta * np.asarray(novelty)
    return (weights @ eps) / sigma


def evaluate_perturbations(policy: Policy, env: Env, bem: BEM, n: int, sigma: float, seed: int) -> PerturbationBatch:
    """Draw ε₁..ε_n, roll out every θ + σε_k and the unperturbed θ"""
    if n < 2:
        raise InvalidParameterError(f"ES needs at least 2 perturbations, got {n}")
    theta = policy.theta
    eps = make_rng(seed, "es/eps").standard_normal((n, theta.size))
    candidates = [policy.with_theta(theta + sigma * e) for e in eps] + [policy]
    seeds = [derive_seed(seed, "es/rollout", k) for k in range(n + 1)]
    trajectories = rollout_many(env, candidates, seeds, perturbations=range(n + 1))
    points = embed_all(bem, trajectories)
    rewards = np.array([tau.total_reward for tau in trajectories])
    return PerturbationBatch(eps, rewards[:n], float(rewards[n]), points[:n], points[n], trajectories)


def _record(iteration: int, rewards, started: float, wd: float = 0.0, dual: float = 0.0,
            saturations: int = 0, clips: int = 0) -> IterationRecord:
    record = IterationRecord(
        iter=iteration,
        mean_reward=float(np.mean(rewards)),
        reward_std=float(np.std(rewards)),
        wd_estimate=float(wd),
        dual_objective=float(dual),
        saturation_count=int(saturations),
        wall_time=time.perf_counter() - started,
        clip_count=int(clips),
    )
    record_logger.info(record.model_dump_json())
    if saturations:
        logger.warning(f"Iteration {iteration}: {saturations} damping exponents clamped")
    if clips:
        logger.warning(f"Iteration {iteration}: {clips} importance ratios clipped at {settings.RATIO_CLIP:g}")
    return record


def reward_to_go_advantages(trajectories: Sequence[Trajectory]) -> np.ndarray:
    """(M, H+1) reward-to-go minus its per-timestep mean over the batch"""
    returns = np.stack([np.cumsum(tau.rewards[::-1])[::-1] for tau in trajectories])
    return returns - returns.mean(axis=0, keepdims=True)


def _flat_steps(trajectories: Sequence[Trajectory]) -> Tuple[np.ndarray, np.ndarray]:
    states = np.concatenate([np.asarray(tau.states).reshape(len(tau.states), -1) for tau in trajectories])
    actions = np.concatenate([np.asarray(tau.actions).reshape(len(tau.actions), -1) for tau in trajectories])
    if np.issubdtype(states.dtype, np.integer):
        states, actions = states.reshape(-1), actions.reshape(-1)
    return states, actions


def trajectory_scores(policy: Policy, trajectories: Sequence[Trajectory]) -> np.ndarray:
    """(M, P) matrix of Σ_t ∇_θ log π_θ(a_t|s_t) per trajectory"""
    states, actions = _flat_steps(trajectories)
    _, grads = policy.log_prob_grad_batch(states, actions)
    return grads.reshape(len(trajectories), -1, grads.shape[1]).sum(axis=1)


def reinforce_gradient(policy: Policy, trajectories: Sequence[Trajectory], returns: np.ndarray,
                       baseline: bool = True) -> np.ndarray:
    """
    (1/M)·Σ_i (G_i − b)·Σ_t ∇ log π(a_t|s_t) with b the batch mean when ``baseline``

    t runs over all H+1 recorded steps s_0, a_0 .. s_H, a_H of each trajectory.
    """
    returns = np.asarray(returns, dtype=np.float64)
    if baseline:
        returns = returns - returns.mean()
    return returns @ trajectory_scores(policy, trajectories) / len(trajectories)


def surrogate_gradient(policy: Policy, trajectories: Sequence[Trajectory], old_logp: np.ndarray,
                       advantages: np.ndarray) -> Tuple[np.ndarray, float, int]:
    """
    ∇_θ (1/M)·Σ_i Σ_t A_it·π_θ/π_old at the current θ, with ratios clipped at
    RATIO_CLIP; returns (gradient, surrogate value, clip count)
    """
    states, actions = _flat_steps(trajectories)
    logp, grads = policy.log_prob_grad_batch(states, actions)
    ratios = np.exp(logp - old_logp)
    clipped = ratios > settings.RATIO_CLIP
    ratios = np.where(clipped, settings.RATIO_CLIP, ratios)
    weights = advantages.reshape(-1) * np.where(clipped, 0.0, ratios)
    M = len(trajectories)
    value = float((advantages.reshape(-1) * ratios).sum() / M)
    return weights @ grads / M, value, int(clipped.sum())


# ---------------------------------------------------------------------------
# BGES
# ---------------------------------------------------------------------------

def bges_step(policy: Policy, env: Env, bem: BEM, cfg: RegularizedObjectiveCfg, pot: DualPotentials,
              n: int, sigma: float, eta: float, seed: int, base: Optional[EmpiricalEmbedding] = None,
              cost: CostKind = CostKind.L2, iteration: int = 0) -> ESResult:
    """
    One behavior-guided ES iteration

    ``base`` is the embedding distribution of the previous policies (μ); the
    current perturbed embeddings form ν. WD̂_k pairs the unperturbed rollout's
    embedding (μ side) with perturbation k's embedding (ν side).
    """
    started = time.perf_counter()
    batch = evaluate_perturbations(policy, env, bem, n, sigma, seed)
    current = EmpiricalEmbedding.from_points(batch.points)
    base = base if base is not None else EmpiricalEmbedding.from_points(batch.baseline_point[None, :])

    saturated_before = pot.saturations
    if cfg.warm_start_steps > 0:
        pot = wd_solve(base, current, cost, pot.gamma, pot.alpha, cfg.warm_start_steps,
                       (pot.map_mu, pot.map_nu), derive_seed(seed, "bges/dual"), init=pot)

    xs = np.repeat(batch.baseline_point[None, :], n, axis=0)
    lam_mu, lam_nu = pot.lambda_mu(xs), pot.lambda_nu(batch.points)
    F, saturated = damping_factor(lam_mu, lam_nu, CostFn(cost).pairs(xs, batch.points), pot.gamma)
    novelty = lam_mu - lam_nu - pot.gamma * F
    dual, dual_saturated = dual_objective_samples(pot, base.points, current.points, cost)

    gradient = es_gradient(batch.eps, batch.rewards, batch.baseline_reward, novelty, cfg.beta, sigma)
    updated = policy.with_theta(policy.theta + eta * gradient)
    record = _record(iteration, batch.rewards, started, wd=float(novelty.mean()), dual=dual,
                     saturations=pot.saturations - saturated_before + saturated + dual_saturated)
    return ESResult(updated, pot, record, current)


class BehaviorGuidedES:
    """
    BGES with a sliding window of previous embedding distributions and
    warm-started potentials; a fixed ``base`` turns it into imitation
    """

    def __init__(self, policy: Policy, env: Env, bem: BEM, cfg: RegularizedObjectiveCfg, potentials: DualPotentials,
                 n: int, sigma: float, eta: float, cost: CostKind = CostKind.L2,
                 base: Optional[EmpiricalEmbedding] = None):
        self.policy = policy
        self.env = env
        self.bem = bem
        self.cfg = cfg
        self.potentials = potentials
        self.n = n
        self.sigma = sigma
        self.eta = eta
        self.cost = cost
        self.fixed_base = base
        self.window: deque = deque(maxlen=cfg.base_policy_window)
        self.iteration = 0

    def base(self) -> Optional[EmpiricalEmbedding]:
        if self.fixed_base is not None:
            return self.fixed_base
        return EmpiricalEmbedding.union(list(self.window)) if self.window else None

    def step(self, seed: int) -> IterationRecord:
        result = bges_step(self.policy, self.env, self.bem, self.cfg, self.potentials, self.n, self.sigma,
                           self.eta, seed, base=self.base(), cost=self.cost, iteration=self.iteration)
        self.policy, self.potentials = result.policy, result.potentials
        self.window.append(result.embedding)
        self.iteration += 1
        return result.record


def imitation_run(policy: Policy, env: Env, bem: BEM, expert_embedding: EmpiricalEmbedding,
                  cfg: RegularizedObjectiveCfg, potentials: DualPotentials, iterations: int, n: int,
                  sigma: float, eta: float, seed: int, cost: CostKind = CostKind.L2) -> Tuple[Policy, List[IterationRecord]]:
    """BGES attracted (β < 0) to a fixed expert embedding distribution"""
    if cfg.beta >= 0.0:
        raise InvalidParameterError(f"imitation needs beta < 0, got {cfg.beta}")
    if expert_embedding.size == 0:
        raise InvalidParameterError("expert embedding is empty")
    learner = BehaviorGuidedES(policy, env, bem, cfg, potentials, n, sigma, eta, cost, base=expert_embedding)
    records = [learner.step(derive_seed(seed, "imitate", t)) for t in range(iterations)]
    return learner.policy, records


# ---------------------------------------------------------------------------
# BGPG
# ---------------------------------------------------------------------------

def trust_region_payoff(pot: DualPotentials, old_points: np.ndarray, new_points: np.ndarray, beta: float,
                        cost: CostKind = CostKind.L2) -> Tuple[np.ndarray, int]:
    """Per-trajectory payoff −β·λ_ν(Φ(τ₂)) + βγ·mean_τ₁ F(Φ(τ₁), Φ(τ₂)) of the fresh trajectories"""
    lam_nu = pot.lambda_nu(new_points)
    F, saturated = damping_factor(pot.lambda_mu(old_points)[:, None], lam_nu[None, :],
                                  CostFn(cost).matrix(old_points, new_points), pot.gamma)
    return -beta * lam_nu + beta * pot.gamma * F.mean(axis=0), saturated


def bgpg_step_onpolicy(policy: Policy, env: Env, bem: BEM, cfg: RegularizedObjectiveCfg, pot: DualPotentials,
                       M: int, L: int, eta: float, seed: int, cost: CostKind = CostKind.L2,
                       iteration: int = 0) -> PGResult:
    """
    Wasserstein trust-region policy gradient with on-policy embeddings

    The previous policy's embeddings sit on the μ side and the fresh
    trajectories of π_θ on the ν side. The θ-dependent part of the WD term
    (``trust_region_payoff``) is differentiated with the score function and
    a mean baseline.
    """
    if L < 1 or M < 2:
        raise InvalidParameterError(f"BGPG needs L >= 1 and M >= 2, got L={L}, M={M}")
    started = time.perf_counter()
    old_policy = policy
    old = rollout_many(env, [old_policy] * M, [derive_seed(seed, "bgpg/old", i) for i in range(M)])
    advantages = reward_to_go_advantages(old)
    old_logp, _ = old_policy.log_prob_grad_batch(*_flat_steps(old))
    old_points = embed_all(bem, old)
    old_embedding = EmpiricalEmbedding.from_points(old_points)

    saturated_before, clips, extra_saturations = pot.saturations, 0, 0
    new_points = old_points
    for r in range(L):
        fresh = rollout_many(env, [policy] * M, [derive_seed(seed, "bgpg/new", r * M + i) for i in range(M)])
        new_points = embed_all(bem, fresh)

        surrogate, _, clipped = surrogate_gradient(policy, old, old_logp, advantages)
        clips += clipped

        g, saturated = trust_region_payoff(pot, old_points, new_points, cfg.beta, cost)
        extra_saturations += saturated
        wd_grad = reinforce_gradient(policy, fresh, g, baseline=True)

        policy = policy.with_theta(policy.theta + eta * (surrogate + wd_grad))
        pot = wd_solve(old_embedding, EmpiricalEmbedding.from_points(new_points), cost, pot.gamma, pot.alpha,
                       cfg.dual_steps_per_iter, (pot.map_mu, pot.map_nu), derive_seed(seed, "bgpg/dual", r), init=pot)

    wd = wd_estimate(pot, old_points, new_points, cost)
    dual, dual_saturated = dual_objective_samples(pot, old_points, new_points, cost)
    record = _record(iteration, [tau.total_reward for tau in old], started, wd=wd, dual=dual,
                     saturations=pot.saturations - saturated_before + extra_saturations + dual_saturated, clips=clips)
    return PGResult(policy, pot, record)


def pathwise_lambda_grad(pot: DualPotentials, policy: GaussianPolicy, states: np.ndarray,
                         partner: Optional[np.ndarray] = None, beta: float = 1.0,
                         cost: CostKind = CostKind.L2, differentiate_cost: bool = False) -> np.ndarray:
    """
    ∇_θ of β·mean_s[λ_μ(s, π_θ(s)) + γ·F((s, π_θ(s)), y_s)] through the policy mean

    Without ``partner`` points only the λ_μ term is differentiated. The
    damping term's gradient flows through λ_μ, and through C as well when
    ``differentiate_cost`` is set.
    """
    states = np.atleast_2d(states)
    n, state_dim = states.shape
    points = probe_points(policy, states)
    grads = np.stack([pot.map_mu.gradient(x, pot.p_mu) for x in points])
    if partner is not None:
        F, _ = damping_factor(pot.lambda_mu(points), pot.lambda_nu(partner), CostFn(cost).pairs(points, partner), pot.gamma)
        directions = (1.0 + F)[:, None] * grads
        if differentiate_cost:
            cost_grads = np.stack([cost_gradient(cost, x, y) for x, y in zip(points, partner)])
            directions = directions - F[:, None] * cost_grads
    else:
        directions = grads
    cotangent = beta * directions[:, state_dim:] / n
    return mean_vjp(policy.params, states, cotangent)


def bgpg_step_offpolicy(policy: GaussianPolicy, env: Env, probe: ProbeDistribution, cfg: RegularizedObjectiveCfg,
                        pot: DualPotentials, M: int, L: int, eta: float, seed: int, probe_samples: int = 32,
                        cost: CostKind = CostKind.L2, iteration: int = 0) -> PGResult:
    """
    Trust-region policy gradient with off-policy embeddings (s, π(s)), s ~ P_S

    π_θ sits on the μ side and the previous policy on the ν side; both are
    evaluated on one shared batch of probe states.
    """
    if L < 1 or M < 2:
        raise InvalidParameterError(f"BGPG needs L >= 1 and M >= 2, got L={L}, M={M}")
    if not isinstance(policy, GaussianPolicy):
        raise InvalidParameterError("off-policy embeddings need a Gaussian policy")
    started = time.perf_counter()
    old_policy = policy
    old = rollout_many(env, [old_policy] * M, [derive_seed(seed, "bgpg/old", i) for i in range(M)])
    probe.add_trajectories(old)
    advantages = reward_to_go_advantages(old)
    old_logp, _ = old_policy.log_prob_grad_batch(*_flat_steps(old))

    states = probe.sample(probe_samples, derive_seed(seed, "bgpg/probe"))
    old_points = probe_points(old_policy, states)
    old_embedding = EmpiricalEmbedding.from_points(old_points)

    saturated_before, clips = pot.saturations, 0
    new_points = old_points
    for r in range(L):
        surrogate, _, clipped = surrogate_gradient(policy, old, old_logp, advantages)
        clips += clipped
        wd_grad = pathwise_lambda_grad(pot, policy, states, partner=old_points, beta=cfg.beta, cost=cost,
                                       differentiate_cost=cfg.differentiate_cost)
        policy = policy.with_theta(policy.theta + eta * (surrogate + wd_grad))
        new_points = probe_points(policy, states)
        pot = wd_solve(EmpiricalEmbedding.from_points(new_points), old_embedding, cost, pot.gamma, pot.alpha,
                       cfg.dual_steps_per_iter, (pot.map_mu, pot.map_nu), derive_seed(seed, "bgpg/dual", r), init=pot)

    wd = wd_estimate(pot, new_points, old_points, cost)
    dual, dual_saturated = dual_objective_samples(pot, new_points, old_points, cost)
    record = _record(iteration, [tau.total_reward for tau in old], started, wd=wd, dual=dual,
                     saturations=pot.saturations - saturated_before + dual_saturated, clips=clips)
    return PGResult(policy, pot, record)


class BehaviorGuidedPG:
    """Keeps the policy, potentials and (off-policy) probe buffer across iterations"""

    def __init__(self, policy: Policy, env: Env, bem: Optional[BEM], cfg: RegularizedObjectiveCfg,
                 potentials: DualPotentials, M: int, L: int, eta: float, cost: CostKind = CostKind.L2,
                 probe: Optional[ProbeDistribution] = None, probe_samples: int = 32):
        if bem is None and probe is None:
            raise InvalidParameterError("BGPG needs a trajectory embedding or a probe buffer")
        self.policy = policy
        self.env = env
        self.bem = bem
        self.cfg = cfg
        self.potentials = potentials
        self.M = M
        self.L = L
        self.eta = eta
        self.cost = cost
        self.probe = probe
        self.probe_samples = probe_samples
        self.iteration = 0

    def step(self, seed: int) -> IterationRecord:
        if self.probe is not None:
            result = bgpg_step_offpolicy(self.policy, self.env, self.probe, self.cfg, self.potentials, self.M,
                                         self.L, self.eta, seed, self.probe_samples, self.cost, self.iteration)
        else:
            result = bgpg_step_onpolicy(self.policy, self.env, self.bem, self.cfg, self.potentials, self.M,
                                        self.L, self.eta, seed, self.cost, self.iteration)
        self.policy, self.potentials = result.policy, result.potentials
        self.iteration += 1
        return result.record


# ---------------------------------------------------------------------------
# Repulsion / attraction
# ---------------------------------------------------------------------------

def repulsion_surrogates(pot: DualPotentials, returns_a, returns_b, xs, ys, beta: float,
                         cost: CostKind) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    R̃_a = R(τ_a) + β·λ_μ(Φ(τ_a)) + βγ·F and R̃_b = R(τ_b) − β·λ_ν(Φ(τ_b)) + βγ·F
    on paired samples
    """
    lam_mu, lam_nu = pot.lambda_mu(xs), pot.lambda_nu(ys)
    F, saturated = damping_factor(lam_mu, lam_nu, CostFn(cost).pairs(xs, ys), pot.gamma)
    damping = beta * pot.gamma * F
    return np.asarray(returns_a) + beta * lam_mu + damping, np.asarray(returns_b) - beta * lam_nu + damping, saturated


def repulsion_step(policy_a: Policy, policy_b: Policy, env: Env, bem: BEM, cfg: RegularizedObjectiveCfg,
                   pot: DualPotentials, M: int, eta: float, seed: int,
                   cost: CostKind = CostKind.SQUARED_ABS_SCALAR, iteration: int = 0) -> RepulsionResult:
    """One joint REINFORCE update of two policies; β > 0 repels, β < 0 attracts"""
    if M < 2:
        raise InvalidParameterError(f"repulsion needs M >= 2, got {M}")
    started = time.perf_counter()
    seeds_a = [derive_seed(seed, "repulsion/a", i) for i in range(M)]
    seeds_b = [derive_seed(seed, "repulsion/b", i) for i in range(M)]
    trajectories = rollout_many(env, [policy_a] * M + [policy_b] * M, seeds_a + seeds_b)
    taus_a, taus_b = trajectories[:M], trajectories[M:]
    xs, ys = embed_all(bem, taus_a), embed_all(bem, taus_b)
    returns_a = np.array([tau.total_reward for tau in taus_a])
    returns_b = np.array([tau.total_reward for tau in taus_b])

    saturated_before = pot.saturations
    shaped_a, shaped_b, saturated = repulsion_surrogates(pot, returns_a, returns_b, xs, ys, cfg.beta, cost)
    grad_a = reinforce_gradient(policy_a, taus_a, shaped_a, baseline=cfg.reward_baseline)
    grad_b = reinforce_gradient(policy_b, taus_b, shaped_b, baseline=cfg.reward_baseline)
    policy_a = policy_a.with_theta(policy_a.theta + eta * grad_a)
    policy_b = policy_b.with_theta(policy_b.theta + eta * grad_b)

    pot = wd_solve(EmpiricalEmbedding.from_points(xs), EmpiricalEmbedding.from_points(ys), cost, pot.gamma,
                   pot.alpha, cfg.dual_steps_per_iter, (pot.map_mu, pot.map_nu), derive_seed(seed, "repulsion/dual"),
                   init=pot)
    wd = wd_estimate(pot, xs, ys, cost)
    dual, dual_saturated = dual_objective_samples(pot, xs, ys, cost)
    saturations = pot.saturations - saturated_before + saturated + dual_saturated
    record_a = _record(iteration, returns_a, started, wd=wd, dual=dual, saturations=saturations)
    record_b = _record(iteration, returns_b, started, wd=wd, dual=dual, saturations=saturations)
    return RepulsionResult(policy_a, policy_b, pot, record_a, record_b)


class RepulsionLearner:
    def __init__(self, policy_a: Policy, policy_b: Policy, env: Env, bem: BEM, cfg: RegularizedObjectiveCfg,
                 potentials: DualPotentials, M: int, eta: float, cost: CostKind = CostKind.SQUARED_ABS_SCALAR):
        self.policy_a = policy_a
        self.policy_b = policy_b
        self.env = env
        self.bem = bem
        self.cfg = cfg
        self.potentials = potentials
        self.M = M
        self.eta = eta
        self.cost = cost
        self.iteration = 0

    def step(self, seed: int) -> Tuple[IterationRecord, IterationRecord]:
        result = repulsion_step(self.policy_a, self.policy_b, self.env, self.bem, self.cfg, self.potentials,
                                self.M, self.eta, seed, self.cost, self.iteration)
        self.policy_a, self.policy_b, self.potentials = result.policy_a, result.policy_b, result.potentials
        self.iteration += 1
        return result.record_a, result.record_b

    def mean_displacements(self, episodes: int, seed: int) -> Tuple[float, float]:
        """Average embedding (mean x-displacement) of each policy"""
        seeds = [derive_seed(seed, "repulsion/eval", i) for i in range(episodes)]
        xs = embed_all(self.bem, rollout_many(self.env, [self.policy_a] * episodes, seeds))
        ys = embed_all(self.bem, rollout_many(self.env, [self.policy_b] * episodes, seeds))
        return float(xs.mean()), float(ys.mean())
