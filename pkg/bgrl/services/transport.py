"""
Smoothed Wasserstein distances between embedding distributions

The stochastic dual solver keeps a pair of random-feature potentials
λ_μ(x) = ⟨p_μ, φ_μ(x)⟩ and λ_ν(y) = ⟨p_ν, φ_ν(y)⟩ and ascends

    Ψ(p_μ, p_ν) = E_μ[λ_μ] − E_ν[λ_ν] − γ·E_ξ[exp((λ_μ(x) − λ_ν(y) − C(x, y))/γ)]

with ξ = μ⊗ν. Exact and entropic oracles are provided for validation.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
import ot
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from ..core import constants
from ..core.config import settings
from ..core.exceptions import DimensionMismatchError, InvalidParameterError, SupportTooLargeError
from ..core.seeding import make_rng
from ..models.enums import CostKind, DampingKind, Side
from ..models.records import SinkhornResult
from .rff import FeatureMap

logger = logging.getLogger(__name__)

Sampler = Callable[[np.random.Generator, int], np.ndarray]

_CDIST_METRIC = {
    CostKind.L1: "cityblock",
    CostKind.L2: "euclidean",
    CostKind.SQUARED_L2: "sqeuclidean",
    CostKind.SQUARED_ABS_SCALAR: "sqeuclidean",
}


# ---------------------------------------------------------------------------
# Costs
# ---------------------------------------------------------------------------

def _check_scalar(kind: CostKind, dim: int):
    if kind == CostKind.SQUARED_ABS_SCALAR and dim != 1:
        raise DimensionMismatchError(f"{kind.value} cost needs scalar embeddings, got dimension {dim}")


def cost_matrix(kind: CostKind, xs, ys) -> np.ndarray:
    """Pairwise cost matrix C[i, j] = C(x_i, y_j)"""
    xs, ys = np.atleast_2d(np.asarray(xs, dtype=np.float64)), np.atleast_2d(np.asarray(ys, dtype=np.float64))
    if xs.shape[1] != ys.shape[1]:
        raise DimensionMismatchError(f"cost between dimensions {xs.shape[1]} and {ys.shape[1]}")
    _check_scalar(kind, xs.shape[1])
    return cdist(xs, ys, metric=_CDIST_METRIC[CostKind(kind)])


def cost_pairs(kind: CostKind, xs, ys) -> np.ndarray:
    """Row-wise costs C(x_i, y_i) of two equally long point arrays"""
    xs, ys = np.atleast_2d(np.asarray(xs, dtype=np.float64)), np.atleast_2d(np.asarray(ys, dtype=np.float64))
    if xs.shape != ys.shape:
        raise DimensionMismatchError(f"paired samples of shapes {xs.shape} and {ys.shape}")
    _check_scalar(kind, xs.shape[1])
    diff = xs - ys
    kind = CostKind(kind)
    if kind == CostKind.L1:
        return np.abs(diff).sum(axis=1)
    if kind == CostKind.L2:
        return np.sqrt((diff * diff).sum(axis=1))
    return (diff * diff).sum(axis=1)


def cost_gradient(kind: CostKind, x, y) -> np.ndarray:
    """∇_x C(x, y); subgradient 0 where C is not differentiable"""
    diff = np.atleast_1d(np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64))
    _check_scalar(CostKind(kind), diff.size)
    kind = CostKind(kind)
    if kind == CostKind.L1:
        return np.sign(diff)
    if kind == CostKind.L2:
        norm = float(np.linalg.norm(diff))
        return diff / norm if norm > 0.0 else np.zeros_like(diff)
    return 2.0 * diff


@dataclass(frozen=True)
class CostFn:
    kind: CostKind

    def __call__(self, x, y) -> float:
        return float(cost_pairs(self.kind, np.atleast_1d(x)[None, :], np.atleast_1d(y)[None, :])[0])

    def matrix(self, xs, ys) -> np.ndarray:
        return cost_matrix(self.kind, xs, ys)

    def pairs(self, xs, ys) -> np.ndarray:
        return cost_pairs(self.kind, xs, ys)

    def gradient(self, x, y) -> np.ndarray:
        return cost_gradient(self.kind, x, y)


def _cost(cost: Union[CostFn, CostKind, str]) -> CostFn:
    if isinstance(cost, CostFn):
        return cost
    return CostFn(CostKind(cost))


# ---------------------------------------------------------------------------
# Empirical distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EmpiricalEmbedding:
    """Weighted finite point set; duplicate points are merged on construction"""
    points: np.ndarray  # (n, d)
    weights: np.ndarray  # (n,)

    @classmethod
    def from_points(cls, points, weights=None, merge: bool = True) -> "EmpiricalEmbedding":
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        if points.ndim != 2 or points.shape[0] == 0:
            raise InvalidParameterError("empirical embedding needs at least one point")
        if weights is None:
            weights = np.full(points.shape[0], 1.0 / points.shape[0])
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (points.shape[0],):
            raise DimensionMismatchError(f"{weights.shape[0]} weights for {points.shape[0]} points")
        if np.any(weights < 0.0) or not np.all(np.isfinite(weights)):
            raise InvalidParameterError("embedding weights must be finite and nonnegative")
        total = weights.sum()
        if abs(total - 1.0) > constants.WEIGHT_TOLERANCE:
            raise InvalidParameterError(f"embedding weights sum to {total!r}, expected 1")
        weights = weights / total
        if merge:
            points, inverse = np.unique(points, axis=0, return_inverse=True)
            weights = np.bincount(inverse.reshape(-1), weights=weights, minlength=points.shape[0])
        return cls(points=points, weights=weights)

    @classmethod
    def union(cls, embeddings: Sequence["EmpiricalEmbedding"]) -> "EmpiricalEmbedding":
        """Uniform mixture (1/|S|)·Σ P_i of several embeddings"""
        if not embeddings:
            raise InvalidParameterError("union of zero embeddings")
        dims = {e.dim for e in embeddings}
        if len(dims) != 1:
            raise DimensionMismatchError(f"union of embeddings with dimensions {sorted(dims)}")
        share = 1.0 / len(embeddings)
        points = np.concatenate([e.points for e in embeddings])
        weights = np.concatenate([e.weights * share for e in embeddings])
        return cls.from_points(points, weights / weights.sum())

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    def sample(self, rng: np.random.Generator, k: int) -> np.ndarray:
        index = rng.choice(self.size, size=k, p=self.weights)
        return self.points[index]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points


def as_sampler(source: Union[EmpiricalEmbedding, Sampler]) -> Sampler:
    if isinstance(source, EmpiricalEmbedding):
        return source.sample
    if callable(source):
        return source
    raise InvalidParameterError(f"expected a sampler or EmpiricalEmbedding, got {type(source).__name__}")


# ---------------------------------------------------------------------------
# Dual potentials and the stochastic solver
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DualPotentials:
    p_mu: np.ndarray
    p_nu: np.ndarray
    map_mu: FeatureMap
    map_nu: FeatureMap
    gamma: float
    alpha: float
    t: int = 0
    saturations: int = 0

    def __post_init__(self):
        if not (self.gamma > 0.0):
            raise InvalidParameterError("smoothed solver requires gamma > 0")
        if not (self.alpha > 0.0):
            raise InvalidParameterError(f"dual step scale must be positive, got {self.alpha}")
        if self.p_mu.shape != (self.map_mu.num_features,) or self.p_nu.shape != (self.map_nu.num_features,):
            raise DimensionMismatchError("potential coefficients do not match their feature maps")

    def feature_map(self, side: Side) -> FeatureMap:
        return self.map_mu if Side(side) == Side.MU else self.map_nu

    def coefficients(self, side: Side) -> np.ndarray:
        return self.p_mu if Side(side) == Side.MU else self.p_nu

    def evaluate(self, side: Side, points) -> np.ndarray:
        """λ_side on the rows of an (n, d) array"""
        return self.feature_map(side).batch(points) @ self.coefficients(side)

    def lambda_mu(self, points) -> np.ndarray:
        return self.evaluate(Side.MU, points)

    def lambda_nu(self, points) -> np.ndarray:
        return self.evaluate(Side.NU, points)

    def swapped(self) -> "DualPotentials":
        """Potentials of the reversed problem (ν, μ): p_μ' = −p_ν, p_ν' = −p_μ"""
        return replace(self, p_mu=-self.p_nu, p_nu=-self.p_mu, map_mu=self.map_nu, map_nu=self.map_mu)


def potentials_new(map_mu: FeatureMap, map_nu: Optional[FeatureMap] = None,
                   gamma: float = constants.DEFAULT_GAMMA, alpha: float = constants.DEFAULT_ALPHA_DUAL) -> DualPotentials:
    """Zero potentials; both sides share ``map_mu`` unless ``map_nu`` is given"""
    map_nu = map_mu if map_nu is None else map_nu
    return DualPotentials(
        p_mu=np.zeros(map_mu.num_features),
        p_nu=np.zeros(map_nu.num_features),
        map_mu=map_mu,
        map_nu=map_nu,
        gamma=float(gamma),
        alpha=float(alpha),
    )


def damping_factor(lam_mu, lam_nu, costs, gamma: float) -> Tuple[np.ndarray, int]:
    """F = exp((λ_μ − λ_ν − C)/γ) with the exponent clamped; returns (F, saturation count)"""
    exponent = (np.asarray(lam_mu) - np.asarray(lam_nu) - np.asarray(costs)) / gamma
    clamp = settings.EXP_CLAMP
    saturated = int(np.count_nonzero(np.abs(exponent) > clamp))
    return np.exp(np.clip(exponent, -clamp, clamp)), saturated


def test_fn_eval(pot: DualPotentials, side: Side, x) -> float:
    feature_map = pot.feature_map(side)
    return float(np.dot(pot.coefficients(side), feature_map(np.atleast_1d(x))))


def _step_arrays(p_mu: np.ndarray, p_nu: np.ndarray, phi_x: np.ndarray, phi_y: np.ndarray,
                 c: float, gamma: float, alpha: float, t: int) -> int:
    """In-place dual ascent step; returns 1 when the exponent saturated"""
    F, saturated = damping_factor(np.dot(p_mu, phi_x), np.dot(p_nu, phi_y), c, gamma)
    coef = alpha / math.sqrt(t + 1) * (1.0 - float(F))
    p_mu += coef * phi_x
    p_nu -= coef * phi_y
    return saturated


def wd_sgd_step(pot: DualPotentials, x, y, cost: Union[CostFn, CostKind]) -> DualPotentials:
    cost = _cost(cost)
    phi_x = pot.map_mu(np.atleast_1d(x))
    phi_y = pot.map_nu(np.atleast_1d(y))
    p_mu, p_nu = pot.p_mu.copy(), pot.p_nu.copy()
    saturated = _step_arrays(p_mu, p_nu, phi_x, phi_y, cost(x, y), pot.gamma, pot.alpha, pot.t)
    return replace(pot, p_mu=p_mu, p_nu=p_nu, t=pot.t + 1, saturations=pot.saturations + saturated)


def wd_solve(mu: Union[EmpiricalEmbedding, Sampler], nu: Union[EmpiricalEmbedding, Sampler],
             cost: Union[CostFn, CostKind], gamma: float, alpha: float, iterations: int,
             maps: Tuple[FeatureMap, FeatureMap], seed: int,
             init: Optional[DualPotentials] = None, chunk: int = 512) -> DualPotentials:
    """
    Run ``iterations`` dual SGD steps on fresh pairs (x_t, y_t) ~ μ⊗ν

    ``init`` warm-starts from earlier potentials (their coefficients and step
    counter); otherwise the solver starts from zero on ``maps``.
    """
    if iterations < 1:
        raise InvalidParameterError(f"wd_solve needs at least one iteration, got {iterations}")
    cost = _cost(cost)
    if init is None:
        pot = potentials_new(maps[0], maps[1], gamma, alpha)
    else:
        pot = replace(init, gamma=float(gamma), alpha=float(alpha))
    sample_mu, sample_nu = as_sampler(mu), as_sampler(nu)
    rng_mu, rng_nu = make_rng(seed, "wd_solve/mu"), make_rng(seed, "wd_solve/nu")

    p_mu, p_nu = pot.p_mu.copy(), pot.p_nu.copy()
    t, saturations = pot.t, pot.saturations
    done = 0
    while done < iterations:
        k = min(chunk, iterations - done)
        xs = np.atleast_2d(sample_mu(rng_mu, k))
        ys = np.atleast_2d(sample_nu(rng_nu, k))
        phi_xs = pot.map_mu.batch(xs)
        phi_ys = pot.map_nu.batch(ys)
        costs = cost.pairs(xs, ys)
        for i in range(k):
            saturations += _step_arrays(p_mu, p_nu, phi_xs[i], phi_ys[i], costs[i], pot.gamma, pot.alpha, t)
            t += 1
        done += k

    if saturations > pot.saturations:
        logger.warning(f"Dual solver clamped {saturations - pot.saturations} exponents in {iterations} steps")
    logger.debug(f"wd_solve finished {iterations} steps at t={t}")
    return replace(pot, p_mu=p_mu, p_nu=p_nu, t=t, saturations=saturations)


def dual_terms(pot: DualPotentials, xs, ys, cost: Union[CostFn, CostKind]) -> Tuple[np.ndarray, np.ndarray, int]:
    """Per-pair λ_μ(x_i) − λ_ν(y_i), damping factors F_i and the saturation count"""
    xs, ys = np.atleast_2d(xs), np.atleast_2d(ys)
    lam_mu, lam_nu = pot.lambda_mu(xs), pot.lambda_nu(ys)
    F, saturated = damping_factor(lam_mu, lam_nu, _cost(cost).pairs(xs, ys), pot.gamma)
    return lam_mu - lam_nu, F, saturated


def wd_estimate(pot: DualPotentials, xs, ys, cost: Union[CostFn, CostKind]) -> float:
    """Sampled dual objective mean_i[λ_μ(x_i) − λ_ν(y_i) − γ·F_i]"""
    gap, F, _ = dual_terms(pot, xs, ys, cost)
    if gap.size == 0:
        raise InvalidParameterError("wd_estimate needs at least one sample pair")
    return float(np.mean(gap - pot.gamma * F))


def dual_objective_samples(pot: DualPotentials, xs, ys, cost: Union[CostFn, CostKind]) -> Tuple[float, int]:
    """Ψ with ξ approximated by all pairs of the two sample sets; returns (value, saturations)"""
    xs, ys = np.atleast_2d(xs), np.atleast_2d(ys)
    lam_mu, lam_nu = pot.lambda_mu(xs), pot.lambda_nu(ys)
    F, saturated = damping_factor(lam_mu[:, None], lam_nu[None, :], _cost(cost).matrix(xs, ys), pot.gamma)
    return float(lam_mu.mean() - lam_nu.mean() - pot.gamma * F.mean()), saturated


def offpolicy_lambda_gap(pot: DualPotentials, xs, ys) -> float:
    """E_x[λ_μ(x)] − E_y[λ_ν(y)] over two sample sets"""
    return float(pot.lambda_mu(np.atleast_2d(xs)).mean() - pot.lambda_nu(np.atleast_2d(ys)).mean())


# ---------------------------------------------------------------------------
# Damping term
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DampingSpec:
    """
    Reference measure ξ of the damping term

    PRODUCT_MEASURE draws from ``sample_mu`` ⊗ ``sample_nu``; UNIFORM_DISCRETE
    sums over ``support`` × ``support`` with weight 1/|E|².
    """
    kind: DampingKind
    sample_mu: Optional[Sampler] = None
    sample_nu: Optional[Sampler] = None
    support: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        if self.kind == DampingKind.PRODUCT_MEASURE and (self.sample_mu is None or self.sample_nu is None):
            raise InvalidParameterError("product-measure damping needs samplers for both marginals")
        if self.kind == DampingKind.UNIFORM_DISCRETE and self.support is None:
            raise InvalidParameterError("uniform damping needs an enumeration of the embedding space")


def damping_penalty(pot: DualPotentials, spec: DampingSpec, cost: Union[CostFn, CostKind],
                    samples: Optional[Tuple[np.ndarray, np.ndarray]] = None, n: int = 1000, seed: int = 0) -> float:
    """γ·∫exp((λ_μ(x) − λ_ν(y) − C(x, y))/γ) dξ"""
    cost = _cost(cost)
    if spec.kind == DampingKind.UNIFORM_DISCRETE:
        support = np.atleast_2d(np.asarray(spec.support, dtype=np.float64))
        lam_mu, lam_nu = pot.lambda_mu(support), pot.lambda_nu(support)
        F, saturated = damping_factor(lam_mu[:, None], lam_nu[None, :], cost.matrix(support, support), pot.gamma)
    else:
        if samples is None:
            xs = spec.sample_mu(make_rng(seed, "damping/mu"), n)
            ys = spec.sample_nu(make_rng(seed, "damping/nu"), n)
        else:
            xs, ys = samples
        _, F, saturated = dual_terms(pot, xs, ys, cost)
    if saturated:
        logger.warning(f"Damping term clamped {saturated} exponents")
    return float(pot.gamma * F.mean())


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def _weighted(points, weights) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(points, EmpiricalEmbedding):
        return points.points, points.weights
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if weights is None:
        weights = np.full(points.shape[0], 1.0 / points.shape[0])
    weights = np.asarray(weights, dtype=np.float64)
    if abs(weights.sum() - 1.0) > constants.WEIGHT_TOLERANCE:
        raise InvalidParameterError(f"weights sum to {weights.sum()!r}, expected 1")
    return points, weights


def exact_emd_assignment(a, b, cost: Union[CostFn, CostKind]) -> float:
    """(1/n)·min_σ Σ C(a_i, b_σ(i)) for equal-size uniform point sets"""
    a, b = np.atleast_2d(np.asarray(a, dtype=np.float64)), np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] != b.shape[0]:
        raise InvalidParameterError(
            f"assignment needs equal sizes, got {a.shape[0]} and {b.shape[0]}; use exact_ot_discrete instead"
        )
    matrix = _cost(cost).matrix(a, b)
    rows, cols = linear_sum_assignment(matrix)
    return float(matrix[rows, cols].sum() / a.shape[0])


def exact_ot_plan(a, b, cost: Union[CostFn, CostKind], a_weights=None, b_weights=None) -> Tuple[float, np.ndarray]:
    """Exact discrete OT (network simplex); returns the optimal value and the coupling"""
    xs, wa = _weighted(a, a_weights)
    ys, wb = _weighted(b, b_weights)
    n, k = xs.shape[0], ys.shape[0]
    limit = settings.EXACT_OT_MAX_SUPPORT
    if n > limit or k > limit:
        raise SupportTooLargeError(f"exact OT supports {n}x{k} exceed {limit}; use sinkhorn_oracle instead")
    C = _cost(cost).matrix(xs, ys)
    plan, log = ot.emd(wa / wa.sum(), wb / wb.sum(), C, numItermax=constants.EMD_MAX_ITER, log=True)
    if log.get("warning"):
        logger.warning(f"Network simplex on {n}x{k} supports: {log['warning']}")
    plan = np.maximum(np.asarray(plan, dtype=np.float64), 0.0)
    return float((plan * C).sum()), plan


def exact_ot_discrete(a, b, cost: Union[CostFn, CostKind], a_weights=None, b_weights=None) -> float:
    """Exact OT value between weighted point sets (γ = 0)"""
    value, _ = exact_ot_plan(a, b, cost, a_weights, b_weights)
    return value


def _sinkhorn_sweeps(f: np.ndarray, g: np.ndarray, C: np.ndarray, log_a: np.ndarray, log_b: np.ndarray,
                     gamma: float, max_iter: int, tol: float) -> Tuple[np.ndarray, np.ndarray, float, int]:
    error, iteration = np.inf, 0
    wa = np.exp(log_a)
    for iteration in range(1, max_iter + 1):
        f = -gamma * logsumexp((g[None, :] - C) / gamma + log_b[None, :], axis=1)
        g = -gamma * logsumexp((f[:, None] - C) / gamma + log_a[:, None], axis=0)
        log_plan = (f[:, None] + g[None, :] - C) / gamma + log_a[:, None] + log_b[None, :]
        error = float(np.abs(np.exp(logsumexp(log_plan, axis=1)) - wa).sum())
        if error < tol:
            break
    return f, g, error, iteration


def sinkhorn_oracle(a, b, cost: Union[CostFn, CostKind], gamma: float, iters: int = 10_000,
                    a_weights=None, b_weights=None, tol: float = constants.SINKHORN_TOLERANCE,
                    anneal: bool = True) -> SinkhornResult:
    """
    Entropic OT min_π ⟨C, π⟩ + γ·KL(π | a⊗b) by log-domain alternating scaling

    The plan is π_ij = a_i b_j exp((f_i + g_j − C_ij)/γ). With ``anneal`` the
    potentials are warm-started through a geometric sequence of larger γ
    (halving from max C) before the target γ is solved to ``tol``.
    """
    if not gamma > 0.0:
        raise InvalidParameterError("sinkhorn requires gamma > 0")
    xs, wa = _weighted(a, a_weights)
    ys, wb = _weighted(b, b_weights)
    keep_a, keep_b = wa > 0.0, wb > 0.0
    xs, wa, ys, wb = xs[keep_a], wa[keep_a], ys[keep_b], wb[keep_b]
    C = _cost(cost).matrix(xs, ys)
    log_a, log_b = np.log(wa), np.log(wb)

    f, g = np.zeros(len(wa)), np.zeros(len(wb))
    used = 0
    if anneal:
        stage = float(C.max())
        while stage > 2.0 * gamma and used < iters:
            f, g, _, spent = _sinkhorn_sweeps(f, g, C, log_a, log_b, stage, min(200, iters - used), 1e-6)
            used += spent
            stage *= 0.5
    f, g, error, spent = _sinkhorn_sweeps(f, g, C, log_a, log_b, gamma, max(iters - used, 1), tol)
    iteration = used + spent
    converged = error < tol

    log_plan = (f[:, None] + g[None, :] - C) / gamma + log_a[:, None] + log_b[None, :]
    plan = np.exp(log_plan)
    transport = float((plan * C).sum())
    kl = float((plan * (log_plan - log_a[:, None] - log_b[None, :])).sum())
    if not converged:
        logger.warning(f"Sinkhorn did not converge in {iters} iterations (marginal error {error:.3e})")
    return SinkhornResult(
        value=transport + gamma * kl,
        converged=converged,
        iterations=iteration,
        marginal_error=error,
        transport_cost=transport,
    )
