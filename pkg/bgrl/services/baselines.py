"""
Comparison regularizers for ES: histogram divergences and Euclidean novelty
"""

import logging
import time
from collections import deque
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import jensenshannon
from scipy.stats import entropy

from ..core.exceptions import DimensionMismatchError
from ..models.config import HistogramDivergenceCfg
from ..models.enums import DivergenceKind
from ..models.records import IterationRecord
from .behavior_guided import ESResult, _record, es_gradient, evaluate_perturbations
from .embed import BEM
from .envsim import Env
from .policy import Policy
from .transport import EmpiricalEmbedding

logger = logging.getLogger(__name__)

EUCLIDEAN_BC = "euclidean"

Regularizer = Union[HistogramDivergenceCfg, str, None]


def as_samples(samples) -> np.ndarray:
    """(n, d) sample matrix; a flat sequence is n scalar samples"""
    samples = np.asarray(samples, dtype=np.float64)
    return samples.reshape(len(samples), -1) if samples.ndim else samples.reshape(1, 1)


def fit_ranges(samples: np.ndarray) -> List[Tuple[float, float]]:
    """Per-dimension (min, max), widened around degenerate dimensions"""
    samples = as_samples(samples)
    low, high = samples.min(axis=0), samples.max(axis=0)
    ranges = []
    for lo, hi in zip(low, high):
        if not hi > lo:
            lo, hi = lo - 0.5, hi + 0.5
        ranges.append((float(lo), float(hi)))
    return ranges


def smoothed_histogram(samples: np.ndarray, bins: int, ranges: Sequence[Tuple[float, float]], epsilon: float) -> np.ndarray:
    """Normalized histogram with ε added to every bin; out-of-range samples land in edge bins"""
    samples = as_samples(samples)
    low = np.array([r[0] for r in ranges])
    high = np.array([r[1] for r in ranges])
    counts, _ = np.histogramdd(np.clip(samples, low, high), bins=bins, range=list(ranges))
    counts = counts.reshape(-1)
    return (counts + epsilon) / (counts.sum() + epsilon * counts.size)


def divergence(kind: DivergenceKind, p: np.ndarray, q: np.ndarray) -> float:
    kind = DivergenceKind(kind)
    if kind == DivergenceKind.KL:
        return float(entropy(p, q))
    if kind == DivergenceKind.JS:
        return float(jensenshannon(p, q) ** 2)
    if kind == DivergenceKind.HELLINGER:
        return float(max(1.0 - np.sum(np.sqrt(p * q)), 0.0))
    return float(0.5 * np.abs(p - q).sum())


def histogram_divergence(cfg: HistogramDivergenceCfg, samples_a, samples_b) -> float:
    samples_a, samples_b = as_samples(samples_a), as_samples(samples_b)
    if samples_a.shape[1] != samples_b.shape[1]:
        raise DimensionMismatchError(f"histogram samples have {samples_a.shape[1]} and {samples_b.shape[1]} dimensions")
    ranges = cfg.ranges or fit_ranges(np.vstack([samples_a, samples_b]))
    p = smoothed_histogram(samples_a, cfg.bins, ranges, cfg.epsilon)
    q = smoothed_histogram(samples_b, cfg.bins, ranges, cfg.epsilon)
    return divergence(cfg.kind, p, q)


def novelty_scores(regularizer: Regularizer, points: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Per-perturbation distance of each embedding point to the reference samples"""
    points, reference = np.atleast_2d(points), np.atleast_2d(reference)
    if regularizer is None:
        return np.zeros(len(points))
    if regularizer == EUCLIDEAN_BC:
        return np.linalg.norm(points - reference.mean(axis=0), axis=1)
    return np.array([histogram_divergence(regularizer, point[None, :], reference) for point in points])


def es_step_with_divergence(policy: Policy, env: Env, bem: BEM, regularizer: Regularizer, n: int, sigma: float,
                            eta: float, beta: float, seed: int, reference: Optional[np.ndarray] = None,
                            iteration: int = 0) -> ESResult:
    """
    ES whose novelty term is a histogram divergence or Euclidean distance

    ``reference`` holds earlier embedding samples (defaults to the unperturbed
    rollout); ``regularizer=None`` is vanilla ES and ignores β.
    """
    started = time.perf_counter()
    batch = evaluate_perturbations(policy, env, bem, n, sigma, seed)
    if regularizer is None:
        beta = 0.0
    reference = batch.baseline_point[None, :] if reference is None else reference
    novelty = novelty_scores(regularizer, batch.points, reference)
    gradient = es_gradient(batch.eps, batch.rewards, batch.baseline_reward, novelty, beta, sigma)
    updated = policy.with_theta(policy.theta + eta * gradient)
    record = _record(iteration, batch.rewards, started, wd=float(novelty.mean()))
    return ESResult(updated, None, record, EmpiricalEmbedding.from_points(batch.points))


class DivergenceRegularizedES:
    """
    Histogram-regularized ES; bin ranges are fitted on the first (warmup)
    iteration and reused afterwards
    """

    def __init__(self, policy: Policy, env: Env, bem: BEM, regularizer: Regularizer, n: int, sigma: float,
                 eta: float, beta: float, window: int = 2):
        self.policy = policy
        self.env = env
        self.bem = bem
        self.regularizer = regularizer
        self.n = n
        self.sigma = sigma
        self.eta = eta
        self.beta = beta
        self.window: deque = deque(maxlen=window)
        self.iteration = 0

    def reference(self) -> Optional[np.ndarray]:
        return np.vstack(list(self.window)) if self.window else None

    def step(self, seed: int) -> IterationRecord:
        result = es_step_with_divergence(self.policy, self.env, self.bem, self.regularizer, self.n, self.sigma,
                                         self.eta, self.beta, seed, self.reference(), self.iteration)
        points = result.embedding.points
        if isinstance(self.regularizer, HistogramDivergenceCfg) and self.regularizer.ranges is None:
            self.regularizer = self.regularizer.model_copy(update={"ranges": fit_ranges(points)})
            logger.info(f"Histogram ranges fitted on warmup iteration: {self.regularizer.ranges}")
        self.policy = result.policy
        self.window.append(points)
        self.iteration += 1
        return result.record
