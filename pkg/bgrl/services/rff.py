"""
Random Fourier feature maps for the RBF kernel

φ(z) = √(2/m)·cos(Gz + b) with G = G₀/σ, G₀ ~ N(0, 1) and b ~ U[0, 2π), so
that ⟨φ(x), φ(y)⟩ is an unbiased estimate of exp(−‖x−y‖²/(2σ²)). Every
behavioral test function λ(x) = ⟨p, φ(x)⟩ lives in the span of one map.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..core.exceptions import DimensionMismatchError, InvalidParameterError
from ..core.seeding import make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Immutable random feature map; evaluation is pure"""
    input_dim: int
    num_features: int
    projection: np.ndarray  # (m, d)
    phases: np.ndarray  # (m,)
    bandwidth: float

    def __post_init__(self):
        self.projection.setflags(write=False)
        self.phases.setflags(write=False)

    @property
    def scale(self) -> float:
        return math.sqrt(2.0 / self.num_features)

    def _check(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 0:
            z = z.reshape(1)
        if z.shape[-1] != self.input_dim:
            raise DimensionMismatchError(f"feature map expects dimension {self.input_dim}, got {z.shape[-1]}")
        return z

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return rff_eval(self, z)

    def batch(self, points: np.ndarray) -> np.ndarray:
        """Evaluate on the rows of an (n, d) array, returning (n, m)"""
        points = self._check(np.atleast_2d(points))
        return self.scale * np.cos(points @ self.projection.T + self.phases)

    def gradient(self, z: np.ndarray, coefficients: np.ndarray) -> np.ndarray:
        """∇_z ⟨p, φ(z)⟩ = −√(2/m)·Gᵀ(p ⊙ sin(Gz + b))"""
        z = self._check(z)
        angle = self.projection @ z + self.phases
        return -self.scale * (self.projection.T @ (np.asarray(coefficients, dtype=np.float64) * np.sin(angle)))


def rff_new(d: int, m: int, sigma: float, seed: int) -> FeatureMap:
    if d < 1 or m < 1:
        raise InvalidParameterError(f"feature map needs d >= 1 and m >= 1, got d={d}, m={m}")
    if not (sigma > 0.0 and math.isfinite(sigma)):
        raise InvalidParameterError(f"bandwidth must be positive, got {sigma}")
    rng = make_rng(seed, "rff")
    projection = rng.standard_normal((m, d)) / sigma
    phases = rng.uniform(0.0, 2.0 * math.pi, size=m)
    logger.debug(f"Feature map created: d={d}, m={m}, sigma={sigma}, seed={seed}")
    return FeatureMap(input_dim=int(d), num_features=int(m), projection=projection, phases=phases, bandwidth=float(sigma))


def rff_eval(feature_map: FeatureMap, z: np.ndarray) -> np.ndarray:
    z = feature_map._check(z)
    if z.ndim != 1:
        raise DimensionMismatchError(f"rff_eval expects a single point, got shape {z.shape}")
    return feature_map.scale * np.cos(feature_map.projection @ z + feature_map.phases)


def rbf_kernel(x: np.ndarray, y: np.ndarray, sigma: float) -> float:
    diff = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return float(np.exp(-np.dot(diff, diff) / (2.0 * sigma * sigma)))
