"""
Gaussian MLP policies and tabular softmax policies

θ is one flat vector: for every dense layer the weight matrix (row-major,
shape out×in) followed by its bias, then the state-independent log-std of
the Gaussian head. Gradients are reverse-mode, written out per layer.
"""

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ..core import constants
from ..core.exceptions import DimensionMismatchError, InvalidParameterError
from ..core.seeding import make_rng

logger = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PolicyArch:
    state_dim: int
    hidden: Tuple[int, ...]
    action_dim: int

    def __post_init__(self):
        if self.state_dim < 1 or self.action_dim < 1 or any(width < 1 for width in self.hidden):
            raise InvalidParameterError(f"invalid policy architecture {self}")

    @property
    def sizes(self) -> Tuple[int, ...]:
        return (self.state_dim, *self.hidden, self.action_dim)

    @property
    def layer_shapes(self) -> List[Tuple[int, int]]:
        sizes = self.sizes
        return [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]

    @property
    def param_count(self) -> int:
        return sum(out * inp + out for out, inp in self.layer_shapes) + self.action_dim


@dataclass(frozen=True, eq=False)
class PolicyParams:
    theta: np.ndarray
    arch: PolicyArch

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64)
        if theta.shape != (self.arch.param_count,):
            raise DimensionMismatchError(f"theta has {theta.size} entries, architecture needs {self.arch.param_count}")
        object.__setattr__(self, "theta", theta)

    @property
    def log_std(self) -> np.ndarray:
        return self.theta[-self.arch.action_dim:]

    def layers(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        out, offset = [], 0
        for rows, cols in self.arch.layer_shapes:
            weight = self.theta[offset:offset + rows * cols].reshape(rows, cols)
            offset += rows * cols
            bias = self.theta[offset:offset + rows]
            offset += rows
            out.append((weight, bias))
        return out


def flatten(layers: Sequence[Tuple[np.ndarray, np.ndarray]], log_std: np.ndarray) -> np.ndarray:
    parts = []
    for weight, bias in layers:
        parts.extend([np.asarray(weight, dtype=np.float64).reshape(-1), np.asarray(bias, dtype=np.float64).reshape(-1)])
    parts.append(np.asarray(log_std, dtype=np.float64).reshape(-1))
    return np.concatenate(parts)


def zero_params(arch: PolicyArch, log_std: float = 0.0) -> PolicyParams:
    theta = np.zeros(arch.param_count)
    theta[-arch.action_dim:] = log_std
    return PolicyParams(theta, arch)


def init_params(arch: PolicyArch, seed: int, log_std: float = constants.DEFAULT_LOG_STD) -> PolicyParams:
    """N(0, 1/fan_in) weights, zero biases"""
    rng = make_rng(seed, "policy/init")
    layers = [(rng.normal(0.0, 1.0 / math.sqrt(inp), size=(out, inp)), np.zeros(out)) for out, inp in arch.layer_shapes]
    return PolicyParams(flatten(layers, np.full(arch.action_dim, log_std)), arch)


def _check_finite(params: PolicyParams):
    if not np.all(np.isfinite(params.theta)):
        raise InvalidParameterError("policy parameters contain NaN or infinity")


def _states(params: PolicyParams, states) -> np.ndarray:
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if states.shape[1] != params.arch.state_dim:
        raise DimensionMismatchError(f"policy expects states of dimension {params.arch.state_dim}, got {states.shape[1]}")
    return states


def _forward(params: PolicyParams, states: np.ndarray):
    """Batch forward pass; returns the means and the per-layer (input, pre-activation) cache"""
    cache = []
    h = states
    layers = params.layers()
    for index, (weight, bias) in enumerate(layers):
        z = h @ weight.T + bias
        cache.append((h, z))
        h = np.maximum(z, 0.0) if index < len(layers) - 1 else z
    return h, cache


def _backward(params: PolicyParams, cache, cotangent: np.ndarray, per_sample: bool = False) -> np.ndarray:
    """VJP of the mean network; (P,) summed or (n, P) per sample, zero in the log-std slots"""
    layers = params.layers()
    n = cotangent.shape[0]
    pieces = []
    g = cotangent
    for index in reversed(range(len(layers))):
        weight, _ = layers[index]
        h, z = cache[index]
        if index < len(layers) - 1:
            g = g * (z > 0.0)
        if per_sample:
            pieces.append((np.einsum("no,ni->noi", g, h).reshape(n, -1), g))
        else:
            pieces.append(((g.T @ h).reshape(-1), g.sum(axis=0)))
        g = g @ weight
    pieces.reverse()
    tail_shape = (n, params.arch.action_dim) if per_sample else (params.arch.action_dim,)
    axis = 1 if per_sample else 0
    return np.concatenate([part for pair in pieces for part in pair] + [np.zeros(tail_shape)], axis=axis)


def policy_mean(params: PolicyParams, s) -> np.ndarray:
    _check_finite(params)
    single = np.asarray(s).ndim <= 1
    means, _ = _forward(params, _states(params, s))
    return means[0] if single else means


def mean_vjp(params: PolicyParams, states, cotangent) -> np.ndarray:
    """Σ_i (∂ mean(s_i)/∂θ)ᵀ g_i"""
    states = _states(params, states)
    cotangent = np.atleast_2d(np.asarray(cotangent, dtype=np.float64))
    _, cache = _forward(params, states)
    return _backward(params, cache, cotangent)


def _gaussian_terms(params: PolicyParams, means: np.ndarray, actions: np.ndarray):
    log_std = params.log_std
    inv_var = np.exp(-2.0 * log_std)
    diff = actions - means
    logp = -0.5 * (_LOG_2PI * params.arch.action_dim) - log_std.sum() - 0.5 * (diff * diff * inv_var).sum(axis=1)
    d_mean = diff * inv_var
    d_log_std = -1.0 + diff * diff * inv_var
    return logp, d_mean, d_log_std


def log_prob_grad(params: PolicyParams, s, a) -> Tuple[float, np.ndarray]:
    logps, grads = log_prob_grad_batch(params, np.atleast_2d(s), np.atleast_2d(a))
    return float(logps[0]), grads[0]


def log_prob_grad_batch(params: PolicyParams, states, actions) -> Tuple[np.ndarray, np.ndarray]:
    """Per-sample log π_θ(a_i|s_i) and ∇_θ log π_θ(a_i|s_i) as an (n, P) matrix"""
    _check_finite(params)
    states = _states(params, states)
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    if actions.shape != (states.shape[0], params.arch.action_dim):
        raise DimensionMismatchError(f"actions of shape {actions.shape} for {states.shape[0]} states")
    if not (np.all(np.isfinite(states)) and np.all(np.isfinite(actions))):
        raise InvalidParameterError("log_prob_grad needs finite states and actions")
    means, cache = _forward(params, states)
    logp, d_mean, d_log_std = _gaussian_terms(params, means, actions)
    grads = _backward(params, cache, d_mean, per_sample=True)
    grads[:, -params.arch.action_dim:] = d_log_std
    return logp, grads


def reparam_action_grad(params: PolicyParams, s, eps, cotangent) -> Tuple[np.ndarray, np.ndarray]:
    """a = mean(s) + exp(log_std)⊙ε and (∂a/∂θ)ᵀ·cotangent"""
    eps = np.asarray(eps, dtype=np.float64).reshape(-1)
    if eps.shape != (params.arch.action_dim,):
        raise DimensionMismatchError(f"eps has {eps.size} entries, action_dim is {params.arch.action_dim}")
    cotangent = np.asarray(cotangent, dtype=np.float64).reshape(-1)
    states = _states(params, s)
    means, cache = _forward(params, states)
    std = np.exp(params.log_std)
    grad = _backward(params, cache, cotangent[None, :])
    grad[-params.arch.action_dim:] = cotangent * std * eps
    return means[0] + std * eps, grad


def action_jacobian(params: PolicyParams, s, eps) -> np.ndarray:
    """Full (action_dim, P) Jacobian of the reparameterized action"""
    eye = np.eye(params.arch.action_dim)
    return np.stack([reparam_action_grad(params, s, eps, row)[1] for row in eye])


def perturb(params: PolicyParams, sigma: float, eps) -> PolicyParams:
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != params.theta.shape:
        raise DimensionMismatchError(f"perturbation has {eps.size} entries, theta has {params.theta.size}")
    return PolicyParams(params.theta + sigma * eps, params.arch)


# ---------------------------------------------------------------------------
# Policy objects used by rollouts and the learners
# ---------------------------------------------------------------------------

class GaussianPolicy:
    def __init__(self, params: PolicyParams, deterministic: bool = False):
        self.params = params
        self.deterministic = deterministic

    @property
    def theta(self) -> np.ndarray:
        return self.params.theta

    def with_theta(self, theta: np.ndarray) -> "GaussianPolicy":
        return GaussianPolicy(PolicyParams(theta, self.params.arch), self.deterministic)

    def act(self, state, rng: np.random.Generator) -> np.ndarray:
        mean = policy_mean(self.params, np.asarray(state, dtype=np.float64).reshape(-1))
        if self.deterministic:
            return mean
        return mean + np.exp(self.params.log_std) * rng.standard_normal(self.params.arch.action_dim)

    def mean_actions(self, states) -> np.ndarray:
        return np.atleast_2d(policy_mean(self.params, np.atleast_2d(states)))

    def log_prob_grad_batch(self, states, actions) -> Tuple[np.ndarray, np.ndarray]:
        states = np.asarray(states, dtype=np.float64).reshape(len(states), -1)
        actions = np.asarray(actions, dtype=np.float64).reshape(len(actions), -1)
        return log_prob_grad_batch(self.params, states, actions)


class TabularPolicy:
    """Softmax over per-state logits; θ is the flattened (S, A) logit table"""

    def __init__(self, logits: np.ndarray):
        logits = np.asarray(logits, dtype=np.float64)
        if logits.ndim != 2:
            raise DimensionMismatchError(f"tabular logits must be (states, actions), got {logits.shape}")
        self.logits = logits

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "TabularPolicy":
        return cls(np.zeros((num_states, num_actions)))

    @classmethod
    def random(cls, num_states: int, num_actions: int, seed: int, scale: float = 1.0) -> "TabularPolicy":
        return cls(make_rng(seed, "tabular_policy").normal(0.0, scale, size=(num_states, num_actions)))

    @property
    def theta(self) -> np.ndarray:
        return self.logits.reshape(-1)

    def with_theta(self, theta: np.ndarray) -> "TabularPolicy":
        return TabularPolicy(np.asarray(theta, dtype=np.float64).reshape(self.logits.shape))

    def probabilities(self) -> np.ndarray:
        shifted = self.logits - self.logits.max(axis=1, keepdims=True)
        weights = np.exp(shifted)
        return weights / weights.sum(axis=1, keepdims=True)

    def act(self, state, rng: np.random.Generator) -> int:
        probs = self.probabilities()[int(state)]
        return int(rng.choice(len(probs), p=probs))

    def log_prob_grad_batch(self, states, actions) -> Tuple[np.ndarray, np.ndarray]:
        """log π(a|s) and the score e_(s,a) − π(·|s) embedded in the flat logit vector"""
        states = np.asarray(states, dtype=np.int64).reshape(-1)
        actions = np.asarray(actions, dtype=np.int64).reshape(-1)
        probs = self.probabilities()
        num_actions = self.logits.shape[1]
        grads = np.zeros((len(states), self.logits.size))
        rows = np.arange(len(states))
        for offset in range(num_actions):
            grads[rows, states * num_actions + offset] = -probs[states, offset]
        grads[rows, states * num_actions + actions] += 1.0
        return np.log(probs[states, actions]), grads


Policy = Union[GaussianPolicy, TabularPolicy]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_params(params: PolicyParams, path: Union[str, Path]) -> None:
    """Magic, layer sizes, log-std length and θ as little-endian float64"""
    sizes = params.arch.sizes
    header = constants.CHECKPOINT_MAGIC + struct.pack(f"<I{len(sizes)}III", len(sizes), *sizes,
                                                      params.arch.action_dim, params.theta.size)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + params.theta.astype("<f8").tobytes())
    logger.info(f"Saved policy checkpoint {path} ({params.theta.size} parameters)")


def load_params(path: Union[str, Path]) -> PolicyParams:
    blob = Path(path).read_bytes()
    magic = constants.CHECKPOINT_MAGIC
    if not blob.startswith(magic):
        raise InvalidParameterError(f"{path} is not a policy checkpoint")
    offset = len(magic)
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    sizes = struct.unpack_from(f"<{count}I", blob, offset)
    offset += 4 * count
    log_std_len, theta_len = struct.unpack_from("<II", blob, offset)
    offset += 8
    arch = PolicyArch(sizes[0], tuple(sizes[1:-1]), sizes[-1])
    if log_std_len != arch.action_dim:
        raise InvalidParameterError(f"checkpoint log-std length {log_std_len} does not match action_dim {arch.action_dim}")
    theta = np.frombuffer(blob, dtype="<f8", count=theta_len, offset=offset).astype(np.float64)
    return PolicyParams(theta, arch)


def as_policy(policy_or_params: Union[Policy, PolicyParams], deterministic: bool = False) -> Policy:
    if isinstance(policy_or_params, PolicyParams):
        return GaussianPolicy(policy_or_params, deterministic)
    return policy_or_params


def dense_arch(state_dim: int, action_dim: int, hidden: Optional[Sequence[int]] = None) -> PolicyArch:
    return PolicyArch(state_dim, tuple(constants.DEFAULT_HIDDEN if hidden is None else hidden), action_dim)
