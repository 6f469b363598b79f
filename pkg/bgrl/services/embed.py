"""
Behavioral embedding maps Φ: Γ → E and probe-based off-policy embeddings
"""

import logging
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from ..core.exceptions import DimensionMismatchError, InvalidParameterError
from ..core.seeding import make_rng
from ..models.enums import BEMKind
from .envsim import Env, TabularMDP, Trajectory, enumerate_trajectories
from .transport import EmpiricalEmbedding

logger = logging.getLogger(__name__)

DISCRETE_KINDS = (BEMKind.STATE_VISIT_COUNT, BEMKind.STATE_ACTION_COUNT, BEMKind.FIXED_STATE_FREQ)


@dataclass(frozen=True)
class BEM:
    kind: BEMKind
    state_dim: int
    action_dim: int
    horizon: int
    num_states: int = 0
    num_actions: int = 0
    fixed_state: Optional[int] = None

    @property
    def output_dim(self) -> int:
        return {
            BEMKind.FINAL_STATE: self.state_dim,
            BEMKind.ACTION_CONCAT: (self.horizon + 1) * self.action_dim,
            BEMKind.TOTAL_REWARD: 1,
            BEMKind.REWARD_TO_GO: self.horizon + 1,
            BEMKind.STATE_VISIT_COUNT: self.num_states,
            BEMKind.STATE_ACTION_COUNT: self.num_states * self.num_actions,
            BEMKind.FIXED_STATE_FREQ: 1,
            BEMKind.MEAN_X_DISPLACEMENT: 1,
        }[self.kind]


def make_bem(kind: BEMKind, env: Env, fixed_state: Optional[int] = None) -> BEM:
    kind = BEMKind(kind)
    if kind in DISCRETE_KINDS and not env.discrete:
        raise InvalidParameterError(f"{kind.value} embedding needs a tabular environment")
    if kind == BEMKind.FIXED_STATE_FREQ and fixed_state is None:
        raise InvalidParameterError("fixed_state_freq embedding needs a state id")
    return BEM(
        kind=kind,
        state_dim=env.state_dim,
        action_dim=env.action_dim,
        horizon=env.horizon,
        num_states=getattr(env, "num_states", 0),
        num_actions=getattr(env, "num_actions", 0),
        fixed_state=fixed_state,
    )


def tabular_bem(kind: BEMKind, mdp: TabularMDP, fixed_state: Optional[int] = None) -> BEM:
    return BEM(
        kind=BEMKind(kind),
        state_dim=1,
        action_dim=1,
        horizon=mdp.horizon,
        num_states=mdp.num_states,
        num_actions=mdp.num_actions,
        fixed_state=fixed_state,
    )


def embed_trajectory(bem: BEM, tau: Trajectory) -> np.ndarray:
    kind = bem.kind
    if kind in DISCRETE_KINDS and not tau.is_discrete:
        raise InvalidParameterError(f"{kind.value} embedding needs discrete states")

    if kind == BEMKind.FINAL_STATE:
        point = np.atleast_1d(tau.states[-1]).astype(np.float64)
    elif kind == BEMKind.ACTION_CONCAT:
        point = np.asarray(tau.actions, dtype=np.float64).reshape(-1)
    elif kind == BEMKind.TOTAL_REWARD:
        point = np.array([tau.total_reward])
    elif kind == BEMKind.REWARD_TO_GO:
        point = np.cumsum(tau.rewards[::-1])[::-1].astype(np.float64)
    elif kind == BEMKind.STATE_VISIT_COUNT:
        point = np.bincount(tau.states, minlength=bem.num_states).astype(np.float64)
    elif kind == BEMKind.STATE_ACTION_COUNT:
        index = tau.states * bem.num_actions + tau.actions
        point = np.bincount(index, minlength=bem.num_states * bem.num_actions).astype(np.float64)
    elif kind == BEMKind.FIXED_STATE_FREQ:
        point = np.array([float(np.count_nonzero(tau.states == bem.fixed_state))])
    else:
        xs = np.asarray(tau.states, dtype=np.float64).reshape(len(tau.states), -1)[:, 0]
        point = np.array([float(np.mean(np.diff(xs))) if len(xs) > 1 else 0.0])

    if point.shape != (bem.output_dim,):
        raise DimensionMismatchError(f"{kind.value} embedding produced {point.shape}, expected ({bem.output_dim},)")
    return point


def embed_all(bem: BEM, trajectories: Sequence[Trajectory]) -> np.ndarray:
    """(n, output_dim) matrix of embedded trajectories"""
    return np.stack([embed_trajectory(bem, tau) for tau in trajectories])


def embedding_distribution(bem: BEM, trajectories: Sequence[Trajectory], weights=None) -> EmpiricalEmbedding:
    if not trajectories:
        raise InvalidParameterError("embedding distribution of zero trajectories")
    points = [embed_trajectory(bem, tau) for tau in trajectories]
    if len({p.shape for p in points}) != 1:
        raise DimensionMismatchError("trajectories embed to points of different dimensions")
    return EmpiricalEmbedding.from_points(np.stack(points), weights)


def exact_embedding_distribution(mdp: TabularMDP, policy, bem: BEM) -> EmpiricalEmbedding:
    """Pushforward of the exact trajectory distribution through Φ, duplicates merged"""
    enumerated = enumerate_trajectories(mdp, policy)
    weights = enumerated.probabilities / enumerated.probabilities.sum()
    return embedding_distribution(bem, enumerated.trajectories, weights)


class ProbeDistribution:
    """FIFO buffer of visited states sampled as the probe distribution P_S"""

    def __init__(self, capacity: int, seed: int = 0):
        if capacity < 1:
            raise InvalidParameterError(f"probe capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.seed = seed
        self.buffer: deque = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.buffer)

    def add(self, states: Iterable) -> None:
        for state in states:
            self.buffer.append(np.array(state, dtype=np.float64).reshape(-1))

    def add_trajectories(self, trajectories: Iterable[Trajectory]) -> None:
        for tau in trajectories:
            self.add(tau.states)

    def snapshot(self) -> np.ndarray:
        if not self.buffer:
            raise InvalidParameterError("probe buffer is empty")
        return np.stack(list(self.buffer))

    def sample(self, n: int, seed: Optional[int] = None) -> np.ndarray:
        states = self.snapshot()
        rng = make_rng(self.seed if seed is None else seed, "probe")
        return states[rng.integers(0, len(states), size=n)]


def probe_points(policy, states: np.ndarray, include_log_std: bool = False) -> np.ndarray:
    """Rows [s ; mean π(s)] (optionally with the policy log-std appended)"""
    states = np.atleast_2d(states)
    means = policy.mean_actions(states)
    parts = [states, means]
    if include_log_std:
        parts.append(np.tile(policy.params.log_std, (len(states), 1)))
    return np.hstack(parts)


def probe_embedding(probe: ProbeDistribution, policy, n: int, seed: int,
                    include_log_std: bool = False) -> EmpiricalEmbedding:
    states = probe.sample(n, seed)
    return EmpiricalEmbedding.from_points(probe_points(policy, states, include_log_std))
