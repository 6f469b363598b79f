"""
Episodic environments, trajectory recording and exact tabular solvers

Every environment is a small state machine: ``reset(rng)`` draws s₀ and
``step(s, a, rng)`` returns (s', r). An episode records exactly H+1 steps
t = 0..H. Tabular MDPs are time-indexed (state id s = t·k + i for layer t),
so no state recurs across time and finite-horizon values are exact.
"""

import logging
import math
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core import constants
from ..core.config import settings
from ..core.exceptions import EnumerationLimitError, InvalidParameterError, RolloutError
from ..core.seeding import derive_seed, make_rng
from ..models.config import EnvSpec
from ..models.enums import EnvKind
from ..models.records import PolicyImprovementReport

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """s₀..s_H, a₀..a_H, r₀..r_H of one episode"""
    states: np.ndarray  # (H+1, state_dim) or (H+1,) integer ids
    actions: np.ndarray  # (H+1, action_dim) or (H+1,) integer ids
    rewards: np.ndarray  # (H+1,)
    horizon: int

    def __post_init__(self):
        n = self.horizon + 1
        if not (len(self.states) == len(self.actions) == len(self.rewards) == n):
            raise InvalidParameterError(
                f"trajectory lists must have length H+1={n}, got "
                f"{len(self.states)}/{len(self.actions)}/{len(self.rewards)}"
            )
        if not np.all(np.isfinite(self.rewards)):
            raise InvalidParameterError("trajectory rewards must be finite")

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.rewards))

    @property
    def is_discrete(self) -> bool:
        return np.issubdtype(self.states.dtype, np.integer)


# ---------------------------------------------------------------------------
# Dynamics helpers
# ---------------------------------------------------------------------------

def multigoal_reward(s, a, goals=constants.MULTIGOAL_GOALS) -> float:
    """−30·‖a‖² − min_g d(s, g)²"""
    s, a = np.asarray(s, dtype=np.float64), np.asarray(a, dtype=np.float64)
    nearest = min(float(np.sum((s - np.asarray(goal)) ** 2)) for goal in goals)
    return -constants.MULTIGOAL_ACTION_PENALTY * float(np.dot(a, a)) - nearest


def deceptive_point_step(s, a, wall=constants.DECEPTIVE_WALL, goal=constants.DECEPTIVE_GOAL) -> Tuple[np.ndarray, float]:
    """
    Move s by a unless the segment s→s+a crosses the horizontal wall

    A blocked move is truncated at the crossing point and left on the mover's
    side of the wall line; the reward is −d(s', goal).
    """
    s, a = np.asarray(s, dtype=np.float64), np.asarray(a, dtype=np.float64)
    (x_lo, y_wall), (x_hi, _) = wall
    x_lo, x_hi = min(x_lo, x_hi), max(x_lo, x_hi)
    target = s + a
    crosses = (s[1] < y_wall <= target[1]) or (s[1] > y_wall >= target[1])
    if crosses:
        fraction = (y_wall - s[1]) / a[1]
        x_cross = s[0] + fraction * a[0]
        if x_lo <= x_cross <= x_hi:
            target = np.array([x_cross, np.nextafter(y_wall, s[1])])
    return target, -float(np.linalg.norm(target - np.asarray(goal, dtype=np.float64)))


# ---------------------------------------------------------------------------
# Environments
# ---------------------------------------------------------------------------

class Env(ABC):
    kind: EnvKind
    horizon: int
    state_dim: int
    action_dim: int
    discrete: bool = False

    @abstractmethod
    def reset(self, rng: np.random.Generator):
        ...

    @abstractmethod
    def step(self, state, action, rng: np.random.Generator):
        ...


class MultiGoalEnv(Env):
    """Point mass driven by velocity commands between two goals"""
    kind = EnvKind.MULTI_GOAL
    state_dim = 2
    action_dim = 2

    def __init__(self, horizon: int = constants.MULTIGOAL_HORIZON, goals=constants.MULTIGOAL_GOALS):
        self.horizon = horizon
        self.goals = tuple(tuple(float(c) for c in goal) for goal in goals)

    def reset(self, rng):
        return rng.normal(0.0, math.sqrt(constants.MULTIGOAL_INIT_VARIANCE), size=2)

    def step(self, state, action, rng):
        reward = multigoal_reward(state, action, self.goals)
        return np.asarray(state, dtype=np.float64) + np.asarray(action, dtype=np.float64), reward


class DeceptivePointEnv(Env):
    kind = EnvKind.DECEPTIVE_POINT
    state_dim = 2
    action_dim = 2

    def __init__(self, horizon: int = constants.DECEPTIVE_HORIZON):
        self.horizon = horizon
        self.start = np.array(constants.DECEPTIVE_START, dtype=np.float64)
        self.goal = np.array(constants.DECEPTIVE_GOAL, dtype=np.float64)
        self.wall = constants.DECEPTIVE_WALL

    def reset(self, rng):
        return self.start.copy()

    def step(self, state, action, rng):
        speed = constants.DECEPTIVE_MAX_SPEED
        return deceptive_point_step(state, np.clip(action, -speed, speed), self.wall, self.goal)

    def blocked_distance(self) -> float:
        """Smallest distance to the goal reachable without passing the wall"""
        return float(self.goal[1] - self.wall[0][1])


class DeceptiveQuadLiteEnv(DeceptivePointEnv):
    """Damped velocity integrator (x, y, vx, vy) in the deceptive-wall arena"""
    kind = EnvKind.DECEPTIVE_QUAD_LITE
    state_dim = 4
    action_dim = 2

    def __init__(self, horizon: int = constants.QUAD_LITE_HORIZON):
        super().__init__(horizon)

    def reset(self, rng):
        return np.concatenate([self.start, np.zeros(2)])

    def step(self, state, action, rng):
        state = np.asarray(state, dtype=np.float64)
        accel = np.clip(action, -constants.QUAD_LITE_MAX_ACCEL, constants.QUAD_LITE_MAX_ACCEL)
        velocity = constants.QUAD_LITE_DAMPING * state[2:] + accel
        position, reward = deceptive_point_step(state[:2], velocity, self.wall, self.goal)
        if not np.array_equal(position, state[:2] + velocity):
            velocity = np.array([velocity[0], 0.0])
        return np.concatenate([position, velocity]), reward


class ChainEnv(Env):
    """
    Positions 0..N-1 moved by sign(a); reward 1 at the right end and a small
    reward at the left end, observed as [x/(N-1)]
    """
    kind = EnvKind.CHAIN
    state_dim = 1
    action_dim = 1

    def __init__(self, length: int = constants.CHAIN_LENGTH, horizon: int = constants.CHAIN_HORIZON):
        if length < 2:
            raise InvalidParameterError(f"chain needs at least 2 positions, got {length}")
        self.length = length
        self.horizon = horizon

    def position(self, state) -> int:
        return int(round(float(np.asarray(state).reshape(-1)[0]) * (self.length - 1)))

    def observe(self, position: int) -> np.ndarray:
        return np.array([position / (self.length - 1)], dtype=np.float64)

    def reset(self, rng):
        return self.observe(0)

    def step(self, state, action, rng):
        move = int(np.sign(float(np.asarray(action).reshape(-1)[0])))
        position = min(max(self.position(state) + move, 0), self.length - 1)
        if position == self.length - 1:
            reward = constants.CHAIN_END_REWARD
        elif position == 0:
            reward = constants.CHAIN_START_REWARD
        else:
            reward = 0.0
        return self.observe(position), reward

    def scripted_expert(self, seed: int = 0) -> Trajectory:
        """Always step right"""
        rng = make_rng(seed, "chain/expert")
        state = self.reset(rng)
        states, actions, rewards = [], [], []
        for _ in range(self.horizon + 1):
            action = np.ones(1)
            states.append(state)
            actions.append(action)
            state, reward = self.step(state, action, rng)
            rewards.append(reward)
        return Trajectory(np.array(states), np.array(actions), np.array(rewards), self.horizon)


# ---------------------------------------------------------------------------
# Tabular MDPs
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Layered finite-horizon MDP; rewards R[s, a, s'] are paid on the transition"""
    states_per_layer: int
    num_actions: int
    horizon: int
    transitions: np.ndarray  # (S, A, S) row-stochastic
    rewards: np.ndarray  # (S, A, S)
    initial: np.ndarray  # (S,), supported on layer 0

    def __post_init__(self):
        S, A = self.num_states, self.num_actions
        if self.transitions.shape != (S, A, S) or self.rewards.shape != (S, A, S) or self.initial.shape != (S,):
            raise InvalidParameterError("tabular MDP tensors do not match (states, actions, horizon)")
        if np.any(self.transitions < 0.0) or np.max(np.abs(self.transitions.sum(axis=2) - 1.0)) > 1e-12:
            raise InvalidParameterError("transition rows must be distributions")
        if abs(self.initial.sum() - 1.0) > 1e-12 or np.any(self.initial[self.states_per_layer:] != 0.0):
            raise InvalidParameterError("initial distribution must live on layer 0")
        for t in range(self.horizon):
            outside = np.ones(S, dtype=bool)
            outside[self.layer(t + 1)] = False
            if np.any(self.transitions[self.layer(t)][:, :, outside] != 0.0):
                raise InvalidParameterError(f"layer {t} transitions must enter layer {t + 1}")

    @property
    def num_states(self) -> int:
        return self.states_per_layer * (self.horizon + 1)

    def layer(self, t: int) -> slice:
        return slice(t * self.states_per_layer, (t + 1) * self.states_per_layer)


def random_tabular_mdp(states_per_layer: int = constants.TABULAR_STATES_PER_LAYER,
                       num_actions: int = constants.TABULAR_ACTIONS,
                       horizon: int = constants.TABULAR_HORIZON, seed: int = 0) -> TabularMDP:
    """Dirichlet(1, ..., 1) transition rows into the next layer, U[0, 1] rewards"""
    rng = make_rng(seed, "tabular_mdp")
    k, A = states_per_layer, num_actions
    S = k * (horizon + 1)
    transitions = np.zeros((S, A, S))
    for t in range(horizon):
        source, target = slice(t * k, (t + 1) * k), slice((t + 1) * k, (t + 2) * k)
        transitions[source, :, target] = rng.dirichlet(np.ones(k), size=(k, A))
    final = np.arange(horizon * k, S)
    transitions[final, :, final] = 1.0
    rewards = rng.uniform(0.0, 1.0, size=(S, A, S))
    initial = np.zeros(S)
    initial[:k] = rng.dirichlet(np.ones(k))
    return TabularMDP(k, A, horizon, transitions, rewards, initial)


class TabularEnv(Env):
    kind = EnvKind.TABULAR_RANDOM
    state_dim = 1
    action_dim = 1
    discrete = True

    def __init__(self, mdp: TabularMDP):
        self.mdp = mdp
        self.horizon = mdp.horizon
        self.num_states = mdp.num_states
        self.num_actions = mdp.num_actions

    def reset(self, rng):
        return int(rng.choice(self.num_states, p=self.mdp.initial))

    def step(self, state, action, rng):
        state, action = int(state), int(action)
        next_state = int(rng.choice(self.num_states, p=self.mdp.transitions[state, action]))
        return next_state, float(self.mdp.rewards[state, action, next_state])


def make_env(spec: EnvSpec, seed: int = 0) -> Env:
    horizon = spec.resolved_horizon
    if spec.kind == EnvKind.MULTI_GOAL:
        return MultiGoalEnv(horizon)
    if spec.kind == EnvKind.DECEPTIVE_POINT:
        return DeceptivePointEnv(horizon)
    if spec.kind == EnvKind.DECEPTIVE_QUAD_LITE:
        return DeceptiveQuadLiteEnv(horizon)
    if spec.kind == EnvKind.CHAIN:
        return ChainEnv(spec.chain_length, horizon)
    mdp = random_tabular_mdp(spec.states_per_layer, spec.num_actions, horizon, derive_seed(seed, "env"))
    return TabularEnv(mdp)


# ---------------------------------------------------------------------------
# Rollouts
# ---------------------------------------------------------------------------

def rollout(env: Env, policy, seed: int, perturbation: Optional[int] = None) -> Trajectory:
    """
    One seeded episode of H+1 steps

    ``policy`` exposes ``act(state, rng)``; the sampled action is recorded
    before any environment-side clipping.
    """
    rng = make_rng(seed, "rollout")
    state = env.reset(rng)
    states, actions, rewards = [], [], []
    for t in range(env.horizon + 1):
        action = policy.act(state, rng)
        if not np.all(np.isfinite(action)):
            raise RolloutError(f"non-finite action at step {t}", step=t, perturbation=perturbation)
        states.append(state)
        actions.append(action)
        state, reward = env.step(state, action, rng)
        rewards.append(reward)
    dtype = np.int64 if env.discrete else np.float64
    return Trajectory(
        states=np.asarray(states, dtype=dtype),
        actions=np.asarray(actions, dtype=dtype),
        rewards=np.asarray(rewards, dtype=np.float64),
        horizon=env.horizon,
    )


# ---------------------------------------------------------------------------
# Exact tabular analysis
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TabularValues:
    V: np.ndarray  # (S,)
    Q: np.ndarray  # (S, A)
    A: np.ndarray  # (S, A)
    rho: np.ndarray  # (S,) expected visits
    total: float


def policy_table(policy) -> np.ndarray:
    """(S, A) action probabilities of a tabular policy object or array"""
    table = policy.probabilities() if hasattr(policy, "probabilities") else policy
    return np.asarray(table, dtype=np.float64)


def _check_table(mdp: TabularMDP, table: np.ndarray):
    if table.shape != (mdp.num_states, mdp.num_actions):
        raise InvalidParameterError(f"policy table shape {table.shape} does not match the MDP")
    if np.any(table < 0.0) or np.max(np.abs(table.sum(axis=1) - 1.0)) > 1e-9:
        raise InvalidParameterError("policy rows must be distributions")


def tabular_value(mdp: TabularMDP, policy) -> TabularValues:
    """Backward induction for V and Q, forward propagation for ρ"""
    pi = policy_table(policy)
    _check_table(mdp, pi)
    S, A = mdp.num_states, mdp.num_actions
    V, Q = np.zeros(S), np.zeros((S, A))
    for t in reversed(range(mdp.horizon + 1)):
        layer = mdp.layer(t)
        following = V if t < mdp.horizon else np.zeros(S)
        P, R = mdp.transitions[layer], mdp.rewards[layer]
        Q[layer] = np.einsum("sat,sat->sa", P, R + following[None, None, :])
        V[layer] = (pi[layer] * Q[layer]).sum(axis=1)

    rho = np.zeros(S)
    occupancy = mdp.initial.copy()
    for _ in range(mdp.horizon + 1):
        rho += occupancy
        occupancy = np.einsum("s,sa,sat->t", occupancy, pi, mdp.transitions)
    return TabularValues(V=V, Q=Q, A=Q - V[:, None], rho=rho, total=float(mdp.initial @ V))


@dataclass(frozen=True, eq=False)
class EnumeratedTrajectories:
    """All trajectories of a tabular policy with their probabilities"""
    trajectories: List[Trajectory] = field(default_factory=list)
    probabilities: np.ndarray = field(default_factory=lambda: np.zeros(0))


def enumerate_trajectories(mdp: TabularMDP, policy, limit: Optional[int] = None) -> EnumeratedTrajectories:
    pi = policy_table(policy)
    _check_table(mdp, pi)
    limit = settings.ENUMERATION_LIMIT if limit is None else limit
    # partial paths: (states, actions, rewards, probability, current state)
    paths = [((), (), (), float(mdp.initial[s]), int(s)) for s in np.flatnonzero(mdp.initial)]
    for _ in range(mdp.horizon + 1):
        expanded = []
        for states, actions, rewards, prob, s in paths:
            for a in np.flatnonzero(pi[s]):
                for nxt in np.flatnonzero(mdp.transitions[s, a]):
                    expanded.append((
                        states + (s,),
                        actions + (int(a),),
                        rewards + (float(mdp.rewards[s, a, nxt]),),
                        prob * pi[s, a] * mdp.transitions[s, a, nxt],
                        int(nxt),
                    ))
                    if len(expanded) > limit:
                        raise EnumerationLimitError(
                            f"more than {limit} trajectories; use a smaller instance (fewer states, actions or steps)"
                        )
        paths = expanded
    trajectories = [
        Trajectory(np.array(states, dtype=np.int64), np.array(actions, dtype=np.int64), np.array(rewards), mdp.horizon)
        for states, actions, rewards, _, _ in paths
    ]
    return EnumeratedTrajectories(trajectories, np.array([path[3] for path in paths]))


def verify_policy_improvement(mdp: TabularMDP, pi, pi_tilde, wd0: float, tol: float = 1e-9) -> PolicyImprovementReport:
    """
    Check V(π̃) ≥ L(π̃) − WD₀·ε with L(π̃) = V(π) + Σ_s ρ_π(s) Σ_a π̃(a|s) A^π(s, a)
    and ε = max |A^π|, plus Σ_s |ρ_π(s) − ρ_π̃(s)| ≤ WD₀
    """
    base, other = tabular_value(mdp, pi), tabular_value(mdp, pi_tilde)
    table = policy_table(pi_tilde)
    surrogate = base.total + float(base.rho @ (table * base.A).sum(axis=1))
    epsilon = float(np.max(np.abs(base.A)))
    slack = other.total - (surrogate - wd0 * epsilon)
    visitation_l1 = float(np.abs(base.rho - other.rho).sum())
    return PolicyImprovementReport(
        value_pi=base.total,
        value_pi_tilde=other.total,
        surrogate=surrogate,
        epsilon=epsilon,
        wd0=wd0,
        slack=slack,
        holds=bool(slack >= -tol),
        visitation_l1=visitation_l1,
        visitation_bound_holds=bool(visitation_l1 <= wd0 + tol),
    )


def monte_carlo_value(env: Env, policy, episodes: int, seed: int) -> Tuple[float, float]:
    """Mean return over seeded rollouts and its standard error"""
    returns = np.array([rollout(env, policy, derive_seed(seed, "mc", k)).total_reward for k in range(episodes)])
    return float(returns.mean()), float(returns.std(ddof=1) / math.sqrt(episodes))


def rollout_many(env: Env, policies: Sequence, seeds: Sequence[int],
                 perturbations: Optional[Sequence[int]] = None) -> List[Trajectory]:
    """
    Roll out ``policies[i]`` with ``seeds[i]`` on a thread pool capped by
    BGRL_THREADS; results keep the input order
    """
    if len(policies) != len(seeds):
        raise InvalidParameterError(f"{len(policies)} policies for {len(seeds)} seeds")
    indices = list(perturbations) if perturbations is not None else [None] * len(seeds)
    threads = min(settings.BGRL_THREADS, len(seeds))
    if threads <= 1:
        return [rollout(env, policy, seed, index) for policy, seed, index in zip(policies, seeds, indices)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: rollout(env, *job), zip(policies, seeds, indices)))
