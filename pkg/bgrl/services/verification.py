"""
Property suites behind ``bgrl verify``

Each suite builds its own seeded instances and returns a VerificationReport
with one check per property instance.
"""

import itertools
import logging
from typing import Callable, Dict, Tuple

import numpy as np

from ..core.exceptions import UnknownSuiteError
from ..core.seeding import derive_seed, make_rng
from ..models.enums import BEMKind, CostKind, Side, VerifySuite
from ..models.records import VerificationReport
from . import transport
from .behavior_guided import pathwise_lambda_grad
from .embed import exact_embedding_distribution, probe_points, tabular_bem
from .envsim import TabularMDP, policy_table, random_tabular_mdp, tabular_value, verify_policy_improvement
from .policy import GaussianPolicy, PolicyArch, PolicyParams, TabularPolicy, log_prob_grad, reparam_action_grad
from .rff import rff_new

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
GRADIENT_TOLERANCE = 1e-4
ORACLE_TOLERANCE = 0.02
EXACT_TOLERANCE = 1e-9
MAX_STATE_PATHS = 81  # keeps exact OT over enumerated embeddings small


# ---------------------------------------------------------------------------
# Exact tabular helpers
# ---------------------------------------------------------------------------

def exact_visitation_wd0(mdp: TabularMDP, pi, pi_tilde, kind: BEMKind = BEMKind.STATE_VISIT_COUNT,
                         cost: CostKind = CostKind.L1) -> float:
    """Unsmoothed WD between the exact embedding distributions of two tabular policies"""
    bem = tabular_bem(kind, mdp)
    return transport.exact_ot_discrete(
        exact_embedding_distribution(mdp, pi, bem),
        exact_embedding_distribution(mdp, pi_tilde, bem),
        cost,
    )


def verify_policy_equality(mdp: TabularMDP, pi, pi_prime, tol: float = EXACT_TOLERANCE) -> Tuple[float, bool]:
    """
    Exact WD₀ under the state-action count embedding and whether it agrees
    with π and π′ coinciding on every reachable state
    """
    wd0 = exact_visitation_wd0(mdp, pi, pi_prime, BEMKind.STATE_ACTION_COUNT)
    reachable = tabular_value(mdp, pi).rho > 0.0
    same = bool(np.max(np.abs(policy_table(pi)[reachable] - policy_table(pi_prime)[reachable]), initial=0.0) <= tol)
    return wd0, (wd0 <= tol) == same


def _small_mdp(seed: int, index: int, num_actions: int, max_points: int, per_step: int = 1) -> TabularMDP:
    """Random layered MDP with at most ``max_points`` distinct embeddings of ``per_step``·k choices per step"""
    rng = make_rng(seed, "verify/shape", index)
    shapes = [(k, h) for k in range(1, 5) for h in range(1, 4) if (k * per_step) ** (h + 1) <= max_points]
    k, h = shapes[int(rng.integers(len(shapes)))]
    return random_tabular_mdp(k, num_actions, h, derive_seed(seed, "verify/mdp", index))


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def transport_suite(seed: int = 0) -> VerificationReport:
    report = VerificationReport(suite=VerifySuite.TRANSPORT.value)

    single = transport.exact_ot_discrete([[0.0, 0.0]], [[3.0, 4.0]], CostKind.L2)
    report.check(abs(single - 5.0) <= EXACT_TOLERANCE, f"single pair distance {single!r} != 5")

    worst = 0.0
    for i in range(20):
        rng = make_rng(seed, "verify/transport", i)
        a, b = rng.normal(size=(32, 2)), rng.normal(0.5, 1.0, size=(32, 2))
        exact = transport.exact_ot_discrete(a, b, CostKind.L2)
        smoothed = transport.sinkhorn_oracle(a, b, CostKind.L2, gamma=0.001)
        relative = abs(smoothed.value - exact) / exact
        worst = max(worst, relative)
        report.check(relative <= ORACLE_TOLERANCE, f"pair {i}: sinkhorn {smoothed.value:.6g} vs exact {exact:.6g}")
        report.check(exact <= smoothed.value + 1e-6, f"pair {i}: exact value above the smoothed value")
        assignment = transport.exact_emd_assignment(a, b, CostKind.L2)
        report.check(abs(assignment - exact) <= 1e-9 * max(1.0, exact), f"pair {i}: assignment {assignment!r} vs flow {exact!r}")

    for n in range(1, 7):
        rng = make_rng(seed, "verify/assignment", n)
        a, b = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
        matrix = transport.cost_matrix(CostKind.L2, a, b)
        rows = np.arange(n)
        brute = min(float(matrix[rows, list(perm)].sum() / n) for perm in itertools.permutations(range(n)))
        assignment = transport.exact_emd_assignment(a, b, CostKind.L2)
        report.check(assignment == brute, f"n={n}: assignment {assignment!r} vs brute force {brute!r}")

    report.details["max_sinkhorn_relative_error"] = worst
    return report


def theorem1_suite(seed: int = 0, instances: int = 100) -> VerificationReport:
    """Policy improvement lower bound and the visitation bound on random tabular MDPs"""
    report = VerificationReport(suite=VerifySuite.THEOREM1.value)
    worst_slack = np.inf
    for i in range(instances):
        num_actions = 1 + int(make_rng(seed, "verify/actions", i).integers(2))
        mdp = _small_mdp(seed, i, num_actions, MAX_STATE_PATHS)
        pi = TabularPolicy.random(mdp.num_states, num_actions, derive_seed(seed, "verify/pi", i))
        pi_tilde = TabularPolicy.random(mdp.num_states, num_actions, derive_seed(seed, "verify/pi_tilde", i))
        wd0 = exact_visitation_wd0(mdp, pi, pi_tilde)
        result = verify_policy_improvement(mdp, pi, pi_tilde, wd0)
        worst_slack = min(worst_slack, result.slack)
        report.check(result.holds, f"instance {i}: slack {result.slack:.3e}")
        report.check(result.visitation_bound_holds,
                     f"instance {i}: visitation L1 {result.visitation_l1:.6g} > WD0 {wd0:.6g}")
    report.details["min_slack"] = float(worst_slack)
    return report


def lemma_equality_suite(seed: int = 0, pairs: int = 50) -> VerificationReport:
    report = VerificationReport(suite=VerifySuite.LEMMA_EQUALITY.value)
    for i in range(pairs):
        mdp = _small_mdp(seed, i, 2, 64, per_step=2)
        pi = TabularPolicy.random(mdp.num_states, 2, derive_seed(seed, "verify/lemma", i))
        wd0, consistent = verify_policy_equality(mdp, pi, TabularPolicy(pi.logits.copy()))
        report.check(wd0 <= EXACT_TOLERANCE and consistent, f"equal pair {i}: WD0 {wd0:.3e}")

    for i in range(pairs):
        mdp = _small_mdp(seed, pairs + i, 2, 64, per_step=2)
        pi = TabularPolicy.random(mdp.num_states, 2, derive_seed(seed, "verify/lemma", pairs + i))
        table = pi.probabilities()
        start = int(np.argmax(mdp.initial))
        perturbed = table.copy()
        target = np.zeros(2)
        target[int(np.argmin(table[start]))] = 1.0
        perturbed[start] = 0.5 * table[start] + 0.5 * target
        wd0, consistent = verify_policy_equality(mdp, table, perturbed)
        report.check(wd0 > EXACT_TOLERANCE and consistent, f"perturbed pair {i}: WD0 {wd0:.3e}")
    return report


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(numeric))), float(np.max(np.abs(analytic))), 1e-8)
    return float(np.max(np.abs(analytic - numeric))) / scale


def _central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    grad = np.zeros_like(x)
    for j in range(x.size):
        step = np.zeros_like(x)
        step[j] = h
        grad[j] = (fn(x + step) - fn(x - step)) / (2.0 * h)
    return grad


def gradients_suite(seed: int = 0, instances: int = 50) -> VerificationReport:
    """Score function, pathwise λ gradient and dual ascent direction against central differences"""
    report = VerificationReport(suite=VerifySuite.GRADIENTS.value)
    arch = PolicyArch(2, (4,), 2)
    worst: Dict[str, float] = {"log_prob": 0.0, "reparam": 0.0, "pathwise": 0.0, "dual_step": 0.0}

    for i in range(instances):
        rng = make_rng(seed, "verify/gradients", i)
        theta = rng.normal(0.0, 0.5, size=arch.param_count)
        params = PolicyParams(theta, arch)
        s = rng.normal(size=2)
        a = rng.normal(size=2)

        _, analytic = log_prob_grad(params, s, a)
        numeric = _central_difference(lambda th: log_prob_grad(PolicyParams(th, arch), s, a)[0], theta)
        error = _relative_error(analytic, numeric)
        worst["log_prob"] = max(worst["log_prob"], error)
        report.check(error <= GRADIENT_TOLERANCE, f"instance {i}: log-prob gradient error {error:.3e}")

        eps, cotangent = rng.normal(size=2), rng.normal(size=2)
        _, analytic = reparam_action_grad(params, s, eps, cotangent)
        numeric = _central_difference(
            lambda th: float(cotangent @ reparam_action_grad(PolicyParams(th, arch), s, eps, cotangent)[0]), theta)
        error = _relative_error(analytic, numeric)
        worst["reparam"] = max(worst["reparam"], error)
        report.check(error <= GRADIENT_TOLERANCE, f"instance {i}: reparameterized action gradient error {error:.3e}")

        feature_map = rff_new(4, 20, 1.0, derive_seed(seed, "verify/rff", i))
        pot = transport.potentials_new(feature_map, gamma=0.5, alpha=0.1)
        pot = transport.DualPotentials(
            p_mu=rng.normal(size=20), p_nu=rng.normal(size=20), map_mu=feature_map, map_nu=feature_map,
            gamma=pot.gamma, alpha=pot.alpha, t=int(rng.integers(0, 10)),
        )
        states = rng.normal(size=(3, 2))
        policy = GaussianPolicy(params)
        analytic = pathwise_lambda_grad(pot, policy, states)
        numeric = _central_difference(
            lambda th: float(pot.lambda_mu(probe_points(policy.with_theta(th), states)).mean()), theta)
        error = _relative_error(analytic, numeric)
        worst["pathwise"] = max(worst["pathwise"], error)
        report.check(error <= GRADIENT_TOLERANCE, f"instance {i}: pathwise lambda gradient error {error:.3e}")

        x, y = rng.normal(size=4), rng.normal(size=4)
        c = transport.cost_pairs(CostKind.L2, x[None, :], y[None, :])[0]
        stepped = transport.wd_sgd_step(pot, x, y, CostKind.L2)
        rate = pot.alpha / np.sqrt(pot.t + 1)
        analytic = np.concatenate([stepped.p_mu - pot.p_mu, stepped.p_nu - pot.p_nu]) / rate

        def objective(p: np.ndarray) -> float:
            candidate = transport.DualPotentials(p[:20], p[20:], feature_map, feature_map, pot.gamma, pot.alpha)
            lam_mu = transport.test_fn_eval(candidate, Side.MU, x)
            lam_nu = transport.test_fn_eval(candidate, Side.NU, y)
            F, _ = transport.damping_factor(lam_mu, lam_nu, c, pot.gamma)
            return float(lam_mu - lam_nu - pot.gamma * F)

        numeric = _central_difference(objective, np.concatenate([pot.p_mu, pot.p_nu]))
        error = _relative_error(analytic, numeric)
        worst["dual_step"] = max(worst["dual_step"], error)
        report.check(error <= GRADIENT_TOLERANCE, f"instance {i}: dual ascent direction error {error:.3e}")

    report.details["max_relative_error"] = worst
    return report


SUITES: Dict[str, Callable[..., VerificationReport]] = {
    VerifySuite.TRANSPORT.value: transport_suite,
    VerifySuite.THEOREM1.value: theorem1_suite,
    VerifySuite.LEMMA_EQUALITY.value: lemma_equality_suite,
    VerifySuite.GRADIENTS.value: gradients_suite,
}


def run_suite(name: str, seed: int = 0) -> VerificationReport:
    if name not in SUITES:
        raise UnknownSuiteError(f"unknown suite {name!r}; choose one of {', '.join(SUITES)}")
    logger.info(f"Running verification suite {name} (seed {seed})")
    report = SUITES[name](seed=seed)
    logger.info(f"Suite {name}: {report.passed} passed, {report.failed} failed")
    return report
