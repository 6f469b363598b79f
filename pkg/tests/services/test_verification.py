import numpy as np
import pytest

from bgrl.core.exceptions import UnknownSuiteError
from bgrl.services.policy import TabularPolicy
from bgrl.services.verification import (
    SUITES,
    exact_visitation_wd0,
    gradients_suite,
    lemma_equality_suite,
    run_suite,
    theorem1_suite,
    transport_suite,
    verify_policy_equality,
)


def test_policy_is_at_zero_distance_from_itself(small_mdp):
    pi = TabularPolicy.random(small_mdp.num_states, 2, seed=4)
    assert exact_visitation_wd0(small_mdp, pi, pi) == pytest.approx(0.0, abs=1e-12)


def test_distinct_policies_are_apart(small_mdp):
    left = TabularPolicy(np.tile([5.0, -5.0], (small_mdp.num_states, 1)))
    right = TabularPolicy(np.tile([-5.0, 5.0], (small_mdp.num_states, 1)))
    wd0, consistent = verify_policy_equality(small_mdp, left, right)
    assert wd0 > 0.1
    assert consistent


def test_equal_policies_agree(small_mdp):
    pi = TabularPolicy.random(small_mdp.num_states, 2, seed=8)
    wd0, consistent = verify_policy_equality(small_mdp, pi, TabularPolicy(pi.logits.copy()))
    assert wd0 <= 1e-9
    assert consistent


def test_transport_suite_passes():
    report = transport_suite(seed=0)
    assert report.ok, report.failures
    assert report.details["max_sinkhorn_relative_error"] <= 0.02


def test_improvement_bound_holds():
    report = theorem1_suite(seed=1, instances=10)
    assert report.ok, report.failures
    assert report.passed == 20
    assert report.details["min_slack"] >= -1e-9


def test_equality_lemma():
    report = lemma_equality_suite(seed=2, pairs=5)
    assert report.ok, report.failures
    assert report.passed == 10


def test_gradient_checks():
    report = gradients_suite(seed=3, instances=5)
    assert report.ok, report.failures


def test_suite_names():
    assert set(SUITES) == {"transport", "theorem1", "lemma-equality", "gradients"}


def test_unknown_suite():
    with pytest.raises(UnknownSuiteError):
        run_suite("everything")
