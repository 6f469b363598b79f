import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from bgrl.core.exceptions import DimensionMismatchError, InvalidParameterError
from bgrl.services.rff import rbf_kernel, rff_eval, rff_new

finite = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(z=arrays(np.float64, 3, elements=finite))
def test_feature_norm_bounded(z):
    feature_map = rff_new(3, 64, 0.7, seed=1)
    assert np.linalg.norm(rff_eval(feature_map, z)) <= math.sqrt(2.0) + 1e-12


def test_entries_follow_cosine_formula():
    feature_map = rff_new(2, 16, 0.5, seed=4)
    z = np.array([0.3, -1.2])
    expected = math.sqrt(2.0 / 16) * np.cos(feature_map.projection @ z + feature_map.phases)
    np.testing.assert_allclose(feature_map(z), expected, rtol=0, atol=1e-15)
    np.testing.assert_allclose(feature_map.batch(z[None, :])[0], expected, rtol=0, atol=1e-15)


def test_same_seed_same_map():
    a, b = rff_new(4, 32, 1.0, seed=9), rff_new(4, 32, 1.0, seed=9)
    np.testing.assert_array_equal(a.projection, b.projection)
    np.testing.assert_array_equal(a.phases, b.phases)
    assert not np.array_equal(a.projection, rff_new(4, 32, 1.0, seed=10).projection)


def test_inner_product_approximates_rbf_kernel():
    feature_map = rff_new(2, 20_000, 1.0, seed=0)
    x, y = np.array([0.0, 0.0]), np.array([0.6, -0.4])
    approx = float(feature_map(x) @ feature_map(y))
    assert abs(approx - rbf_kernel(x, y, 1.0)) < 0.05


def test_gradient_matches_central_differences():
    feature_map = rff_new(3, 50, 0.8, seed=2)
    coefficients = np.random.default_rng(0).normal(size=50)
    z = np.array([0.1, -0.5, 0.9])
    h = 1e-6
    numeric = np.array([
        (coefficients @ feature_map(z + h * e) - coefficients @ feature_map(z - h * e)) / (2 * h)
        for e in np.eye(3)
    ])
    np.testing.assert_allclose(feature_map.gradient(z, coefficients), numeric, rtol=1e-6, atol=1e-8)


def test_arrays_are_read_only():
    feature_map = rff_new(2, 8, 1.0, seed=0)
    with pytest.raises(ValueError):
        feature_map.projection[0, 0] = 1.0


@pytest.mark.parametrize("d, m, sigma", [(0, 10, 1.0), (2, 0, 1.0), (2, 10, 0.0), (2, 10, float("inf"))])
def test_invalid_construction(d, m, sigma):
    with pytest.raises(InvalidParameterError):
        rff_new(d, m, sigma, seed=0)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        rff_eval(rff_new(2, 8, 1.0, seed=0), np.zeros(3))


def test_projection_scale_follows_bandwidth():
    feature_map = rff_new(4, 4096, 0.5, seed=1)
    assert np.std(feature_map.projection) == pytest.approx(2.0, abs=0.05)
    assert np.all((feature_map.phases >= 0.0) & (feature_map.phases < 2.0 * math.pi))


@settings(max_examples=10, deadline=None)
@given(d=st.integers(min_value=1, max_value=4), seed=st.integers(min_value=0, max_value=2**16))
def test_kernel_error_is_small_on_average(d, seed):
    m, sigma = 8192, 1.0
    feature_map = rff_new(d, m, sigma, seed=seed)
    pairs = np.random.default_rng(seed).uniform(-1.0, 1.0, size=(100, 2, d))
    errors = [abs(float(feature_map(x) @ feature_map(y)) - rbf_kernel(x, y, sigma)) for x, y in pairs]
    assert np.mean(errors) <= 5.0 / math.sqrt(m)
