"""Clipping, noising, Poisson sampling, and budget halting."""

import math

import numpy as np
import pytest

from tabsynth.accountant import accumulate_step, fresh_ledger, to_epsilon_delta
from tabsynth.errors import PrivacyError
from tabsynth.privacy import (
    PrivacyParams,
    budget_exhausted,
    clip_per_sample,
    gaussian_sigma,
    poisson_sample,
    privatize_batch_gradient,
)


def make_params(**kw):
    base = dict(epsilon_target=1.0, delta=1e-5, sigma=1.0, clip_norm=1.0, sample_rate=0.01)
    base.update(kw)
    return PrivacyParams(**base)


def test_clip_hand_values():
    grads = np.array([[3.0, 4.0], [0.3, 0.4]])
    out = clip_per_sample(grads, clip_norm=1.0)
    np.testing.assert_allclose(out[0], [0.6, 0.8], rtol=1e-12)
    np.testing.assert_array_equal(out[1], [0.3, 0.4])  # under the norm: untouched
    out2 = clip_per_sample(grads, clip_norm=2.0)
    np.testing.assert_allclose(out2[0], [1.2, 1.6], rtol=1e-12)


def test_clip_norm_bound_and_direction():
    rng = np.random.default_rng(7)
    grads = rng.normal(0.0, 5.0, size=(200, 17))
    out = clip_per_sample(grads, clip_norm=1.0)
    norms = np.linalg.norm(out, axis=1)
    assert np.all(norms <= 1.0 + 1e-12)
    # Clipping rescales: direction is preserved.
    cos = np.sum(out * grads, axis=1) / (norms * np.linalg.norm(grads, axis=1))
    np.testing.assert_allclose(cos, 1.0, atol=1e-12)
    # Original array untouched.
    assert np.linalg.norm(grads, axis=1).max() > 1.0


def test_clip_rejects_bad_norm():
    with pytest.raises(PrivacyError):
        clip_per_sample(np.ones((2, 2)), 0.0)
    with pytest.raises(PrivacyError):
        clip_per_sample(np.ones((2, 2)), -1.0)


def test_privatize_near_zero_noise_is_clipped_mean():
    grads = np.array([[3.0, 4.0], [0.3, 0.4]])
    params = make_params(sigma=1e-12)
    out = privatize_batch_gradient(grads, params, np.random.default_rng(0))
    np.testing.assert_allclose(out, [0.45, 0.6], atol=1e-9)


def test_privatize_noise_variance():
    # One zero gradient of high dimension isolates the injected noise;
    # at B=1, C=1, sigma=2 the coordinates are N(0, 4).
    params = make_params(sigma=2.0)
    out = privatize_batch_gradient(
        np.zeros((1, 100_000)), params, np.random.default_rng(42)
    )
    assert abs(out.mean()) < 0.05
    assert out.var() == pytest.approx(4.0, abs=0.1)


def test_privatize_noise_scales_with_clip_norm():
    params = make_params(sigma=1.0, clip_norm=3.0)
    out = privatize_batch_gradient(
        np.zeros((1, 100_000)), params, np.random.default_rng(3)
    )
    assert out.var() == pytest.approx(9.0, rel=0.03)


def test_privatize_divides_by_batch_size():
    # 4 identical max-norm rows, negligible noise: mean equals one clipped row.
    grads = np.tile([[30.0, 40.0]], (4, 1))
    params = make_params(sigma=1e-12)
    out = privatize_batch_gradient(grads, params, np.random.default_rng(1))
    np.testing.assert_allclose(out, [0.6, 0.8], atol=1e-9)


def test_privatize_rejects_empty_batch():
    with pytest.raises(PrivacyError):
        privatize_batch_gradient(np.zeros((0, 3)), make_params(), np.random.default_rng(0))


def test_privatize_is_reproducible():
    grads = np.random.default_rng(5).normal(size=(10, 4))
    params = make_params()
    a = privatize_batch_gradient(grads, params, np.random.default_rng(11))
    b = privatize_batch_gradient(grads, params, np.random.default_rng(11))
    np.testing.assert_array_equal(a, b)


def test_poisson_full_rate_keeps_everything():
    idx = poisson_sample(1000, 1.0, np.random.default_rng(0))
    np.testing.assert_array_equal(idx, np.arange(1000))


def test_poisson_sample_size_concentrates():
    n, q = 100_000, 0.5
    idx = poisson_sample(n, q, np.random.default_rng(123))
    sd = math.sqrt(n * q * (1 - q))
    assert abs(len(idx) - n * q) < 3.0 * sd
    assert np.array_equal(idx, np.unique(idx))  # sorted, no duplicates


def test_poisson_tiny_rate_can_be_empty():
    idx = poisson_sample(1000, 1e-9, np.random.default_rng(0))
    assert idx.size == 0


def test_poisson_rejects_bad_arguments():
    rng = np.random.default_rng(0)
    with pytest.raises(PrivacyError):
        poisson_sample(100, 0.0, rng)
    with pytest.raises(PrivacyError):
        poisson_sample(100, 1.5, rng)
    with pytest.raises(PrivacyError):
        poisson_sample(0, 0.5, rng)


def test_gaussian_sigma_reference_point():
    sigma = gaussian_sigma(1.0, 1e-5)
    assert sigma == pytest.approx(math.sqrt(2.0 * math.log(1.25e5)), rel=1e-12)
    assert sigma == pytest.approx(4.8448, abs=1e-3)
    assert gaussian_sigma(2.0, 1e-5) == pytest.approx(sigma / 2.0, rel=1e-12)
    with pytest.raises(PrivacyError):
        gaussian_sigma(0.0, 1e-5)
    with pytest.raises(PrivacyError):
        gaussian_sigma(1.0, 1.0)


def test_budget_check_is_a_pre_check():
    # Walk the ledger until the check trips, then confirm the invariant:
    # spent epsilon is within target, one more step would exceed it.
    params = make_params(epsilon_target=1.0, sigma=1.5, sample_rate=0.032)
    ledger = fresh_ledger()
    steps = 0
    while not budget_exhausted(ledger, params):
        ledger = accumulate_step(ledger, params.sample_rate, params.sigma)
        steps += 1
        assert steps < 20_000, "budget never tripped"
    assert steps > 0
    assert to_epsilon_delta(ledger, params.delta) <= params.epsilon_target
    one_more = accumulate_step(ledger, params.sample_rate, params.sigma)
    assert to_epsilon_delta(one_more, params.delta) > params.epsilon_target


def test_budget_check_trips_immediately_when_one_step_is_too_much():
    params = make_params(epsilon_target=0.1, sigma=1.0, sample_rate=1.0)
    assert budget_exhausted(fresh_ledger(), params)


@pytest.mark.parametrize(
    "field,value",
    [
        ("epsilon_target", 0.0),
        ("epsilon_target", -1.0),
        ("delta", 0.0),
        ("delta", 1.0),
        ("sigma", 0.0),
        ("clip_norm", 0.0),
        ("sample_rate", 0.0),
        ("sample_rate", 1.1),
    ],
)
def test_params_validation(field, value):
    with pytest.raises(PrivacyError):
        make_params(**{field: value})
