import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from dpkan.accountant import (
    DEFAULT_ORDERS,
    SIGMA_BOUNDS,
    InfeasibleTargetError,
    MechanismParams,
    calibrate_sigma,
    compute_epsilon,
    rdp_subsampled_gaussian,
    rdp_to_dp,
)


def quadrature_rdp(q, sigma, alpha):
    """Per-step RDP by direct integration of
    E_{z~N(0, s^2)}[((1-q) + q exp((2z-1)/(2 s^2)))^alpha], in log space."""

    def log_integrand(z):
        log_mix = np.logaddexp(math.log1p(-q), math.log(q) + (2 * z - 1) / (2 * sigma**2))
        return -z * z / (2 * sigma**2) - math.log(sigma * math.sqrt(2 * math.pi)) + alpha * log_mix

    lo, hi = -12 * sigma - 2, alpha + 12 * sigma + 2
    zs = np.linspace(lo, hi, 2001)
    peak = float(np.max([log_integrand(z) for z in zs]))
    val, _ = integrate.quad(lambda z: math.exp(log_integrand(z) - peak), lo, hi,
                            points=[0.5, alpha * 0.5, alpha], limit=500, epsabs=0, epsrel=1e-12)
    return (peak + math.log(val)) / (alpha - 1)


def test_unsubsampled_closed_form():
    assert rdp_subsampled_gaussian(MechanismParams(1.0, 1.0, 1), [2.0])[0] == 1.0
    orders = np.array(DEFAULT_ORDERS)
    rdp = rdp_subsampled_gaussian(MechanismParams(0.7, 1.0, 3), orders)
    assert np.allclose(rdp, 3 * orders / (2 * 0.49), rtol=1e-12, atol=0)


def test_zero_steps():
    assert np.all(rdp_subsampled_gaussian(MechanismParams(1.0, 0.01, 0)) == 0)


@pytest.mark.parametrize("q,sigma,alpha", [
    (0.01, 1.0, 2.0), (0.01, 1.0, 8.0), (0.05, 0.8, 3.0), (0.2, 2.0, 16.0),
    (0.01, 1.0, 1.25), (0.01, 1.0, 2.5), (0.05, 1.5, 4.5), (0.1, 0.7, 1.75), (0.001067, 1.0, 12.5),
])
def test_matches_quadrature(q, sigma, alpha):
    got = rdp_subsampled_gaussian(MechanismParams(sigma, q, 1), [alpha])[0]
    assert got == pytest.approx(quadrature_rdp(q, sigma, alpha), rel=1e-6)


def test_rejects_order_at_most_one():
    with pytest.raises(ValueError):
        rdp_subsampled_gaussian(MechanismParams(1.0, 0.1, 1), [1.0])


def test_composition_is_additive():
    one = rdp_subsampled_gaussian(MechanismParams(1.1, 0.02, 1))
    many = rdp_subsampled_gaussian(MechanismParams(1.1, 0.02, 937))
    assert np.array_equal(many, 937 * one)


def test_conversion_examples():
    orders = np.array(DEFAULT_ORDERS)
    zero = rdp_to_dp(np.zeros_like(orders), orders, 1e-5)
    assert zero.epsilon == pytest.approx(math.log(1e5) / 511, rel=1e-12)
    assert zero.epsilon == pytest.approx(0.02253, abs=1e-5)
    single = rdp_to_dp([1.0], [2.0], 1e-5)
    assert single.epsilon == pytest.approx(1 + math.log(1e5), rel=1e-12)
    assert single.epsilon == pytest.approx(12.513, abs=1e-3)


def test_improved_conversion_is_tighter():
    orders = np.array(DEFAULT_ORDERS)
    rdp = rdp_subsampled_gaussian(MechanismParams(1.0, 64 / 60000, 15 * 938), orders)
    assert rdp_to_dp(rdp, orders, 1e-5, "improved").epsilon < rdp_to_dp(rdp, orders, 1e-5, "standard").epsilon


def test_conversion_errors():
    with pytest.raises(ValueError):
        rdp_to_dp([], [], 1e-5)
    with pytest.raises(ValueError):
        rdp_to_dp([1.0], [2.0], 0.0)
    with pytest.raises(ValueError):
        rdp_to_dp([1.0], [2.0], 1e-5, method="moments")


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 50), min_size=5, max_size=5), st.floats(1.0, 10.0),
       st.sampled_from(["standard", "improved"]))
def test_conversion_monotone_in_rdp(rdp, scale, method):
    orders = [1.5, 2.0, 4.0, 16.0, 64.0]
    rdp = np.array(rdp)
    assert rdp_to_dp(rdp * scale, orders, 1e-5, method).epsilon >= rdp_to_dp(rdp, orders, 1e-5, method).epsilon


def test_mnist_anchor():
    eps = compute_epsilon(1.0, 64, 60000, 15, 1e-5).epsilon
    assert 0.78 <= eps <= 0.96


def test_epsilon_monotonicity():
    base = compute_epsilon(1.0, 64, 60000, 15, 1e-5).epsilon
    assert compute_epsilon(2.0, 64, 60000, 15, 1e-5).epsilon < base
    assert compute_epsilon(1.0, 64, 60000, 20, 1e-5).epsilon > base
    assert compute_epsilon(1.0, 128, 60000, 15, 1e-5).epsilon > base


def test_zero_epochs_gives_conversion_floor():
    orders = np.array(DEFAULT_ORDERS)
    assert compute_epsilon(1.0, 64, 60000, 0, 1e-5).epsilon == rdp_to_dp(
        np.zeros_like(orders), orders, 1e-5, "improved").epsilon


@pytest.mark.parametrize("target", [0.1, 0.5, 1.0, 3.0, 8.0])
def test_calibration_round_trip(target):
    sigma = calibrate_sigma(target, 1e-5, 64, 60000, 15)
    assert compute_epsilon(sigma, 64, 60000, 15, 1e-5).epsilon == pytest.approx(target, rel=1e-3)


def test_calibration_inverse_anchor():
    assert 0.90 <= calibrate_sigma(0.87, 1e-5, 64, 60000, 15) <= 1.10


def test_calibration_large_target_and_monotone():
    sigmas = [calibrate_sigma(e, 1e-5, 64, 60000, 15) for e in (1.0, 10.0, 100.0)]
    assert sigmas[0] > sigmas[1] > sigmas[2]
    assert sigmas[2] < 0.5


def test_calibration_infeasible():
    with pytest.raises(InfeasibleTargetError):
        calibrate_sigma(1e-9, 1e-5, 64, 60000, 15)
    with pytest.raises(InfeasibleTargetError):
        calibrate_sigma(1e9, 1e-5, 64, 60000, 15)


def test_mechanism_validation():
    with pytest.raises(ValueError):
        MechanismParams(0.0, 0.1, 1)
    with pytest.raises(ValueError):
        MechanismParams(1.0, 1.5, 1)
    assert SIGMA_BOUNDS[0] < SIGMA_BOUNDS[1]


def test_integer_orders_agree_with_binomial_expansion():
    q, sigma, alpha = 0.03, 0.9, 6
    terms = [math.comb(alpha, k) * (1 - q) ** (alpha - k) * q**k * math.exp((k * k - k) / (2 * sigma**2))
             for k in range(alpha + 1)]
    ref = math.log(sum(terms)) / (alpha - 1)
    assert rdp_subsampled_gaussian(MechanismParams(sigma, q, 1), [6.0])[0] == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("q", [0.001, 0.01, 0.1, 0.25, 0.5, 0.9])
@pytest.mark.parametrize("sigma", [0.5, 1.0, 3.0])
def test_fractional_orders_across_sampling_rates(q, sigma):
    for alpha in (1.25, 1.5, 2.5, 4.5):
        got = rdp_subsampled_gaussian(MechanismParams(sigma, q, 1), [alpha])[0]
        assert got == pytest.approx(quadrature_rdp(q, sigma, alpha), rel=1e-6)
