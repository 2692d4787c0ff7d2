"""Renyi-DP accounting for the Poisson-subsampled Gaussian mechanism.

The per-step RDP at order ``alpha`` is ``log(A_alpha) / (alpha - 1)`` with

    A_alpha = E_{z ~ N(0, s^2)} [ ((1 - q) + q * exp((2z - 1) / (2 s^2))) ** alpha ]

evaluated as a binomial sum for integer orders and as the two-sided erfc
series of Mironov, Talwar and Zhang (2019) for fractional orders, all in log
space. RDP composes additively over steps and is converted to (eps, delta)
by minimizing a conversion bound over the order grid.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, gammasgn, log_ndtr, logsumexp

DEFAULT_ORDERS = tuple(
    [1.25, 1.5, 1.75, 2.0, 2.25, 2.5, 2.75, 3.0, 3.5, 4.0, 4.5]
    + [float(a) for a in range(5, 65)]
    + [80.0, 96.0, 112.0, 128.0, 160.0, 192.0, 224.0, 256.0, 320.0, 384.0, 448.0, 512.0]
)

SIGMA_BOUNDS = (1e-2, 1e3)

# stop the fractional series once the last term is below exp(-30) of the sum
TAIL_LOG_TOL = 30.0


class InfeasibleTargetError(ValueError):
    """No noise multiplier in the search range reaches the requested epsilon."""


@dataclass(frozen=True)
class MechanismParams:
    noise_multiplier: float
    sampling_rate: float
    steps: int

    def __post_init__(self):
        if not self.noise_multiplier > 0:
            raise ValueError(f"noise multiplier must be positive, got {self.noise_multiplier}")
        if not 0 < self.sampling_rate <= 1:
            raise ValueError(f"sampling rate must lie in (0, 1], got {self.sampling_rate}")
        if self.steps < 0:
            raise ValueError(f"steps must be nonnegative, got {self.steps}")


@dataclass(frozen=True)
class PrivacySpend:
    epsilon: float
    delta: float
    order: float | None = None


def _log_comb(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def _log_a_int(q: float, sigma: float, alpha: int) -> float:
    k = np.arange(alpha + 1, dtype=np.float64)
    terms = _log_comb(alpha, k) + k * math.log(q) + (alpha - k) * math.log1p(-q) + (k * k - k) / (2 * sigma**2)
    return float(logsumexp(terms))


def _log_erfc(x):
    return math.log(2.0) + log_ndtr(-x * math.sqrt(2.0))


def _log_a_frac(q: float, sigma: float, alpha: float, block: int = 64, max_terms: int = 1 << 22) -> float:
    # Split the expectation at z0, where the two mixture components cross,
    # and expand each side in a generalized binomial series. Coefficients
    # binom(alpha, i) alternate in sign for i > alpha, so once the terms
    # shrink the omitted tail is bounded by the last term. At z0 the geometric
    # ratio between terms is exactly 1 and decay is only polynomial, so blocks
    # grow geometrically.
    z0 = sigma**2 * math.log(1.0 / q - 1.0) + 0.5
    log_q, log_1mq = math.log(q), math.log1p(-q)
    log_terms, signs = [], []
    start = 0
    while start < max_terms:
        i = np.arange(start, start + block, dtype=np.float64)
        j = alpha - i
        log_coef = _log_comb(alpha, i)
        sign = gammasgn(j + 1)
        log_s0 = (
            log_coef + i * log_q + j * log_1mq + (i * i - i) / (2 * sigma**2)
            + math.log(0.5) + _log_erfc((i - z0) / (math.sqrt(2) * sigma))
        )
        log_s1 = (
            log_coef + j * log_q + i * log_1mq + (j * j - j) / (2 * sigma**2)
            + math.log(0.5) + _log_erfc((z0 - j) / (math.sqrt(2) * sigma))
        )
        log_terms += [log_s0, log_s1]
        signs += [sign, sign]
        total, total_sign = logsumexp(np.concatenate(log_terms), b=np.concatenate(signs), return_sign=True)
        tail = max(log_s0[-1], log_s1[-1])
        decreasing = log_s0[-1] < log_s0[-2] and log_s1[-1] < log_s1[-2]
        if i[-1] > alpha and decreasing and total_sign > 0 and tail < total - TAIL_LOG_TOL:
            return float(total)
        start += block
        block *= 2
    raise ArithmeticError(f"fractional-order series did not converge (q={q}, sigma={sigma}, alpha={alpha})")


@functools.lru_cache(maxsize=4096)
def _step_rdp(q: float, sigma: float, alpha: float) -> float:
    if q == 1.0:
        return alpha / (2 * sigma**2)
    if float(alpha).is_integer():
        log_a = _log_a_int(q, sigma, int(alpha))
    else:
        log_a = _log_a_frac(q, sigma, alpha)
    return log_a / (alpha - 1)


def rdp_subsampled_gaussian(params: MechanismParams, orders=DEFAULT_ORDERS) -> np.ndarray:
    """RDP of ``params.steps`` compositions at each order in ``orders``."""
    orders = np.atleast_1d(np.asarray(orders, dtype=np.float64))
    if np.any(orders <= 1):
        raise ValueError("Renyi orders must be > 1")
    q, sigma = float(params.sampling_rate), float(params.noise_multiplier)
    per_step = np.array([_step_rdp(q, sigma, float(a)) for a in orders])
    return params.steps * per_step


def rdp_to_dp(rdp, orders, delta: float, method: str = "standard") -> PrivacySpend:
    """Convert RDP curves to (eps, delta), optimizing over orders.

    ``method="standard"`` uses ``rdp + log(1/delta) / (alpha - 1)``;
    ``method="improved"`` uses the tighter
    ``rdp + log1p(-1/alpha) - (log(delta) + log(alpha)) / (alpha - 1)``
    of Balle et al. (2020). Both are valid upper bounds.
    """
    rdp = np.atleast_1d(np.asarray(rdp, dtype=np.float64))
    orders = np.atleast_1d(np.asarray(orders, dtype=np.float64))
    if rdp.size == 0 or orders.size == 0:
        raise ValueError("rdp and orders must be nonempty")
    if rdp.shape != orders.shape:
        raise ValueError(f"{rdp.size} RDP values for {orders.size} orders")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if np.any(orders <= 1):
        raise ValueError("Renyi orders must be > 1")
    if method == "standard":
        eps = rdp + math.log(1.0 / delta) / (orders - 1)
    elif method == "improved":
        eps = rdp + np.log1p(-1.0 / orders) - (math.log(delta) + np.log(orders)) / (orders - 1)
    else:
        raise ValueError(f"unknown conversion method {method!r}")
    best = int(np.argmin(eps))
    return PrivacySpend(max(0.0, float(eps[best])), delta, float(orders[best]))


def steps_for(batch_size: int, dataset_size: int, epochs: int) -> int:
    return int(epochs) * math.ceil(dataset_size / batch_size)


def compute_epsilon(sigma, batch_size, dataset_size, epochs, delta, orders=DEFAULT_ORDERS,
                    method="improved") -> PrivacySpend:
    """(eps, delta) after ``epochs`` passes of Poisson-subsampled DP-SGD,
    i.e. ``epochs * ceil(N / B)`` steps at sampling rate ``B / N``."""
    if batch_size < 1 or batch_size > dataset_size:
        raise ValueError(f"batch size {batch_size} must lie in [1, {dataset_size}]")
    params = MechanismParams(sigma, batch_size / dataset_size, steps_for(batch_size, dataset_size, epochs))
    return rdp_to_dp(rdp_subsampled_gaussian(params, orders), orders, delta, method)


def calibrate_sigma(target_epsilon, delta, batch_size, dataset_size, epochs, orders=DEFAULT_ORDERS,
                    method="improved", rtol=1e-4) -> float:
    """Bisect (in log sigma) for the noise multiplier whose epsilon matches
    ``target_epsilon`` to relative tolerance ``rtol``."""

    def eps(sigma):
        return compute_epsilon(sigma, batch_size, dataset_size, epochs, delta, orders, method).epsilon

    lo, hi = SIGMA_BOUNDS
    eps_lo, eps_hi = eps(lo), eps(hi)
    if not eps_hi <= target_epsilon <= eps_lo:
        raise InfeasibleTargetError(
            f"target epsilon {target_epsilon} outside the reachable range [{eps_hi:.6g}, {eps_lo:.6g}] "
            f"for sigma in [{lo}, {hi}]"
        )
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        e = eps(mid)
        if abs(e - target_epsilon) <= rtol * target_epsilon:
            return mid
        if e > target_epsilon:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)
