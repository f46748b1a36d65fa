"""Covariance kernels and mean functions for Gaussian random fields.

Four kernel families are supported:

    linear                k(d, d') = d . d'
    squared_exponential   k(d, d') = sigma * exp(-||d-d'||^2 / (2 beta^2))
    ornstein_uhlenbeck    k(d, d') = sigma * exp(-||d-d'|| / beta)
    matern                k(d, d') = sigma * 2^(1-nu)/Gamma(nu) * s^nu * K_nu(s),
                          s = sqrt(2 nu) ||d-d'|| / beta

The Matern kernel is normalized so that k(d, d) = sigma, i.e. sigma is a
uniform variance knob across the stationary families; at zero distance the
value is taken by continuity.  All stationary kernels use the Euclidean
distance in any dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.special import roots_genlaguerre

from .errors import DomainError, InputError, ParameterError

_EULER_GAMMA = 0.5772156649015328606

__all__ = [
    "Family",
    "Kernel",
    "Constant",
    "Sinusoid",
    "Tabulated",
    "MeanSpec",
    "eval_kernel",
    "eval_mean",
    "bessel_k",
]


class Family(str, Enum):
    LINEAR = "linear"
    SQUARED_EXPONENTIAL = "squared_exponential"
    ORNSTEIN_UHLENBECK = "ornstein_uhlenbeck"
    MATERN = "matern"


@dataclass(frozen=True)
class Kernel:
    """Covariance-function specification (family plus scale parameters).

    ``sigma`` is the variance scale and ``beta`` the length scale; both are
    ignored by the linear family.  ``nu`` is the Matern smoothness.
    """

    family: Family
    sigma: float = 1.0
    beta: float = 1.0
    nu: float | None = None

    def __post_init__(self):
        family = Family(self.family)
        object.__setattr__(self, "family", family)
        if family is not Family.LINEAR:
            if not self.sigma > 0:
                raise ParameterError(f"sigma must be positive, got {self.sigma}")
            if not self.beta > 0:
                raise ParameterError(f"beta must be positive, got {self.beta}")
        if family is Family.MATERN:
            if self.nu is None or not self.nu > 0:
                raise ParameterError(f"matern requires nu > 0, got {self.nu}")

    def __call__(self, d, d_prime) -> float:
        return eval_kernel(self, d, d_prime)

    def from_distance(self, r):
        """Stationary covariance as a function of Euclidean distance.

        Vectorized over ``r``; not defined for the linear family.
        """
        if self.family is Family.LINEAR:
            raise InputError("linear kernel is not a function of distance alone")
        r = np.asarray(r, dtype=float)
        if self.family is Family.SQUARED_EXPONENTIAL:
            return self.sigma * np.exp(-(r * r) / (2.0 * self.beta**2))
        if self.family is Family.ORNSTEIN_UHLENBECK:
            return self.sigma * np.exp(-r / self.beta)
        return _matern_from_distance(self.sigma, self.beta, self.nu, r)


def _matern_from_distance(sigma, beta, nu, r):
    scaled = math.sqrt(2.0 * nu) * np.atleast_1d(r) / beta
    out = np.empty_like(scaled)
    pref = 2.0 ** (1.0 - nu) / math.gamma(nu)
    for i, s in enumerate(scaled.ravel()):
        if s == 0.0:
            out.ravel()[i] = 1.0  # limit value: the kernel is continuous at 0
        else:
            out.ravel()[i] = pref * s**nu * bessel_k(nu, s)
    result = sigma * out
    return result.reshape(np.shape(r)) if np.ndim(r) else float(result[0])


def eval_kernel(kernel: Kernel, d, d_prime) -> float:
    """Evaluate the covariance between two points of equal dimension."""
    a = np.atleast_1d(np.asarray(d, dtype=float))
    b = np.atleast_1d(np.asarray(d_prime, dtype=float))
    if a.shape != b.shape or a.ndim != 1:
        raise InputError(f"points must be equal-dimension vectors, got {a.shape} and {b.shape}")
    if kernel.family is Family.LINEAR:
        return float(a @ b)
    r = float(np.linalg.norm(a - b))
    return float(kernel.from_distance(r))


# ---------------------------------------------------------------------------
# Modified Bessel function of the second kind
# ---------------------------------------------------------------------------

def bessel_k(nu: float, x: float) -> float:
    """Modified Bessel function K_nu(x) for nu >= 0, x > 0.

    Half-integer orders use the closed forms (exact up to rounding).  Other
    orders use the ascending series for x <= 2; for x > 2 the series would
    cancel catastrophically, so the value is computed from the integral

        K_nu(x) = sqrt(pi/(2x)) e^-x / Gamma(nu+1/2)
                  * int_0^inf e^-t t^(nu-1/2) (1 + t/(2x))^(nu-1/2) dt

    by generalized Gauss-Laguerre quadrature, which resums the divergent
    large-x expansion exactly.
    """
    x = float(x)
    nu = float(nu)
    if x <= 0.0:
        raise DomainError(f"bessel_k requires x > 0, got {x}")
    if nu < 0.0:
        raise ParameterError(f"bessel_k requires order >= 0, got {nu}")
    doubled = 2.0 * nu
    if doubled == round(doubled) and int(round(doubled)) % 2 == 1:
        return _bessel_k_half_integer(nu, x)
    if x <= 2.0:
        return _bessel_k_series(nu, x)
    return _bessel_k_quadrature(nu, x)


def _bessel_k_half_integer(nu: float, x: float) -> float:
    # K_{1/2}(x) = sqrt(pi/(2x)) e^-x, then upward recurrence
    # K_{n+1} = K_{n-1} + (2n/x) K_n (stable for K).
    base = math.sqrt(math.pi / (2.0 * x)) * math.exp(-x)
    m = int(round(nu - 0.5))
    if m == 0:
        return base
    k_prev = base  # K_{-1/2} = K_{1/2}
    k_cur = base
    order = 0.5
    for _ in range(m):
        k_next = k_prev + (2.0 * order / x) * k_cur
        k_prev, k_cur = k_cur, k_next
        order += 1.0
    return k_cur


def _bessel_i_series(nu: float, x: float) -> float:
    # Ascending series for I_nu; for negative non-integer nu the first few
    # terms alternate in sign, so convergence is judged on magnitudes.
    q = x * x / 4.0
    term = (x / 2.0) ** nu / math.gamma(nu + 1.0)
    total = term
    k = 0
    while True:
        k += 1
        term *= q / (k * (nu + k))
        total += term
        if abs(term) <= 1e-18 * abs(total) or k > 500:
            return total


def _bessel_k_series(nu: float, x: float) -> float:
    n = int(round(nu))
    if nu == n:
        return _bessel_k_integer_series(n, x)
    # Reflection through I: K_nu = pi/2 (I_{-nu} - I_nu)/sin(nu pi).
    i_plus = _bessel_i_series(nu, x)
    i_minus = _bessel_i_series(-nu, x)
    return math.pi / 2.0 * (i_minus - i_plus) / math.sin(nu * math.pi)


def _bessel_k_integer_series(n: int, x: float) -> float:
    # Limiting form of the reflection series at integer order:
    # K_n = 1/2 (x/2)^-n sum_{k<n} (n-k-1)!/k! (-q)^k
    #       + (-1)^(n+1) ln(x/2) I_n
    #       + (-1)^n 1/2 (x/2)^n sum_k [psi(k+1)+psi(n+k+1)] q^k / (k! (n+k)!)
    q = x * x / 4.0
    half = x / 2.0
    finite = 0.0
    if n > 0:
        term = float(math.factorial(n - 1))
        finite = term
        for k in range(1, n):
            term *= -q / (k * (n - k))
            finite += term
        finite *= 0.5 * half ** (-n)
    log_part = (-1.0) ** (n + 1) * math.log(half) * _bessel_i_series(float(n), x)
    psi_a = -_EULER_GAMMA  # psi(k+1) at k=0
    psi_b = -_EULER_GAMMA + sum(1.0 / j for j in range(1, n + 1))  # psi(n+k+1) at k=0
    term = 1.0 / math.factorial(n)  # q^k/(k!(n+k)!) at k=0
    series = (psi_a + psi_b) * term
    k = 0
    while True:
        k += 1
        term *= q / (k * (n + k))
        psi_a += 1.0 / k
        psi_b += 1.0 / (n + k)
        delta = (psi_a + psi_b) * term
        series += delta
        if abs(delta) <= 1e-18 * abs(series) or k > 500:
            break
    series *= (-1.0) ** n * 0.5 * half**n
    return finite + log_part + series


@lru_cache(maxsize=64)
def _laguerre_rule(alpha: float):
    nodes, weights = roots_genlaguerre(120, alpha)
    return nodes, weights


def _bessel_k_quadrature(nu: float, x: float) -> float:
    nodes, weights = _laguerre_rule(nu - 0.5)
    integrand = (1.0 + nodes / (2.0 * x)) ** (nu - 0.5)
    integral = float(weights @ integrand)
    return math.sqrt(math.pi / (2.0 * x)) * math.exp(-x) * integral / math.gamma(nu + 0.5)


# ---------------------------------------------------------------------------
# Mean functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    """Mean function equal to ``value`` everywhere."""

    value: float


@dataclass(frozen=True)
class Sinusoid:
    """1D mean ``amplitude * sin(2 pi d / period) + offset``."""

    amplitude: float
    period: float
    offset: float

    def __post_init__(self):
        if self.period == 0:
            raise ParameterError("sinusoid period must be nonzero")


@dataclass(frozen=True)
class Tabulated:
    """Mean given by values at a fixed set of support points."""

    points: tuple
    values: tuple

    def __post_init__(self):
        pts = tuple(tuple(np.atleast_1d(np.asarray(p, dtype=float))) for p in self.points)
        vals = tuple(float(v) for v in self.values)
        if len(pts) != len(vals):
            raise InputError(
                f"tabulated mean has {len(vals)} values for {len(pts)} points"
            )
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)


MeanSpec = Constant | Sinusoid | Tabulated


def eval_mean(mean: MeanSpec, d) -> float:
    """Evaluate a mean function at a single point."""
    if isinstance(mean, Constant):
        return float(mean.value)
    if isinstance(mean, Sinusoid):
        point = np.atleast_1d(np.asarray(d, dtype=float))
        if point.size != 1:
            raise InputError("sinusoid mean is defined over 1D domains only")
        t = float(point[0])
        return mean.amplitude * math.sin(2.0 * math.pi * t / mean.period) + mean.offset
    if isinstance(mean, Tabulated):
        point = tuple(np.atleast_1d(np.asarray(d, dtype=float)))
        for p, v in zip(mean.points, mean.values):
            if len(p) == len(point) and max(abs(a - b) for a, b in zip(p, point)) <= 1e-9:
                return v
        raise InputError(f"point {point} is not on the tabulated grid")
    raise InputError(f"unknown mean specification {type(mean).__name__}")
