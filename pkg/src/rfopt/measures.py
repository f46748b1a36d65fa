"""Summaries of sampled random fields.

Excursion sets, upcrossing counts, the closed-form expected upcrossing rate
for stationary Gaussian processes, Euler characteristics of excursion masks
(1D and 2D), Monte-Carlo estimators of the expected Euler characteristic and
of the excursion probability, and the discrete tail-average risk measure.

Threshold convention: a point is active when its value is >= u, everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, ParameterError, UnsupportedDimensionError
from .grf import FieldEnsemble, GridDomain

__all__ = [
    "ExcursionMask",
    "excursion_mask",
    "count_upcrossings",
    "rice_expected_upcrossings",
    "euler_characteristic",
    "mc_expected_ec",
    "mc_excursion_probability",
    "cvar_field",
]


@dataclass(frozen=True)
class ExcursionMask:
    """Boolean indicator of where a sample meets or exceeds threshold ``u``."""

    domain: GridDomain
    active: np.ndarray
    u: float

    def __post_init__(self):
        active = np.asarray(self.active, dtype=bool)
        if active.shape != (self.domain.size,):
            raise InputError(
                f"mask has {active.shape} entries for a domain of size {self.domain.size}"
            )
        if self.domain.ndim > 2:
            raise UnsupportedDimensionError(
                f"excursion masks support 1D and 2D domains, got {self.domain.ndim}D"
            )
        active = active.copy()
        active.setflags(write=False)
        object.__setattr__(self, "active", active)


def excursion_mask(sample: np.ndarray, domain: GridDomain, u: float) -> ExcursionMask:
    sample = np.asarray(sample, dtype=float)
    if sample.shape != (domain.size,):
        raise InputError(
            f"sample has {sample.shape} entries for a domain of size {domain.size}"
        )
    return ExcursionMask(domain=domain, active=sample >= u, u=float(u))


def count_upcrossings(sample: np.ndarray, u: float) -> int:
    """Number of indices i with sample[i] < u <= sample[i+1]."""
    sample = np.asarray(sample, dtype=float)
    if sample.ndim != 1 or sample.size < 2:
        raise InputError("upcrossing count needs a 1D sample with at least two points")
    return int(np.count_nonzero((sample[:-1] < u) & (sample[1:] >= u)))


def rice_expected_upcrossings(sigma2: float, lam: float, u: float) -> float:
    """Expected upcrossings of level u per unit length for a zero-mean
    stationary Gaussian process with variance ``sigma2`` and spectral
    curvature ``lam`` (minus the second derivative of the covariance at 0):

        sqrt(lam) / (2 pi sqrt(sigma2)) * exp(-u^2 / (2 sigma2))
    """
    if sigma2 <= 0:
        raise ParameterError(f"sigma2 must be positive, got {sigma2}")
    if lam <= 0:
        raise ParameterError(f"lam must be positive, got {lam}")
    return math.sqrt(lam) / (2.0 * math.pi * math.sqrt(sigma2)) * math.exp(
        -(u * u) / (2.0 * sigma2)
    )


def euler_characteristic(mask: ExcursionMask) -> int:
    """Euler characteristic of the excursion mask.

    1D: the number of maximal runs of active points.  2D: V - E + F of the
    cubical complex whose vertices are the active grid points, whose edges
    join active 4-neighbors, and whose faces are unit cells with all four
    corners active.  That alternating sum equals connected components minus
    holes for this complex.
    """
    if mask.domain.ndim == 1:
        a = mask.active
        runs = int(np.count_nonzero(a[1:] & ~a[:-1]))
        return runs + int(a[0])
    if mask.domain.ndim == 2:
        a = mask.active.reshape(mask.domain.shape)
        v = int(a.sum())
        e = int((a[:-1, :] & a[1:, :]).sum()) + int((a[:, :-1] & a[:, 1:]).sum())
        f = int((a[:-1, :-1] & a[1:, :-1] & a[:-1, 1:] & a[1:, 1:]).sum())
        return v - e + f
    raise UnsupportedDimensionError(
        f"euler characteristic supports 1D and 2D masks, got {mask.domain.ndim}D"
    )


def mc_expected_ec(ensemble: FieldEnsemble, u: float) -> float:
    """Sample average of per-realization Euler characteristics at level u.

    Diagnostic approximation of the excursion probability; the optimization
    path uses the indicator estimator below instead.
    """
    if ensemble.domain.ndim > 2:
        raise UnsupportedDimensionError(
            f"expected EC supports 1D and 2D domains, got {ensemble.domain.ndim}D"
        )
    total = 0
    for row in ensemble.values:
        total += euler_characteristic(excursion_mask(row, ensemble.domain, u))
    return total / ensemble.n_samples


def mc_excursion_probability(ensemble: FieldEnsemble, u: float) -> float:
    """Fraction of samples whose maximum over the grid meets or exceeds u."""
    return float(np.mean(ensemble.values.max(axis=1) >= u))


def cvar_field(ensemble_costs: np.ndarray, alpha: float) -> float:
    """Discrete tail-average of per-sample scalar costs at level ``alpha``.

    Computes min over f of  f + (1/((1-alpha) K)) sum_k max(v_k - f, 0)
    exactly by sorting: the average of the worst (1-alpha) fraction of the
    cost distribution, with the boundary sample fractionally weighted.
    """
    costs = np.asarray(ensemble_costs, dtype=float).ravel()
    if costs.size < 1:
        raise InputError("need at least one cost sample")
    if not 0.0 <= alpha < 1.0:
        raise ParameterError(f"alpha must lie in [0, 1), got {alpha}")
    k = costs.size
    tail = (1.0 - alpha) * k  # number of samples in the tail, possibly fractional
    ordered = np.sort(costs)[::-1]
    whole = int(math.floor(tail))
    total = float(ordered[:whole].sum())
    if whole < k and tail > whole:
        total += (tail - whole) * float(ordered[whole])
    return total / tail
