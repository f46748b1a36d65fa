"""Grid domains, covariance matrices, field sampling, and ensemble moments.

Sampling is dense: an N x N covariance matrix is assembled from the kernel,
factorized (with a jitter ladder for the severely ill-conditioned matrices
the rougher kernels produce on fine grids), and each sample is mu + L z with
z drawn from the per-sample counter stream.  Cost is O(N^2 K) + O(N^3), so
grids beyond N = 20,000 points are rejected outright rather than left to
thrash.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np
from scipy.linalg import lapack
from scipy.spatial.distance import cdist

from . import rng
from .errors import InputError, NotPositiveDefiniteError, SizeError
from .kernels import Constant, Family, Kernel, MeanSpec, Sinusoid, Tabulated, eval_mean

MAX_GRID_POINTS = 20_000

__all__ = [
    "GridDomain",
    "FieldEnsemble",
    "covariance_matrix",
    "cholesky_with_jitter",
    "sample_field",
    "chi_squared_combine",
    "empirical_moments",
    "mean_vector",
]


@dataclass(frozen=True)
class GridDomain:
    """Tensor-product grid over a box, flattened in row-major order.

    ``axes`` is a tuple of ``(lower, upper, count)`` triples.  Optional named
    boundary index sets refer into the flat ordering.
    """

    axes: tuple[tuple[float, float, int], ...]
    boundary: Mapping[str, tuple[int, ...]] | None = None

    def __post_init__(self):
        axes = tuple((float(lo), float(hi), int(n)) for lo, hi, n in self.axes)
        if not axes:
            raise InputError("domain needs at least one axis")
        for lo, hi, n in axes:
            if n < 1:
                raise InputError(f"axis needs at least one point, got {n}")
            if n >= 2 and not lo < hi:
                raise InputError(f"axis bounds must satisfy lower < upper, got [{lo}, {hi}]")
        object.__setattr__(self, "axes", axes)
        if self.boundary is not None:
            size = int(np.prod([n for _, _, n in axes]))
            clean = {}
            for name, idx in self.boundary.items():
                idx = tuple(int(i) for i in idx)
                if any(i < 0 or i >= size for i in idx):
                    raise InputError(f"boundary set {name!r} has indices outside [0, {size})")
                clean[name] = idx
            object.__setattr__(self, "boundary", clean)

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(n for _, _, n in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axis_points(self, axis: int) -> np.ndarray:
        lo, hi, n = self.axes[axis]
        return np.linspace(lo, hi, n)

    def spacing(self, axis: int) -> float:
        lo, hi, n = self.axes[axis]
        if n < 2:
            raise InputError("spacing is undefined for a single-point axis")
        return (hi - lo) / (n - 1)

    @cached_property
    def points(self) -> np.ndarray:
        """Flat (N, ndim) support-point array, row-major over the axes."""
        grids = np.meshgrid(*(self.axis_points(j) for j in range(self.ndim)), indexing="ij")
        pts = np.stack([g.ravel(order="C") for g in grids], axis=1)
        pts.setflags(write=False)
        return pts


@dataclass(frozen=True)
class FieldEnsemble:
    """K sample functions of a random field evaluated on a grid."""

    domain: GridDomain
    values: np.ndarray  # (K, N)
    seed: int
    provenance: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise InputError(f"ensemble values must be 2D (K, N), got shape {values.shape}")
        if values.shape[1] != self.domain.size:
            raise InputError(
                f"ensemble has {values.shape[1]} columns for a domain of size {self.domain.size}"
            )
        if not np.all(np.isfinite(values)):
            raise InputError("ensemble contains non-finite values")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    def write_csv(self, path_or_file) -> None:
        """Header row of grid coordinates, then one row per sample.

        Floats use their shortest round-trip representation.
        """
        close = False
        if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
            fh = open(path_or_file, "w", encoding="utf-8", newline="\n")
            close = True
        else:
            fh = path_or_file
        try:
            pts = self.domain.points
            fh.write(",".join("d=" + ";".join(repr(float(c)) for c in p) for p in pts) + "\n")
            for row in self.values:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        finally:
            if close:
                fh.close()


def covariance_matrix(kernel: Kernel, domain: GridDomain) -> np.ndarray:
    """Dense N x N kernel matrix over the domain's support points."""
    pts = domain.points
    if kernel.family is Family.LINEAR:
        m = pts @ pts.T
        return (m + m.T) / 2.0  # dgemm output is not bitwise symmetric
    r = cdist(pts, pts)
    if kernel.family is Family.MATERN:
        # vectorize over the distinct distances; N^2 scalar Bessel calls are slow
        uniq, inverse = np.unique(r, return_inverse=True)
        vals = kernel.from_distance(uniq)
        return np.asarray(vals)[inverse].reshape(r.shape)
    return np.asarray(kernel.from_distance(r))


def cholesky_with_jitter(matrix: np.ndarray, max_jitter: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``matrix + jitter*I`` for the smallest workable jitter.

    The jitter ladder is 0, then 1e-12 growing by factors of 100 up to
    ``max_jitter`` (included as the final rung).  An all-zero matrix is
    positive semidefinite with factor 0 and is returned directly.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise InputError(f"matrix must be square, got shape {matrix.shape}")
    scale = float(np.max(np.abs(matrix))) if matrix.size else 0.0
    if scale == 0.0:
        return np.zeros_like(matrix), 0.0
    if not np.allclose(matrix, matrix.T, rtol=1e-10, atol=1e-12 * scale):
        raise InputError("matrix is not symmetric")

    ladder = [0.0]
    j = 1e-12
    while j < max_jitter:
        ladder.append(j)
        j *= 100.0
    if max_jitter > 0.0 and ladder[-1] < max_jitter:
        ladder.append(float(max_jitter))

    pivot = 0
    for jitter in ladder:
        attempt = matrix if jitter == 0.0 else matrix + jitter * np.eye(matrix.shape[0])
        c, info = lapack.dpotrf(attempt, lower=1)
        if info == 0:
            return np.tril(c), jitter
        if info < 0:
            raise InputError(f"invalid argument {-info} passed to factorization")
        pivot = info - 1
    raise NotPositiveDefiniteError(pivot=pivot, jitter=ladder[-1])


def mean_vector(mean: MeanSpec, domain: GridDomain) -> np.ndarray:
    """Mean function evaluated at every support point."""
    if isinstance(mean, Constant):
        return np.full(domain.size, float(mean.value))
    if isinstance(mean, Sinusoid):
        if domain.ndim != 1:
            raise InputError("sinusoid mean is defined over 1D domains only")
        t = domain.axis_points(0)
        return mean.amplitude * np.sin(2.0 * np.pi * t / mean.period) + mean.offset
    if isinstance(mean, Tabulated):
        if len(mean.values) != domain.size:
            raise InputError(
                f"tabulated mean has {len(mean.values)} values for a grid of {domain.size} points"
            )
        return np.asarray(mean.values, dtype=float)
    raise InputError(f"unknown mean specification {type(mean).__name__}")


def sample_field(
    kernel: Kernel,
    mean: MeanSpec,
    domain: GridDomain,
    k: int,
    seed: int,
    max_jitter: float | None = None,
) -> FieldEnsemble:
    """Draw ``k`` sample functions.

    Sample ``i`` is mu + L z_i with z_i from the counter stream ``(seed, i)``,
    so the ensemble is reproducible bit-for-bit regardless of how many
    samples are drawn or how the work is scheduled.  ``max_jitter`` defaults
    to 1e-6 times the largest diagonal entry of the covariance matrix.
    """
    if k < 1:
        raise InputError(f"sample count must be >= 1, got {k}")
    n = domain.size
    if n > MAX_GRID_POINTS:
        raise SizeError(
            f"grid has {n} points; dense sampling is limited to {MAX_GRID_POINTS}"
        )
    cov = covariance_matrix(kernel, domain)
    if max_jitter is None:
        max_jitter = 1e-6 * float(np.max(np.diag(cov))) if cov.size else 0.0
    factor, _ = cholesky_with_jitter(cov, max_jitter)
    mu = mean_vector(mean, domain)
    values = np.empty((k, n))
    for i in range(k):
        z = rng.standard_normals(seed, i, n)
        values[i] = mu + factor @ z
    provenance = f"kernel={kernel!r} mean={mean!r}"
    return FieldEnsemble(domain=domain, values=values, seed=seed, provenance=provenance)


def chi_squared_combine(ensembles: list[FieldEnsemble]) -> FieldEnsemble:
    """Pointwise sum of squares of i.i.d. standard-normal ensembles.

    Inputs must be drawn with zero mean and unit variance (caller's
    responsibility); the result then follows a chi^2 law with one degree of
    freedom per input at every grid point.
    """
    if not ensembles:
        raise InputError("need at least one ensemble")
    first = ensembles[0]
    for e in ensembles[1:]:
        if e.domain != first.domain:
            raise InputError("ensembles must share one domain")
        if e.n_samples != first.n_samples:
            raise InputError("ensembles must have equal sample counts")
    total = np.zeros_like(first.values)
    for e in ensembles:
        total += e.values**2
    return FieldEnsemble(
        domain=first.domain,
        values=total,
        seed=first.seed,
        provenance=f"chi_squared({len(ensembles)} components)",
    )


def empirical_moments(ensemble: FieldEnsemble) -> tuple[np.ndarray, np.ndarray]:
    """Unbiased sample mean and covariance (divisor K-1) of an ensemble."""
    if ensemble.n_samples < 2:
        raise InputError("moments need at least two samples")
    mean = ensemble.values.mean(axis=0)
    cov = np.atleast_2d(np.cov(ensemble.values, rowvar=False, ddof=1))
    return mean, cov
