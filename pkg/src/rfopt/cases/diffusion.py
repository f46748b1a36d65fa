"""Heated plate with spatially random diffusivity: tracking vs excursion.

A 2D transient diffusion system is driven by a bounded heating field
y_g(t, x) shared across diffusivity scenarios.  The objective trades the
expected squared tracking error against the fraction of scenarios whose
temperature ever meets the safety threshold, via the big-M excursion
construction with relaxed indicators.  Sweeping the tracking weight traces
the Pareto frontier between the two.

The Matern diffusivity samples are clamped below at a small positive floor:
a heat equation with negative conductivity is ill-posed, and the Gaussian
model puts mass below zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..errors import ParameterError, SolverError
from ..grf import GridDomain, sample_field
from ..kernels import Constant, Family, Kernel
from ..solver import Status, solve_qp
from ..transcription import (
    ObjectivePart,
    ProgramBuilder,
    TranscribedProgram,
    VariableLayout,
    big_m_excursion,
    derivative_rows,
    quadrature_weights,
    round_binaries,
)

__all__ = [
    "DiffusionConfig",
    "DiffusionResult",
    "ParetoPoint",
    "diffusivity_field",
    "build_diffusion_program",
    "diffusion_solve",
    "diffusion_pareto",
]


@dataclass(frozen=True)
class DiffusionConfig:
    t_end: float = 1.0
    n_time: int = 6
    x_lo: float = -1.0
    x_hi: float = 1.0
    n_space: int = 13  # per spatial axis (paper-scale run: n_time=10, n_space=31)
    n_samples: int = 7
    matern_beta: float = 0.25
    matern_nu: float = 1.5
    matern_sigma: float = 1.0
    field_mean: float = 0.5
    diffusivity_floor: float = 1e-2
    heater_lo: float = 0.0
    heater_hi: float = 0.1
    setpoint: float = 0.2
    threshold: float = 0.25
    big_m: float = 10.0
    lambdas: tuple[float, ...] = (0.0, 0.3, 1.0, 3.0, 30.0)
    seed: int = 0

    def __post_init__(self):
        if not self.threshold > self.setpoint:
            raise ParameterError("threshold must exceed the tracking setpoint")
        if self.n_time < 2 or self.n_space < 3:
            raise ParameterError("grid too small for the interior stencil")
        if not self.big_m > 0:
            raise ParameterError("big_m must be positive")

    @property
    def space_domain(self) -> GridDomain:
        return GridDomain(
            axes=(
                (self.x_lo, self.x_hi, self.n_space),
                (self.x_lo, self.x_hi, self.n_space),
            )
        )

    @property
    def time_points(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_time)

    @property
    def kernel(self) -> Kernel:
        return Kernel(
            Family.MATERN,
            sigma=self.matern_sigma,
            beta=self.matern_beta,
            nu=self.matern_nu,
        )


@dataclass(frozen=True)
class DiffusionResult:
    heater: np.ndarray  # (n_time, n_space, n_space) optimal policy
    excursion_probability: float  # after rounding the relaxed indicators
    tracking_error: float
    relaxed_indicators: np.ndarray  # (K,) pre-rounding values
    objective: float
    status: Status


@dataclass(frozen=True)
class ParetoPoint:
    weight: float
    tracking_error: float | None
    excursion_probability: float | None
    error: str | None = None


def diffusivity_field(config: DiffusionConfig) -> np.ndarray:
    """Per-sample diffusivities on the spatial grid, clamped at the floor."""
    ens = sample_field(
        config.kernel,
        Constant(config.field_mean),
        config.space_domain,
        k=config.n_samples,
        seed=config.seed,
    )
    return np.maximum(ens.values, config.diffusivity_floor)


def build_diffusion_program(
    config: DiffusionConfig, diffusivity: np.ndarray, tracking_weight: float
) -> TranscribedProgram:
    """QP: minimize mean exceedance indicator + tracking_weight * tracking error.

    Temperature variables per (space-time node, sample); one shared heater
    block over space-time nodes; dynamics are backward Euler in time with
    the 5-point Laplacian scaled by the sample diffusivity; initial and edge
    temperatures pinned to zero through equal bounds.
    """
    k = diffusivity.shape[0]
    space = config.space_domain
    n_s = space.size
    times = config.time_points
    n_t = times.size
    n_nodes = n_t * n_s
    lap, interior = derivative_rows(space, "central_laplacian_2d")
    lap = lap.tocsr()

    layout = (
        VariableLayout()
        .with_block("temperature", (n_nodes, k))
        .with_block("heater", (n_nodes,))
    )
    pb = ProgramBuilder(layout)

    shape = space.shape
    edge = np.zeros(n_s, dtype=bool)
    grid_idx = np.arange(n_s).reshape(shape)
    edge[grid_idx[0, :]] = True
    edge[grid_idx[-1, :]] = True
    edge[grid_idx[:, 0]] = True
    edge[grid_idx[:, -1]] = True

    def node(t_i: int, s_i: int) -> int:
        return t_i * n_s + s_i

    # temperatures start free; Dirichlet data pins the initial plane and edges
    for kk in range(k):
        for t_i in range(n_t):
            for s_i in range(n_s):
                if t_i == 0 or edge[s_i]:
                    j = layout.index("temperature", node(t_i, s_i), kk)
                    pb.set_bounds(j, 0.0, 0.0)

    # heater bounded; entries at t = 0 never enter the dynamics, pin them
    for t_i in range(n_t):
        for s_i in range(n_s):
            j = layout.index("heater", node(t_i, s_i))
            if t_i == 0:
                pb.set_bounds(j, 0.0, 0.0)
            else:
                pb.set_bounds(j, config.heater_lo, config.heater_hi)

    # dynamics: (y[t] - y[t-1])/dt = xi * lap y[t] + g[t] at interior nodes
    for kk in range(k):
        xi = diffusivity[kk]
        for t_i in range(1, n_t):
            dt = times[t_i] - times[t_i - 1]
            for row, s_i in enumerate(interior):
                cols = [
                    layout.index("temperature", node(t_i, s_i), kk),
                    layout.index("temperature", node(t_i - 1, s_i), kk),
                    layout.index("heater", node(t_i, s_i)),
                ]
                coefs = [1.0 / dt, -1.0 / dt, -1.0]
                start, stop = lap.indptr[row], lap.indptr[row + 1]
                for col, val in zip(lap.indices[start:stop], lap.data[start:stop]):
                    cols.append(layout.index("temperature", node(t_i, int(col)), kk))
                    coefs.append(-float(xi[s_i]) * float(val))
                pb.add_eq(cols, coefs, 0.0)

    # tracking objective over the whole space-time domain (trapezoid weights)
    w_t = quadrature_weights(times)
    w_x = quadrature_weights(space.axis_points(0))
    weights = np.kron(w_t, np.kron(w_x, w_x))  # length n_nodes, (t, x1, x2)
    tr_rows, tr_vals = [], []
    tr_lin = np.zeros(layout.size)
    tr_const = 0.0
    for nn in range(n_nodes):
        w = weights[nn] / k
        for kk in range(k):
            j = layout.index("temperature", nn, kk)
            tr_rows.append(j)
            tr_vals.append(2.0 * w)
            tr_lin[j] = -2.0 * w * config.setpoint
            tr_const += w * config.setpoint**2
    tr_quad = sp.coo_matrix(
        (tr_vals, (tr_rows, tr_rows)), shape=(layout.size, layout.size)
    ).tocsr()
    pb.add_part("tracking_error", ObjectivePart(quad=tr_quad, lin=tr_lin, const=tr_const))
    if tracking_weight != 0.0:
        for j, val in zip(tr_rows, tr_vals):
            pb.add_quadratic(j, j, tracking_weight * val / 2.0)
        for j in np.flatnonzero(tr_lin):
            pb.add_linear(int(j), tracking_weight * tr_lin[j])
        pb.add_constant(tracking_weight * tr_const)

    base = pb.build()
    return big_m_excursion(
        base,
        "temperature",
        u=config.threshold,
        big_m=config.big_m,
        probability_weight=1.0,
    )


def diffusion_solve(
    config: DiffusionConfig,
    tracking_weight: float,
    diffusivity: np.ndarray | None = None,
    tol: float = 1e-8,
) -> DiffusionResult:
    """Solve the scalarized trade-off at one tracking weight."""
    if tracking_weight < 0:
        raise ParameterError("tracking weight must be nonnegative")
    if diffusivity is None:
        diffusivity = diffusivity_field(config)
    program = build_diffusion_program(config, diffusivity, tracking_weight)
    border = np.concatenate(
        [
            program.layout.indices("heater"),
            program.layout.indices("temperature_peak"),
            program.layout.indices("temperature_exceed"),
        ]
    )
    res = solve_qp(program, tol=tol, border=border)
    if res.status is not Status.OPTIMAL:
        raise SolverError(f"diffusion program ended with status {res.status.value}")
    rounded = round_binaries(res.x, program.relaxed_binary)
    probability = program.part_value("excursion_probability", rounded)
    tracking = program.part_value("tracking_error", res.x)
    q_idx = program.layout.indices("temperature_exceed")
    heater = res.x[program.layout.indices("heater")].reshape(
        (config.n_time, config.n_space, config.n_space)
    )
    return DiffusionResult(
        heater=heater,
        excursion_probability=float(probability),
        tracking_error=float(tracking),
        relaxed_indicators=res.x[q_idx].copy(),
        objective=float(res.objective),
        status=res.status,
    )


def diffusion_pareto(
    config: DiffusionConfig, lambdas=None, tol: float = 1e-8
) -> list[ParetoPoint]:
    """Trade-off frontier: one point per tracking weight, sorted by error.

    Per-point solver failures are recorded and the sweep continues.
    """
    weights = config.lambdas if lambdas is None else tuple(lambdas)
    if len(weights) < 2:
        raise ParameterError("a frontier needs at least two weights")
    diffusivity = diffusivity_field(config)
    points = []
    for lam in weights:
        if lam < 0:
            raise ParameterError("tracking weights must be nonnegative")
        try:
            res = diffusion_solve(config, lam, diffusivity=diffusivity, tol=tol)
            points.append(
                ParetoPoint(
                    weight=float(lam),
                    tracking_error=res.tracking_error,
                    excursion_probability=res.excursion_probability,
                )
            )
        except SolverError as exc:
            points.append(
                ParetoPoint(
                    weight=float(lam),
                    tracking_error=None,
                    excursion_probability=None,
                    error=str(exc),
                )
            )
    points.sort(key=lambda p: (p.tracking_error is None, p.tracking_error))
    return points
