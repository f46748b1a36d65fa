"""Reactive precursor transport in a porous substrate under a random
reaction-probability field.

A gaseous precursor held at surface density z_p diffuses into the substrate
and irreversibly consumes surface sites; the site fraction only decays.  The
reaction probability along the depth is a squared-exponential Gaussian field
sampled per scenario and clamped into [0, 1] (its physical range).  Each
scenario is integrated with fully implicit backward-Euler steps, solving the
coupled 2N nonlinear system per step with Newton's method.

The design question is the single scalar z_p: minimize the expected squared
mismatch between the final coverage profile and a sigmoid setpoint, which a
golden-section search answers using the simulator as the oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import ParameterError, SimulationError
from ..grf import GridDomain, sample_field
from ..kernels import Constant, Family, Kernel
from ..solver import golden_section
from ..transcription import quadrature_weights

__all__ = [
    "AldConfig",
    "AldResult",
    "coverage_setpoint",
    "reaction_field",
    "ald_simulate",
    "ald_optimize",
    "tracking_error",
]


@dataclass(frozen=True)
class AldConfig:
    diffusivity: float = 2.81e6  # um^2 / s
    precursor_rate: float = 6.912e8  # 1 / s
    site_rate: float = 1.538e7  # um^3 / s
    t_end: float = 10.0
    depth: float = 500.0  # um
    n_time: int = 10
    n_space: int = 100
    n_samples: int = 10
    field_mean: float = 2e-4
    field_variance: float = 3e-4
    field_scale: float = 1.8e5  # squared-distance denominator of the covariance
    setpoint_center: float = 500.0  # transition sits at half this depth
    setpoint_steepness: float = 0.15
    search_lo: float = 0.0
    search_hi: float = 0.1
    search_tol: float = 1e-4
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    seed: int = 0

    def __post_init__(self):
        for name in (
            "diffusivity",
            "precursor_rate",
            "site_rate",
            "t_end",
            "depth",
            "field_variance",
            "field_scale",
        ):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if self.n_time < 2 or self.n_space < 2:
            raise ParameterError("need at least two points per axis")

    @property
    def time_points(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_time)

    @property
    def space_domain(self) -> GridDomain:
        return GridDomain(axes=((0.0, self.depth, self.n_space),))

    @property
    def kernel(self) -> Kernel:
        # covariance sigma * exp(-(dx)^2 / scale): beta = sqrt(scale / 2)
        return Kernel(
            Family.SQUARED_EXPONENTIAL,
            sigma=self.field_variance,
            beta=float(np.sqrt(self.field_scale / 2.0)),
        )


@dataclass(frozen=True)
class AldResult:
    z_p: float
    expected_tracking_error: float
    evaluations: int


def coverage_setpoint(config: AldConfig, x: np.ndarray) -> np.ndarray:
    """Target site fraction: ~0 near the surface, ~1 at depth (sigmoid)."""
    x = np.asarray(x, dtype=float)
    arg = config.setpoint_steepness * (x - config.setpoint_center / 2.0)
    return 1.0 - 1.0 / (1.0 + np.exp(arg))


def reaction_field(config: AldConfig, deterministic: bool) -> np.ndarray:
    """Per-sample reaction probabilities on the depth grid, clamped to [0, 1].

    The Gaussian model puts mass outside the physical range of a
    probability; values are clipped so the reaction never runs backward.
    """
    if deterministic:
        return np.full((1, config.n_space), config.field_mean)
    ens = sample_field(
        config.kernel,
        Constant(config.field_mean),
        config.space_domain,
        k=config.n_samples,
        seed=config.seed,
    )
    return np.clip(ens.values, 0.0, 1.0)


def _step_implicit(
    config: AldConfig,
    xi: np.ndarray,
    p_old: np.ndarray,
    theta_old: np.ndarray,
    dt: float,
    z_p: float,
    h: float,
):
    """One backward-Euler step of the coupled precursor/site system.

    Rows: precursor PDE at interior nodes, Dirichlet p[0] = z_p, zero-flux
    p[-1] = p[-2]; site ODE at every node.  Newton iterates on the stacked
    residual with an analytic sparse Jacobian.  Returns None on divergence.
    """
    n = p_old.size
    d_coef = config.diffusivity / (h * h)
    gamma = config.precursor_rate
    eta = config.site_rate
    scale = max(1.0, z_p)

    def p_solve(theta_vec: np.ndarray) -> np.ndarray:
        # linear M-matrix solve of the precursor rows with sites frozen:
        # guaranteed nonnegative, used as predictor and as fallback sweep
        main = np.ones(n)
        main[1:-1] += dt * (2.0 * d_coef + gamma * xi[1:-1] * theta_vec[1:-1])
        lower = np.full(n - 1, 0.0)
        upper = np.full(n - 1, 0.0)
        lower[:-1] = -dt * d_coef
        upper[1:] = -dt * d_coef
        lower[-1] = -1.0
        rhs = p_old.copy()
        rhs[0] = z_p
        rhs[-1] = 0.0
        mat = sp.diags([lower, main, upper], [-1, 0, 1], format="csc")
        return spla.spsolve(mat, rhs)

    def residual_of(p, theta):
        react = xi * p * theta
        res_p = np.empty(n)
        res_p[0] = p[0] - z_p
        res_p[1:-1] = (
            p[1:-1]
            - p_old[1:-1]
            - dt * (d_coef * (p[:-2] - 2.0 * p[1:-1] + p[2:]) - gamma * react[1:-1])
        )
        res_p[-1] = p[-1] - p[-2]
        res_t = theta - theta_old + dt * eta * react
        return res_p, res_t

    # monotone predictor: sites frozen -> precursor -> sites closed form;
    # the alternation converges to the physical root from within the box
    p = p_solve(theta_old)
    theta = theta_old / (1.0 + dt * eta * xi * p)

    for iteration in range(config.newton_max_iter):
        res_p, res_t = residual_of(p, theta)
        residual = max(np.max(np.abs(res_p)), np.max(np.abs(res_t)))
        if not np.isfinite(residual):
            return None
        if residual <= config.newton_tol * scale:
            return p, theta
        main_p = np.ones(n)
        main_p[1:-1] += dt * (2.0 * d_coef + gamma * xi[1:-1] * theta[1:-1])
        lower = np.full(n - 1, 0.0)
        upper = np.full(n - 1, 0.0)
        lower[:-1] = -dt * d_coef  # sub-diagonal of interior PDE rows
        upper[1:] = -dt * d_coef
        lower[-1] = -1.0  # zero-flux closure row
        j_pp = sp.diags([lower, main_p, upper], [-1, 0, 1], format="csr")
        dpt = np.zeros(n)
        dpt[1:-1] = dt * gamma * xi[1:-1] * p[1:-1]
        j_pt = sp.diags(dpt)
        j_tp = sp.diags(dt * eta * xi * theta)
        j_tt = sp.diags(1.0 + dt * eta * xi * p)
        jac = sp.bmat([[j_pp, j_pt], [j_tp, j_tt]], format="csc")
        delta = spla.spsolve(jac, np.concatenate([res_p, res_t]))
        # project the Newton iterate onto the physical box; the spurious
        # root of the coupled system lives at negative precursor values
        p = np.maximum(p - delta[:n], 0.0)
        theta = np.clip(theta - delta[n:], 0.0, 1.0)
        if iteration % 5 == 4:  # periodic monotone sweep to escape cycling
            p = p_solve(theta)
            theta = theta_old / (1.0 + dt * eta * xi * p)
    return None


def _integrate_sample(
    config: AldConfig, xi: np.ndarray, z_p: float
) -> tuple[np.ndarray, np.ndarray]:
    """Full trajectory for one reaction-probability sample.

    Returns (precursor, sites), each (n_time, n_space).  A step where Newton
    diverges is retried on halved substeps; persistent failure raises a
    simulation error naming the step.
    """
    times = config.time_points
    h = config.depth / (config.n_space - 1)
    p = np.zeros(config.n_space)
    theta = np.ones(config.n_space)
    precursor = np.empty((config.n_time, config.n_space))
    sites = np.empty((config.n_time, config.n_space))
    precursor[0] = p
    sites[0] = theta

    for i in range(1, config.n_time):
        dt_full = times[i] - times[i - 1]
        pieces = 1
        while True:
            ok = True
            p_try, theta_try = p, theta
            for _ in range(pieces):
                out = _step_implicit(config, xi, p_try, theta_try, dt_full / pieces, z_p, h)
                if out is None:
                    ok = False
                    break
                p_try, theta_try = out
            if ok:
                break
            pieces *= 2
            if pieces > 1024:
                raise SimulationError(
                    f"implicit step {i} failed to converge even at dt/{pieces // 2}"
                )
        p, theta = p_try, theta_try
        # shave numerical dust off the physical bounds; real violations abort
        if np.min(theta) < -1e-9 or np.max(theta) > 1.0 + 1e-9 or np.min(p) < -1e-9:
            raise SimulationError(f"state left its physical range at step {i}")
        theta = np.clip(theta, 0.0, 1.0)
        p = np.maximum(p, 0.0)
        precursor[i] = p
        sites[i] = theta
    return precursor, sites


def ald_simulate(
    config: AldConfig,
    z_p: float,
    field: np.ndarray | None = None,
    deterministic: bool = False,
    workers: int = 1,
) -> np.ndarray:
    """Coverage ensemble 1 - sites(t, x) for a fixed surface density z_p.

    Shape (K, n_time, n_space).  ``field`` overrides the sampled reaction
    probabilities (one row per scenario).
    """
    if z_p < 0:
        raise ParameterError(f"z_p must be nonnegative, got {z_p}")
    if field is None:
        field = reaction_field(config, deterministic)
    field = np.asarray(field, dtype=float)

    def run(row):
        _, sites = _integrate_sample(config, row, z_p)
        return 1.0 - sites

    rows = list(field)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            coverage = list(pool.map(run, rows))
    else:
        coverage = [run(row) for row in rows]
    return np.stack(coverage)


def tracking_error(config: AldConfig, coverage: np.ndarray) -> float:
    """Expected squared setpoint mismatch of the final-time site profile."""
    x = config.space_domain.axis_points(0)
    weights = quadrature_weights(x)
    target_sites = coverage_setpoint(config, x)
    final_sites = 1.0 - coverage[:, -1, :]
    per_sample = ((final_sites - target_sites) ** 2) @ weights
    return float(per_sample.mean())


def ald_optimize(
    config: AldConfig, deterministic: bool = False, workers: int = 1
) -> AldResult:
    """Golden-section search for the surface density minimizing the expected
    final-time tracking error."""
    field = reaction_field(config, deterministic)
    calls = 0

    def oracle(z_p: float) -> float:
        nonlocal calls
        calls += 1
        coverage = ald_simulate(config, z_p, field=field, workers=workers)
        return tracking_error(config, coverage)

    z_star, err = golden_section(oracle, config.search_lo, config.search_hi, config.search_tol)
    return AldResult(z_p=float(z_star), expected_tracking_error=float(err), evaluations=calls)
