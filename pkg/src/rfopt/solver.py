"""Sparse convex QP/LP solver and scalar search utilities.

The solver is a primal-dual interior-point method with Mehrotra's
predictor-corrector steps.  Each iteration factorizes one quasidefinite
augmented system

    [ Q + D + dI     A_eq'        A_in'     ] [dx]
    [ A_eq           -dI          0         ] [dy]
    [ A_in           0            -S/Z - dI ] [dz]

with a sparse LU (fill-reducing ordering via SuperLU); D collects the
bound-multiplier scalings, S/Z the inequality slack scalings, and d is a
tiny static regularization.  Variables fixed by equal bounds are eliminated
before the iteration starts.
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InputError, ParameterError, SolverError
from .transcription import TranscribedProgram

__all__ = [
    "Status",
    "KktResiduals",
    "Duals",
    "SolveResult",
    "solve_qp",
    "kkt_residuals",
    "golden_section",
    "multiplier_sweep",
    "SweepPoint",
]


class Status(str, Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max_iterations"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class KktResiduals:
    stationarity: float
    primal: float
    dual: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)


@dataclass(frozen=True)
class Duals:
    """Multipliers: equalities, inequalities, and full-size bound duals
    (zero wherever the bound is infinite)."""

    eq: np.ndarray
    ineq: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


@dataclass(frozen=True)
class SolveResult:
    x: np.ndarray
    objective: float
    status: Status
    kkt: KktResiduals
    iterations: int
    duals: Duals

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def _amax(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def _data_norm(program: TranscribedProgram) -> float:
    finite_b = program.lb[np.isfinite(program.lb)]
    finite_u = program.ub[np.isfinite(program.ub)]
    pieces = [
        _amax(program.Q.data) if program.Q.nnz else 0.0,
        _amax(program.c),
        _amax(program.A_eq.data) if program.A_eq.nnz else 0.0,
        _amax(program.b_eq),
        _amax(program.A_in.data) if program.A_in.nnz else 0.0,
        _amax(program.b_in),
        _amax(finite_b),
        _amax(finite_u),
    ]
    return max(pieces) if pieces else 1.0


def kkt_residuals(program: TranscribedProgram, x: np.ndarray, duals: Duals) -> KktResiduals:
    """Infinity norms of the stationarity, primal, dual, and complementarity
    residuals of (x, duals) for the given program."""
    x = np.asarray(x, dtype=float)
    n = program.n
    if x.shape != (n,):
        raise InputError(f"x has shape {x.shape}, expected ({n},)")
    if duals.eq.shape != (program.b_eq.size,) or duals.ineq.shape != (program.b_in.size,):
        raise InputError("dual vector lengths do not match the program")
    if duals.lower.shape != (n,) or duals.upper.shape != (n,):
        raise InputError("bound dual vectors must be full-size")

    stat = (
        program.Q @ x
        + program.c
        + program.A_eq.T @ duals.eq
        + program.A_in.T @ duals.ineq
        - duals.lower
        + duals.upper
    )
    r_in = program.A_in @ x - program.b_in
    lower_gap = np.where(np.isfinite(program.lb), x - program.lb, 0.0)
    upper_gap = np.where(np.isfinite(program.ub), program.ub - x, 0.0)
    primal = max(
        _amax(program.A_eq @ x - program.b_eq),
        _amax(np.maximum(r_in, 0.0)),
        _amax(np.maximum(-lower_gap, 0.0)),
        _amax(np.maximum(-upper_gap, 0.0)),
    )
    dual = max(
        _amax(np.minimum(duals.ineq, 0.0)),
        _amax(np.minimum(duals.lower, 0.0)),
        _amax(np.minimum(duals.upper, 0.0)),
    )
    comp = max(
        _amax(duals.ineq * r_in),
        _amax(duals.lower * lower_gap),
        _amax(duals.upper * upper_gap),
    )
    return KktResiduals(
        stationarity=_amax(stat), primal=primal, dual=dual, complementarity=comp
    )


# ---------------------------------------------------------------------------
# Interior-point solver
# ---------------------------------------------------------------------------

class _KktFactorizer:
    """Factorization backend for the augmented systems of one solve.

    Plain mode hands the whole quasidefinite matrix to SuperLU with a
    fill-reducing ordering.  When a ``border`` variable set is given (the
    variables coupling otherwise independent scenario blocks, e.g. shared
    first-stage decisions), the matrix is eliminated block-first: each
    connected component off the border is factorized on its own and a dense
    Schur complement is formed on the border.  Same arithmetic, ordering
    chosen from structure instead of a generic heuristic.
    """

    def __init__(self, pattern: sp.csc_matrix, border: np.ndarray | None):
        self.dim = pattern.shape[0]
        self.components = None
        if border is None or border.size == 0:
            return
        from scipy.sparse.csgraph import connected_components

        keep = np.setdiff1d(np.arange(self.dim), border)
        sub = pattern[keep][:, keep]
        n_comp, labels = connected_components(sub, directed=False)
        if n_comp < 2:
            return
        # tiny components (e.g. rows touching only border variables) are
        # merged into one block-diagonal bucket to avoid slicing overhead
        sizes = np.bincount(labels, minlength=n_comp)
        components = []
        small = []
        for c in range(n_comp):
            idx = keep[labels == c]
            if sizes[c] >= 100:
                components.append(idx)
            else:
                small.append(idx)
        if small:
            components.append(np.concatenate(small))
        if len(components) < 2:
            return
        self.border = np.asarray(border)
        self.components = components

    def factor(self, mat: sp.csc_matrix):
        if self.components is None:
            self.lu = spla.splu(mat, permc_spec="MMD_AT_PLUS_A")
            return
        import scipy.linalg as dla

        border = self.border
        schur = mat[border][:, border].toarray()
        self.block_lus = []
        self.block_couplings = []  # (B_cb dense, X_c = A_cc^-1 B_cb)
        for comp in self.components:
            a_cc = mat[comp][:, comp].tocsc()
            b_cb = np.asarray(mat[comp][:, border].todense())
            lu_c = spla.splu(a_cc, permc_spec="MMD_AT_PLUS_A")
            x_c = lu_c.solve(b_cb)
            schur -= b_cb.T @ x_c  # the matrix is symmetric: K_bc = B_cb'
            self.block_lus.append(lu_c)
            self.block_couplings.append((b_cb, x_c))
        self.schur_lu = dla.lu_factor(schur)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.components is None:
            return self.lu.solve(rhs)
        import scipy.linalg as dla

        border = self.border
        reduced = rhs[border].copy()
        partials = []
        for comp, lu_c, (b_cb, _) in zip(
            self.components, self.block_lus, self.block_couplings
        ):
            y_c = lu_c.solve(rhs[comp])
            partials.append(y_c)
            reduced -= b_cb.T @ y_c
        x = np.empty(self.dim)
        x_b = dla.lu_solve(self.schur_lu, reduced)
        x[border] = x_b
        for comp, y_c, (_, x_c) in zip(self.components, partials, self.block_couplings):
            x[comp] = y_c - x_c @ x_b
        return x


def solve_qp(
    program: TranscribedProgram,
    tol: float = 1e-8,
    max_iter: int = 200,
    verbose: bool = False,
    log_stream=None,
    x0: np.ndarray | None = None,
    border: np.ndarray | None = None,
) -> SolveResult:
    """Solve the transcribed program to KKT residuals <= tol * (1 + |data|).

    ``x0`` optionally overrides the least-squares starting point (it is
    pulled into the strict interior of the bounds first).  ``border`` names
    program variables (flat indices) that couple otherwise independent
    blocks; the KKT factorization then eliminates the blocks first.  With
    ``verbose`` one JSON line per iteration goes to ``log_stream`` (stderr
    by default).
    """
    if tol <= 0:
        raise ParameterError(f"tol must be positive, got {tol}")
    stream = log_stream if log_stream is not None else sys.stderr
    scale = 1.0 + _data_norm(program)
    feas_tol = tol * scale

    # --- eliminate variables fixed by equal bounds --------------------------
    lb_full, ub_full = program.lb, program.ub
    fixed = lb_full == ub_full
    free = ~fixed
    x_fix = lb_full[fixed]
    n_free = int(free.sum())
    csc_q = program.Q.tocsc()
    csc_eq = program.A_eq.tocsc()
    csc_in = program.A_in.tocsc()
    q = csc_q[free][:, free].tocsr()
    c = program.c[free] + np.asarray(csc_q[free][:, fixed] @ x_fix).ravel()
    a_eq = csc_eq[:, free].tocsr()
    b_eq = program.b_eq - csc_eq[:, fixed] @ x_fix
    a_in = csc_in[:, free].tocsr()
    b_in = program.b_in - csc_in[:, fixed] @ x_fix
    lb = lb_full[free]
    ub = ub_full[free]

    def finish(x_r, y, z, w_r, v_r, status, iterations):
        x_full = np.empty(program.n)
        x_full[free] = x_r
        x_full[fixed] = x_fix
        w_full = np.zeros(program.n)
        v_full = np.zeros(program.n)
        w_full[free] = w_r
        v_full[free] = v_r
        # fixed variables absorb their stationarity residual in the bound duals
        if fixed.any():
            resid = (
                program.Q @ x_full
                + program.c
                + program.A_eq.T @ y
                + program.A_in.T @ z
            )[fixed]
            w_full[fixed] = np.maximum(resid, 0.0)
            v_full[fixed] = np.maximum(-resid, 0.0)
        duals = Duals(eq=y, ineq=z, lower=w_full, upper=v_full)
        kkt = kkt_residuals(program, x_full, duals)
        if status is Status.OPTIMAL and kkt.max() > feas_tol * 10.0:
            status = Status.MAX_ITERATIONS
        return SolveResult(
            x=x_full,
            objective=program.objective_value(x_full),
            status=status,
            kkt=kkt,
            iterations=iterations,
            duals=duals,
        )

    # rows that lost every coefficient are either vacuous or infeasible
    eq_nnz = np.diff(a_eq.indptr)
    if np.any((eq_nnz == 0) & (np.abs(b_eq) > feas_tol)):
        return finish(
            np.clip(np.zeros(n_free), lb, ub),
            np.zeros(b_eq.size),
            np.zeros(b_in.size),
            np.zeros(n_free),
            np.zeros(n_free),
            Status.INFEASIBLE,
            0,
        )
    in_nnz = np.diff(a_in.indptr)
    if np.any((in_nnz == 0) & (b_in < -feas_tol)):
        return finish(
            np.clip(np.zeros(n_free), lb, ub),
            np.zeros(b_eq.size),
            np.zeros(b_in.size),
            np.zeros(n_free),
            np.zeros(n_free),
            Status.INFEASIBLE,
            0,
        )
    keep_eq = np.where(eq_nnz > 0)[0]
    keep_in = np.where(in_nnz > 0)[0]
    a_eq_r, b_eq_r = a_eq[keep_eq], b_eq[keep_eq]
    a_in_r, b_in_r = a_in[keep_in], b_in[keep_in]

    if n_free == 0:
        return finish(
            np.zeros(0),
            np.zeros(program.b_eq.size),
            np.zeros(program.b_in.size),
            np.zeros(0),
            np.zeros(0),
            Status.OPTIMAL,
            0,
        )

    m_e, m_i = b_eq_r.size, b_in_r.size
    low_set = np.where(np.isfinite(lb))[0]
    upp_set = np.where(np.isfinite(ub))[0]
    n_l, n_u = low_set.size, upp_set.size
    nc = m_i + n_l + n_u
    delta = 1e-10 * scale

    def assemble(d_x: np.ndarray, slack_scale: np.ndarray):
        diag = sp.diags(d_x + delta)
        blocks = [
            [q + diag, a_eq_r.T, a_in_r.T],
            [a_eq_r, -delta * sp.identity(m_e), None],
            [a_in_r, None, -sp.diags(slack_scale + delta)],
        ]
        return sp.bmat(blocks, format="csc")

    border_aug = None
    if border is not None and len(border):
        full_to_free = -np.ones(program.n, dtype=int)
        full_to_free[free] = np.arange(n_free)
        mapped = full_to_free[np.asarray(border, dtype=int)]
        border_aug = mapped[mapped >= 0]
    factorizer = _KktFactorizer(
        assemble(np.ones(n_free), np.ones(m_i)), border_aug
    )

    def solve_kkt(rx, ry, rz):
        sol = factorizer.solve(np.concatenate([rx, ry, rz]))
        return sol[:n_free], sol[n_free : n_free + m_e], sol[n_free + m_e :]

    # --- starting point ------------------------------------------------------
    if x0 is not None:
        x = np.asarray(x0, dtype=float)[free].copy()
    else:
        factorizer.factor(assemble(np.ones(n_free), np.ones(m_i)))
        x, _, _ = solve_kkt(-c, b_eq_r, b_in_r)
    both = np.isfinite(lb) & np.isfinite(ub)
    margin = np.where(both, np.minimum(1.0, (ub - lb) / 4.0), 1.0)
    x = np.where(np.isfinite(lb), np.maximum(x, lb + margin), x)
    x = np.where(np.isfinite(ub), np.minimum(x, ub - margin), x)

    s = np.maximum(1.0, np.abs(b_in_r - a_in_r @ x)) if m_i else np.zeros(0)
    z = np.ones(m_i)
    g = np.maximum(1.0, np.abs(x[low_set] - lb[low_set]))
    w = np.ones(n_l)
    t = np.maximum(1.0, np.abs(ub[upp_set] - x[upp_set]))
    v = np.ones(n_u)
    y = np.zeros(m_e)

    status = Status.MAX_ITERATIONS
    iteration = 0
    stall = 0
    best_merit = np.inf

    for iteration in range(1, max_iter + 1):
        r_d = q @ x + c + a_eq_r.T @ y + a_in_r.T @ z
        if n_l:
            r_d[low_set] -= w
        if n_u:
            r_d[upp_set] += v
        r_p = a_eq_r @ x - b_eq_r
        r_i = a_in_r @ x + s - b_in_r
        r_l = x[low_set] - g - lb[low_set]
        r_u = x[upp_set] + t - ub[upp_set]

        gap = float(s @ z + g @ w + t @ v)
        mu = gap / nc if nc else 0.0
        comp_max = max(_amax(s * z), _amax(g * w), _amax(t * v)) if nc else 0.0
        primal_res = max(_amax(r_p), _amax(r_i), _amax(r_l), _amax(r_u))
        stat_res = _amax(r_d)
        primal_obj = 0.5 * float(x @ (q @ x)) + float(c @ x)

        if verbose:
            stream.write(
                json.dumps(
                    {
                        "iter": iteration - 1,
                        "mu": mu,
                        "residuals": {
                            "stationarity": stat_res,
                            "primal": primal_res,
                            "complementarity": comp_max,
                        },
                        "primal_objective": primal_obj,
                        "dual_objective": primal_obj - gap,
                    },
                    sort_keys=True,
                )
                + "\n"
            )

        if stat_res <= feas_tol and primal_res <= feas_tol and comp_max <= feas_tol:
            status = Status.OPTIMAL
            break

        # divergence heuristics: a stalled iteration with two of the three
        # residual groups converged identifies which certificate is missing
        def classify_stall() -> Status:
            loose = 1e3 * feas_tol
            if primal_res <= loose and comp_max <= loose and stat_res > loose:
                return Status.UNBOUNDED  # dual infeasibility
            if primal_res > loose and (comp_max <= loose or dual_norm > 1e6 * scale):
                return Status.INFEASIBLE
            return Status.MAX_ITERATIONS

        big = 1e11 * scale
        dual_norm = max(_amax(y), _amax(z), _amax(w), _amax(v))
        if dual_norm > big and primal_res > feas_tol:
            status = Status.INFEASIBLE
            break
        if (_amax(x) > big or primal_obj < -big) and primal_res <= 1e3 * feas_tol:
            status = Status.UNBOUNDED
            break
        merit = max(stat_res, primal_res, comp_max)
        if merit < best_merit * 0.9999:
            best_merit = merit
            stall = 0
        else:
            stall += 1
        if stall >= 20:
            status = classify_stall()
            break

        d_x = np.zeros(n_free)
        if n_l:
            np.add.at(d_x, low_set, w / g)
        if n_u:
            np.add.at(d_x, upp_set, v / t)
        slack_scale = s / z if m_i else np.zeros(0)
        try:
            factorizer.factor(assemble(d_x, slack_scale))
        except RuntimeError as exc:  # singular factorization
            raise SolverError(f"KKT factorization failed: {exc}") from None

        def directions(rc_s, rc_g, rc_t):
            rx = -r_d.copy()
            if n_l:
                rx[low_set] -= (w * r_l + rc_g) / g
            if n_u:
                rx[upp_set] -= (v * r_u - rc_t) / t
            ry = -r_p
            rz = -r_i + (rc_s / z if m_i else np.zeros(0))
            dx, dy, dz = solve_kkt(rx, ry, rz)
            ds = -r_i - a_in_r @ dx if m_i else np.zeros(0)
            dg = dx[low_set] + r_l
            dw = -(rc_g + w * dg) / g if n_l else np.zeros(0)
            dt = -dx[upp_set] - r_u
            dv = -(rc_t + v * dt) / t if n_u else np.zeros(0)
            return dx, dy, dz, ds, dg, dw, dt, dv

        def max_step(vec, dvec):
            neg = dvec < 0
            if not np.any(neg):
                return 1.0
            return float(min(1.0, np.min(-vec[neg] / dvec[neg])))

        # predictor
        dxa, dya, dza, dsa, dga, dwa, dta, dva = directions(s * z, g * w, t * v)
        if nc:
            ap = min(max_step(s, dsa), max_step(g, dga), max_step(t, dta))
            ad = min(max_step(z, dza), max_step(w, dwa), max_step(v, dva))
            mu_aff = (
                (s + ap * dsa) @ (z + ad * dza)
                + (g + ap * dga) @ (w + ad * dwa)
                + (t + ap * dta) @ (v + ad * dva)
            ) / nc
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            dx, dy, dz, ds, dg, dw, dt_, dv = directions(
                s * z + dsa * dza - sigma * mu,
                g * w + dga * dwa - sigma * mu,
                t * v + dta * dva - sigma * mu,
            )
            eta = 0.99995
            alpha_p = eta * min(max_step(s, ds), max_step(g, dg), max_step(t, dt_))
            alpha_d = eta * min(max_step(z, dz), max_step(w, dw), max_step(v, dv))
        else:
            dx, dy, dz, ds, dg, dw, dt_, dv = dxa, dya, dza, dsa, dga, dwa, dta, dva
            alpha_p = alpha_d = 1.0

        x = x + alpha_p * dx
        s = s + alpha_p * ds
        g = g + alpha_p * dg
        t = t + alpha_p * dt_
        y = y + alpha_d * dy
        z = z + alpha_d * dz
        w = w + alpha_d * dw
        v = v + alpha_d * dv

    # map multipliers back to full-length vectors
    y_full = np.zeros(program.b_eq.size)
    y_full[keep_eq] = y
    z_full = np.zeros(program.b_in.size)
    z_full[keep_in] = z
    w_r = np.zeros(n_free)
    w_r[low_set] = w
    v_r = np.zeros(n_free)
    v_r[upp_set] = v
    return finish(x, y_full, z_full, w_r, v_r, status, iteration)


# ---------------------------------------------------------------------------
# Scalar search and scalarization sweeps
# ---------------------------------------------------------------------------

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section(
    oracle: Callable[[float], float], lo: float, hi: float, tol: float
) -> tuple[float, float]:
    """Golden-section minimization of a unimodal scalar oracle on [lo, hi].

    Shrinks the bracket to width <= tol and returns its midpoint and the
    oracle value there.
    """
    if not lo < hi:
        raise InputError(f"need lo < hi, got [{lo}, {hi}]")
    if tol <= 0:
        raise ParameterError(f"tol must be positive, got {tol}")
    a, b = float(lo), float(hi)
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = oracle(c), oracle(d)
    while (b - a) > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = oracle(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = oracle(d)
    mid = (a + b) / 2.0
    return mid, oracle(mid)


@dataclass(frozen=True)
class SweepPoint:
    weight: float
    objective: float | None
    part_values: dict
    result: SolveResult | None
    error: str | None = None


def multiplier_sweep(
    build: Callable[[float], TranscribedProgram],
    lambdas: Sequence[float],
    tol: float = 1e-8,
    max_iter: int = 200,
) -> list[SweepPoint]:
    """Solve build(lam) for each weight and report named objective parts.

    Solver failures at one weight are recorded and the sweep continues.
    """
    points = []
    for lam in lambdas:
        if lam < 0:
            raise ParameterError(f"scalarization weights must be >= 0, got {lam}")
        try:
            prog = build(float(lam))
            res = solve_qp(prog, tol=tol, max_iter=max_iter)
            if res.status is not Status.OPTIMAL:
                points.append(
                    SweepPoint(
                        weight=float(lam),
                        objective=None,
                        part_values={},
                        result=res,
                        error=f"solver status {res.status.value}",
                    )
                )
                continue
            values = {name: prog.part_value(name, res.x) for name in prog.parts}
            points.append(
                SweepPoint(
                    weight=float(lam),
                    objective=res.objective,
                    part_values=values,
                    result=res,
                )
            )
        except SolverError as exc:
            points.append(
                SweepPoint(
                    weight=float(lam),
                    objective=None,
                    part_values={},
                    result=None,
                    error=str(exc),
                )
            )
    return points
