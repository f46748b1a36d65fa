"""Direct transcription of sampled field-optimization problems.

Grids and sample sets turn function-valued variables into finite blocks of
decision variables; quadrature weights and finite-difference stencils turn
integrals and derivatives into sparse linear algebra; the big-M construction
turns a per-sample excursion indicator into a relaxed-binary variable.  The
result is a :class:`TranscribedProgram`: one sparse convex QP/LP.

Variable blocks indexed ``(i, k)`` are laid out row-major (grid point major,
sample minor), matching the row-major flattening of :class:`GridDomain`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from . import rng
from .errors import (
    InputError,
    InvariantViolationError,
    ParameterError,
    UnsupportedDimensionError,
)
from .grf import GridDomain

__all__ = [
    "Block",
    "VariableLayout",
    "ObjectivePart",
    "TranscribedProgram",
    "ProgramBuilder",
    "SdePath",
    "quadrature_weights",
    "derivative_rows",
    "euler_maruyama",
    "expectation_objective",
    "big_m_excursion",
    "round_binaries",
    "program_to_triplets",
]


# ---------------------------------------------------------------------------
# Variable layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Block:
    name: str
    shape: tuple[int, ...]  # () for a scalar
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1


@dataclass(frozen=True)
class VariableLayout:
    """Named, non-overlapping blocks of a flat decision vector."""

    blocks: tuple[Block, ...] = ()

    def __post_init__(self):
        offset = 0
        names = set()
        for b in self.blocks:
            if b.name in names:
                raise InputError(f"duplicate block name {b.name!r}")
            names.add(b.name)
            if b.offset != offset:
                raise InputError(f"block {b.name!r} offset {b.offset} != expected {offset}")
            offset += b.size

    @property
    def size(self) -> int:
        return sum(b.size for b in self.blocks)

    def block(self, name: str) -> Block:
        for b in self.blocks:
            if b.name == name:
                return b
        raise InputError(f"unknown block {name!r}")

    def with_block(self, name: str, shape: tuple[int, ...]) -> "VariableLayout":
        return VariableLayout(
            blocks=self.blocks + (Block(name=name, shape=tuple(shape), offset=self.size),)
        )

    def index(self, name: str, *multi: int) -> int:
        """Flat index of one element of a block (row-major within the block)."""
        b = self.block(name)
        if len(multi) != len(b.shape):
            raise InputError(
                f"block {name!r} has {len(b.shape)} index dimensions, got {len(multi)}"
            )
        if not b.shape:
            return b.offset
        return b.offset + int(np.ravel_multi_index(multi, b.shape))

    def indices(self, name: str) -> np.ndarray:
        """All flat indices of a block, in row-major order."""
        b = self.block(name)
        return np.arange(b.offset, b.offset + b.size)


# ---------------------------------------------------------------------------
# Transcribed program
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObjectivePart:
    """A named quadratic-plus-linear piece of the objective, kept separately
    so trade-off components can be read off a solution."""

    quad: sp.csr_matrix | None  # contributes 0.5 x' quad x
    lin: np.ndarray | None
    const: float = 0.0

    def value(self, x: np.ndarray) -> float:
        out = self.const
        if self.quad is not None:
            out += 0.5 * float(x @ (self.quad @ x))
        if self.lin is not None:
            out += float(self.lin @ x)
        return out


@dataclass(frozen=True)
class TranscribedProgram:
    """min 0.5 x'Qx + c'x + const  s.t.  A_eq x = b_eq, A_in x <= b_in, lb <= x <= ub.

    ``relaxed_binary`` lists variables relaxed from {0,1} to [0,1];
    ``big_M`` records the constant used in their coupling constraints.
    """

    layout: VariableLayout
    Q: sp.csr_matrix
    c: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_in: sp.csr_matrix
    b_in: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    relaxed_binary: tuple[int, ...] = ()
    big_M: float | None = None
    obj_const: float = 0.0
    parts: Mapping[str, ObjectivePart] = field(default_factory=dict)

    def __post_init__(self):
        n = self.layout.size
        if self.Q.shape != (n, n):
            raise InputError(f"Q has shape {self.Q.shape}, expected {(n, n)}")
        asym = abs(self.Q - self.Q.T)
        if asym.nnz and asym.max() > 1e-10 * max(1.0, abs(self.Q).max()):
            raise InputError("Q must be symmetric")
        for mat, vec, tag in ((self.A_eq, self.b_eq, "eq"), (self.A_in, self.b_in, "in")):
            if mat.shape[1] != n or mat.shape[0] != vec.shape[0]:
                raise InputError(f"A_{tag}/b_{tag} dimensions inconsistent with layout")
        if self.c.shape != (n,) or self.lb.shape != (n,) or self.ub.shape != (n,):
            raise InputError("vector lengths inconsistent with layout")
        if np.any(self.lb > self.ub):
            raise InputError("lb exceeds ub")
        if any(j < 0 or j >= n for j in self.relaxed_binary):
            raise InputError("relaxed_binary index out of range")

    @property
    def n(self) -> int:
        return self.layout.size

    def objective_value(self, x: np.ndarray) -> float:
        return 0.5 * float(x @ (self.Q @ x)) + float(self.c @ x) + self.obj_const

    def part_value(self, name: str, x: np.ndarray) -> float:
        if name not in self.parts:
            raise InputError(f"unknown objective part {name!r}")
        return self.parts[name].value(x)


class ProgramBuilder:
    """Accumulates triplets for one :class:`TranscribedProgram`."""

    def __init__(self, layout: VariableLayout):
        self.layout = layout
        n = layout.size
        self._q = ([], [], [])
        self._c = np.zeros(n)
        self._const = 0.0
        self._eq = ([], [], [], [])  # rows, cols, vals, rhs
        self._in = ([], [], [], [])
        self.lb = np.full(n, -np.inf)
        self.ub = np.full(n, np.inf)
        self._relaxed: list[int] = []
        self._big_m: float | None = None
        self._parts: dict[str, ObjectivePart] = {}

    def add_quadratic(self, i: int, j: int, coef: float) -> None:
        """Add coef * x_i * x_j to the objective (coef * x_i^2 when i == j)."""
        if i == j:
            self._q[0].append(i)
            self._q[1].append(i)
            self._q[2].append(2.0 * coef)
        else:
            self._q[0].extend((i, j))
            self._q[1].extend((j, i))
            self._q[2].extend((coef, coef))

    def add_linear(self, i: int, coef: float) -> None:
        self._c[i] += coef

    def add_constant(self, value: float) -> None:
        self._const += value

    def add_eq(self, cols, coefs, rhs: float) -> None:
        row = len(self._eq[3])
        self._eq[0].extend([row] * len(cols))
        self._eq[1].extend(cols)
        self._eq[2].extend(coefs)
        self._eq[3].append(rhs)

    def add_ineq(self, cols, coefs, rhs: float) -> None:
        """Row sum(coefs * x[cols]) <= rhs."""
        row = len(self._in[3])
        self._in[0].extend([row] * len(cols))
        self._in[1].extend(cols)
        self._in[2].extend(coefs)
        self._in[3].append(rhs)

    def set_bounds(self, i: int, lo: float = -np.inf, hi: float = np.inf) -> None:
        self.lb[i] = lo
        self.ub[i] = hi

    def mark_relaxed_binary(self, i: int) -> None:
        self._relaxed.append(i)

    def set_big_m(self, value: float) -> None:
        self._big_m = value

    def add_part(self, name: str, part: ObjectivePart) -> None:
        self._parts[name] = part

    def build(self) -> TranscribedProgram:
        n = self.layout.size
        q = sp.coo_matrix((self._q[2], (self._q[0], self._q[1])), shape=(n, n)).tocsr()
        a_eq = sp.coo_matrix(
            (self._eq[2], (self._eq[0], self._eq[1])), shape=(len(self._eq[3]), n)
        ).tocsr()
        a_in = sp.coo_matrix(
            (self._in[2], (self._in[0], self._in[1])), shape=(len(self._in[3]), n)
        ).tocsr()
        return TranscribedProgram(
            layout=self.layout,
            Q=q,
            c=self._c.copy(),
            A_eq=a_eq,
            b_eq=np.array(self._eq[3], dtype=float),
            A_in=a_in,
            b_in=np.array(self._in[3], dtype=float),
            lb=self.lb.copy(),
            ub=self.ub.copy(),
            relaxed_binary=tuple(self._relaxed),
            big_M=self._big_m,
            obj_const=self._const,
            parts=dict(self._parts),
        )


# ---------------------------------------------------------------------------
# Quadrature and stencils
# ---------------------------------------------------------------------------

def quadrature_weights(points: np.ndarray) -> np.ndarray:
    """Composite trapezoid weights on a 1D axis; weights sum to its length."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 1 or points.size < 2:
        raise InputError("quadrature needs at least two 1D points")
    if np.any(np.diff(points) <= 0):
        raise InputError("quadrature points must be strictly increasing")
    w = np.zeros_like(points)
    gaps = np.diff(points)
    w[:-1] += gaps / 2.0
    w[1:] += gaps / 2.0
    return w


def derivative_rows(grid: GridDomain, scheme: str) -> tuple[sp.csr_matrix, np.ndarray]:
    """Sparse stencil matrix plus the flat node index each row belongs to.

    ``backward_euler_time``: 1D grid; row for node i encodes
    (y[i] - y[i-1]) / (t_i - t_{i-1}) for i = 1..N-1.

    ``central_laplacian_2d``: 2D grid with one uniform spacing h on both
    axes; row for each interior node encodes the 5-point stencil
    (y_E + y_W + y_N + y_S - 4 y_C) / h^2.
    """
    if scheme == "backward_euler_time":
        if grid.ndim != 1:
            raise UnsupportedDimensionError("backward Euler rows need a 1D grid")
        t = grid.axis_points(0)
        if t.size < 2:
            raise InputError("need at least two time points")
        n = t.size
        rows, cols, vals = [], [], []
        for i in range(1, n):
            dt = t[i] - t[i - 1]
            rows.extend((i - 1, i - 1))
            cols.extend((i - 1, i))
            vals.extend((-1.0 / dt, 1.0 / dt))
        mat = sp.coo_matrix((vals, (rows, cols)), shape=(n - 1, n)).tocsr()
        return mat, np.arange(1, n)

    if scheme == "central_laplacian_2d":
        if grid.ndim != 2:
            raise UnsupportedDimensionError("the 5-point stencil needs a 2D grid")
        n1, n2 = grid.shape
        if n1 < 3 or n2 < 3:
            raise InputError("laplacian needs at least 3 points per axis")
        h1 = grid.spacing(0)
        h2 = grid.spacing(1)
        if abs(h1 - h2) > 1e-12 * max(h1, h2):
            raise UnsupportedDimensionError(
                f"5-point stencil requires one uniform spacing, got {h1} and {h2}"
            )
        h2inv = 1.0 / (h1 * h1)
        rows, cols, vals = [], [], []
        nodes = []
        row = 0
        for a in range(1, n1 - 1):
            for b in range(1, n2 - 1):
                center = a * n2 + b
                nodes.append(center)
                for node, coef in (
                    (center, -4.0 * h2inv),
                    (center - n2, h2inv),
                    (center + n2, h2inv),
                    (center - 1, h2inv),
                    (center + 1, h2inv),
                ):
                    rows.append(row)
                    cols.append(node)
                    vals.append(coef)
                row += 1
        mat = sp.coo_matrix((vals, (rows, cols)), shape=(row, grid.size)).tocsr()
        return mat, np.array(nodes)

    raise InputError(f"unknown derivative scheme {scheme!r}")


# ---------------------------------------------------------------------------
# Path simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SdePath:
    """Euler-Maruyama trajectories: one row per path over a shared time grid."""

    times: np.ndarray
    values: np.ndarray  # (K, T)
    seed: int

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if np.any(np.diff(times) <= 0):
            raise InputError("times must be strictly increasing")
        if values.ndim != 2 or values.shape[1] != times.size:
            raise InputError("values must be (K, T) matching the time grid")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)


def euler_maruyama(
    drift: Callable[[np.ndarray, float], np.ndarray],
    noise_scale: Callable[[float], float] | float,
    y0: float | np.ndarray,
    times: np.ndarray,
    k: int,
    seed: int,
) -> SdePath:
    """Simulate y' = drift(y, t) plus noise_scale(t) white noise, k paths.

    Each step adds drift(y, t_i) dt + h(t_i) dW with dW ~ N(0, dt) drawn from
    the per-path stream (seed, path), so the scheme never peeks ahead and the
    ensemble is reproducible independent of scheduling.  With noise_scale
    identically zero the update is bit-identical to explicit Euler.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
        raise InputError("times must be a strictly increasing 1D grid")
    if k < 1:
        raise InputError(f"path count must be >= 1, got {k}")
    h = noise_scale if callable(noise_scale) else (lambda _t, _v=float(noise_scale): _v)
    steps = times.size - 1
    increments = np.empty((k, steps))
    for path in range(k):
        increments[path] = rng.standard_normals(seed, path, steps)
    values = np.empty((k, times.size))
    values[:, 0] = np.broadcast_to(np.asarray(y0, dtype=float), (k,))
    y = values[:, 0].copy()
    for i in range(steps):
        dt = times[i + 1] - times[i]
        y = y + np.asarray(drift(y, times[i]), dtype=float) * dt + h(times[i]) * (
            np.sqrt(dt) * increments[:, i]
        )
        values[:, i + 1] = y
    return SdePath(times=times, values=values, seed=seed)


# ---------------------------------------------------------------------------
# Objective assembly
# ---------------------------------------------------------------------------

def expectation_objective(
    layout: VariableLayout,
    block: str,
    weights: np.ndarray,
    n_samples: int,
    linear: np.ndarray | None = None,
    target: float | np.ndarray | None = None,
) -> tuple[sp.csr_matrix, np.ndarray, float]:
    """Sample-averaged quadrature objective over an (i, k)-indexed block.

    With ``linear`` (shape (N, K) or (N,)): contributes
    (1/K) sum_k sum_i w_i linear[i,k] x_{ik} to the linear term.  With
    ``target`` (scalar or (N,)): contributes the squared tracking error
    (1/K) sum_k sum_i w_i (x_{ik} - target_i)^2, split into quadratic,
    linear, and constant pieces.  Returns (Q, c, const) sized to the layout.
    """
    b = layout.block(block)
    if len(b.shape) != 2:
        raise InputError(f"block {block!r} must be indexed (grid point, sample)")
    n_points, k = b.shape
    if k != n_samples:
        raise InputError(f"block {block!r} has {k} samples, caller said {n_samples}")
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (n_points,):
        raise InputError(f"weights shape {weights.shape} != ({n_points},)")
    if (linear is None) == (target is None):
        raise InputError("exactly one of linear= or target= is required")

    n = layout.size
    c = np.zeros(n)
    const = 0.0
    rows, vals = [], []
    idx = layout.indices(block).reshape(n_points, k)
    if linear is not None:
        linear = np.asarray(linear, dtype=float)
        if linear.ndim == 1:
            linear = np.broadcast_to(linear[:, None], (n_points, k))
        if linear.shape != (n_points, k):
            raise InputError(f"linear costs shape {linear.shape} != ({n_points}, {k})")
        coef = weights[:, None] * linear / k
        c[idx.ravel()] += coef.ravel()
        q = sp.csr_matrix((n, n))
        return q, c, const

    target_arr = np.broadcast_to(np.asarray(target, dtype=float), (n_points,))
    for i in range(n_points):
        w = weights[i] / k
        for kk in range(k):
            j = idx[i, kk]
            rows.append(j)
            vals.append(2.0 * w)  # 0.5 x'Qx convention: Q_jj = 2w gives w x^2
            c[j] += -2.0 * w * target_arr[i]
            const += w * target_arr[i] ** 2
    q = sp.coo_matrix((vals, (rows, rows)), shape=(n, n)).tocsr()
    return q, c, const


# ---------------------------------------------------------------------------
# Excursion reformulation
# ---------------------------------------------------------------------------

def big_m_excursion(
    program: TranscribedProgram,
    monitored_block: str,
    u: float,
    big_m: float | None = None,
    probability_weight: float = 0.0,
) -> TranscribedProgram:
    """Couple a per-sample peak and a relaxed exceedance indicator to a block.

    Adds blocks ``<name>_peak`` (K,) with peak_k >= y_{ik} for every grid
    point i, and ``<name>_exceed`` (K,) in [0, 1] with
    peak_k - u <= exceed_k * M.  The sample-average exceedance
    (1/K) sum_k exceed_k is registered as objective part
    ``"excursion_probability"`` and added to the objective with weight
    ``probability_weight``.  When ``big_m`` is omitted it defaults to
    (finite upper bound of the block) - u.
    """
    block = program.layout.block(monitored_block)  # raises for unknown names
    if len(block.shape) != 2:
        raise InputError(f"block {monitored_block!r} must be indexed (grid point, sample)")
    n_points, k = block.shape
    if big_m is None:
        ub_max = float(np.max(program.ub[program.layout.indices(monitored_block)]))
        if not np.isfinite(ub_max):
            raise ParameterError(
                "big_m must be given when the monitored block has no finite upper bound"
            )
        big_m = ub_max - u
    if not big_m > 0:
        raise ParameterError(f"big_m must be positive, got {big_m}")

    layout = program.layout.with_block(f"{monitored_block}_peak", (k,))
    layout = layout.with_block(f"{monitored_block}_exceed", (k,))
    n_old, n_new = program.n, layout.size

    def widen(mat: sp.csr_matrix) -> sp.csr_matrix:
        return sp.hstack(
            [mat, sp.csr_matrix((mat.shape[0], n_new - n_old))], format="csr"
        )

    peak0 = layout.block(f"{monitored_block}_peak").offset
    exceed0 = layout.block(f"{monitored_block}_exceed").offset
    rows, cols, vals, rhs = [], [], [], []
    row = 0
    src = layout.indices(monitored_block).reshape(n_points, k)
    for kk in range(k):
        for i in range(n_points):
            # y_{ik} - peak_k <= 0
            rows.extend((row, row))
            cols.extend((int(src[i, kk]), peak0 + kk))
            vals.extend((1.0, -1.0))
            rhs.append(0.0)
            row += 1
        # peak_k - M exceed_k <= u
        rows.extend((row, row))
        cols.extend((peak0 + kk, exceed0 + kk))
        vals.extend((1.0, -float(big_m)))
        rhs.append(float(u))
        row += 1
    extra = sp.coo_matrix((vals, (rows, cols)), shape=(row, n_new)).tocsr()

    lb = np.concatenate([program.lb, np.full(k, -np.inf), np.zeros(k)])
    ub = np.concatenate([program.ub, np.full(k, np.inf), np.ones(k)])
    c = np.concatenate([program.c, np.zeros(2 * k)])
    prob_lin = np.zeros(n_new)
    prob_lin[exceed0 : exceed0 + k] = 1.0 / k
    if probability_weight != 0.0:
        c += probability_weight * prob_lin

    def widen_square(mat: sp.csr_matrix) -> sp.csr_matrix:
        pad = n_new - n_old
        return sp.bmat(
            [[mat, None], [None, sp.csr_matrix((pad, pad))]], format="csr"
        )

    q = widen_square(program.Q)
    widened_parts = {}
    for name, part in program.parts.items():
        quad = None if part.quad is None else widen_square(part.quad)
        lin = None if part.lin is None else np.concatenate([part.lin, np.zeros(2 * k)])
        widened_parts[name] = ObjectivePart(quad=quad, lin=lin, const=part.const)
    widened_parts["excursion_probability"] = ObjectivePart(quad=None, lin=prob_lin)

    return TranscribedProgram(
        layout=layout,
        Q=q,
        c=c,
        A_eq=widen(program.A_eq),
        b_eq=program.b_eq.copy(),
        A_in=sp.vstack([widen(program.A_in), extra], format="csr"),
        b_in=np.concatenate([program.b_in, np.array(rhs)]),
        lb=lb,
        ub=ub,
        relaxed_binary=program.relaxed_binary
        + tuple(range(exceed0, exceed0 + k)),
        big_M=float(big_m),
        obj_const=program.obj_const,
        parts=widened_parts,
    )


def round_binaries(
    solution: np.ndarray, relaxed_binary, tol: float = 1e-6
) -> np.ndarray:
    """Round relaxed indicator entries up: any value above tol becomes 1.

    Rounding up preserves feasibility of peak - u <= exceed * M.  Entries
    outside [-tol, 1 + tol] mean the input never was a relaxed binary.
    """
    out = np.array(solution, dtype=float, copy=True)
    for j in relaxed_binary:
        v = out[j]
        if v < -tol or v > 1.0 + tol:
            raise InvariantViolationError(
                f"entry {j} = {v} outside [{-tol}, {1 + tol}]"
            )
        out[j] = 1.0 if v > tol else 0.0
    return out


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _sparse_triplets(mat: sp.csr_matrix) -> dict:
    coo = mat.tocoo()
    return {
        "shape": list(coo.shape),
        "rows": coo.row.tolist(),
        "cols": coo.col.tolist(),
        "values": coo.data.tolist(),
    }


def program_to_triplets(program: TranscribedProgram) -> dict:
    """JSON-serializable sparse-triplet dump for solver-independent debugging."""
    def vec(v):
        return [None if not np.isfinite(x) else float(x) for x in v]

    return {
        "n": program.n,
        "blocks": [
            {"name": b.name, "shape": list(b.shape), "offset": b.offset}
            for b in program.layout.blocks
        ],
        "Q": _sparse_triplets(program.Q),
        "c": program.c.tolist(),
        "A_eq": _sparse_triplets(program.A_eq),
        "b_eq": program.b_eq.tolist(),
        "A_in": _sparse_triplets(program.A_in),
        "b_in": program.b_in.tolist(),
        "lb": vec(program.lb),
        "ub": vec(program.ub),
        "relaxed_binary": list(program.relaxed_binary),
        "big_M": program.big_M,
        "obj_const": program.obj_const,
    }
