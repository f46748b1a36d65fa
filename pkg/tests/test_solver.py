"""Interior-point solver tests against brute-force oracles."""

from itertools import combinations

import numpy as np
import pytest

from rfopt.errors import InputError, ParameterError
from rfopt.solver import (
    Duals,
    Status,
    golden_section,
    kkt_residuals,
    multiplier_sweep,
    solve_qp,
)
from rfopt.transcription import ProgramBuilder, VariableLayout


def qp_bound_example():
    """min x^2 s.t. x >= 1."""
    layout = VariableLayout().with_block("x", ())
    pb = ProgramBuilder(layout)
    pb.add_quadratic(0, 0, 1.0)
    pb.set_bounds(0, 1.0, np.inf)
    return pb.build()


def simplex_lp(c):
    layout = VariableLayout().with_block("x", (len(c),))
    pb = ProgramBuilder(layout)
    for i, ci in enumerate(c):
        pb.add_linear(i, ci)
        pb.set_bounds(i, 0.0, np.inf)
    pb.add_eq(list(range(len(c))), [1.0] * len(c), 1.0)
    return pb.build()


def box_lp(c, A, b, lo, hi):
    n = len(c)
    layout = VariableLayout().with_block("x", (n,))
    pb = ProgramBuilder(layout)
    for i in range(n):
        pb.add_linear(i, c[i])
        pb.set_bounds(i, lo[i], hi[i])
    for i in range(A.shape[0]):
        pb.add_ineq(list(range(n)), list(A[i]), b[i])
    return pb.build()


def brute_force_lp(c, A, b, lo, hi):
    """Enumerate basic points of {Ax <= b, lo <= x <= hi}; None if infeasible."""
    n = len(c)
    rows = [(*A[i], b[i]) for i in range(A.shape[0])]
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        rows.append((*(-e), -lo[j]))
        rows.append((*e, hi[j]))
    rows = np.array(rows)
    best = None
    for comb in combinations(range(len(rows)), n):
        mat = rows[list(comb), :n]
        rhs = rows[list(comb), n]
        try:
            x = np.linalg.solve(mat, rhs)
        except np.linalg.LinAlgError:
            continue
        if (
            np.all(A @ x <= b + 1e-9)
            and np.all(x >= np.asarray(lo) - 1e-9)
            and np.all(x <= np.asarray(hi) + 1e-9)
        ):
            val = float(np.dot(c, x))
            if best is None or val < best:
                best = val
    return best


class TestSolveQp:
    def test_bound_qp(self):
        res = solve_qp(qp_bound_example())
        assert res.status is Status.OPTIMAL
        assert res.x[0] == pytest.approx(1.0, abs=1e-6)
        assert res.objective == pytest.approx(1.0, abs=1e-6)
        assert res.kkt.max() <= 1e-8 * (1 + 1)

    def test_simplex_vertex(self):
        res = solve_qp(simplex_lp([3.0, 1.0, 2.0]))
        assert res.status is Status.OPTIMAL
        assert res.objective == pytest.approx(1.0, abs=1e-7)
        np.testing.assert_allclose(res.x, [0.0, 1.0, 0.0], atol=1e-6)

    def test_lp_corpus_matches_vertex_enumeration(self):
        gen = np.random.default_rng(0)
        checked = 0
        for _ in range(60):
            n = int(gen.integers(2, 7))
            m = int(gen.integers(1, 9))
            c = gen.normal(size=n)
            a = gen.normal(size=(m, n))
            b = gen.normal(size=m) + 1.0
            lo = np.full(n, -1.0)
            hi = np.full(n, 2.0)
            oracle = brute_force_lp(c, a, b, lo, hi)
            res = solve_qp(box_lp(c, a, b, lo, hi))
            scale = 1 + max(abs(a).max(), abs(b).max(), abs(c).max(), 2.0)
            if oracle is None:
                assert res.status is Status.INFEASIBLE
            else:
                assert res.status is Status.OPTIMAL
                assert res.objective == pytest.approx(oracle, abs=1e-6)
                assert res.kkt.max() <= 1e-8 * scale
                checked += 1
        assert checked >= 40  # corpus should be mostly feasible

    def test_strictly_convex_qp_unique_from_two_starts(self):
        gen = np.random.default_rng(4)
        for _ in range(10):
            n = int(gen.integers(2, 6))
            root = gen.normal(size=(n, n))
            qm = root @ root.T + np.eye(n)
            c = gen.normal(size=n)
            layout = VariableLayout().with_block("x", (n,))
            pb = ProgramBuilder(layout)
            for i in range(n):
                pb.add_linear(i, c[i])
                pb.set_bounds(i, -2.0, 2.0)
                pb.add_quadratic(i, i, qm[i, i] / 2.0)
                for j in range(i):
                    pb.add_quadratic(i, j, qm[i, j])
            prog = pb.build()
            first = solve_qp(prog)
            second = solve_qp(prog, x0=np.full(n, 1.9))
            assert first.status is Status.OPTIMAL and second.status is Status.OPTIMAL
            assert np.max(np.abs(first.x - second.x)) <= 1e-6

    def test_weak_duality_along_iterates(self):
        import io
        import json

        buf = io.StringIO()
        res = solve_qp(simplex_lp([3.0, 1.0, 2.0]), verbose=True, log_stream=buf)
        assert res.status is Status.OPTIMAL
        lines = [json.loads(line) for line in buf.getvalue().splitlines()]
        assert len(lines) >= 2
        for entry in lines:
            assert entry["primal_objective"] >= entry["dual_objective"] - 1e-8

    def test_infeasible_detection(self):
        layout = VariableLayout().with_block("x", ())
        pb = ProgramBuilder(layout)
        pb.add_linear(0, 1.0)
        pb.add_ineq([0], [1.0], -1.0)  # x <= -1
        pb.set_bounds(0, 1.0, np.inf)  # x >= 1
        assert solve_qp(pb.build()).status is Status.INFEASIBLE

    def test_unbounded_detection(self):
        layout = VariableLayout().with_block("x", ())
        pb = ProgramBuilder(layout)
        pb.add_linear(0, -1.0)
        pb.set_bounds(0, 0.0, np.inf)
        assert solve_qp(pb.build()).status is Status.UNBOUNDED

    def test_fixed_variables_are_eliminated(self):
        layout = VariableLayout().with_block("x", (2,))
        pb = ProgramBuilder(layout)
        pb.add_quadratic(0, 0, 1.0)
        pb.add_quadratic(1, 1, 1.0)
        pb.add_linear(1, -2.0)
        pb.set_bounds(0, 3.0, 3.0)  # pinned
        res = solve_qp(pb.build())
        assert res.status is Status.OPTIMAL
        assert res.x[0] == 3.0
        assert res.x[1] == pytest.approx(1.0, abs=1e-7)


class TestKktResiduals:
    def test_optimal_point_of_bound_qp(self):
        prog = qp_bound_example()
        duals = Duals(
            eq=np.zeros(0),
            ineq=np.zeros(0),
            lower=np.array([2.0]),
            upper=np.array([0.0]),
        )
        res = kkt_residuals(prog, np.array([1.0]), duals)
        assert res.max() <= 1e-12

    def test_perturbed_point(self):
        prog = qp_bound_example()
        duals = Duals(
            eq=np.zeros(0),
            ineq=np.zeros(0),
            lower=np.array([2.0]),
            upper=np.array([0.0]),
        )
        res = kkt_residuals(prog, np.array([1.001]), duals)
        assert res.stationarity == pytest.approx(2e-3, rel=1e-6)

    def test_infeasible_point_reports_violation(self):
        prog = qp_bound_example()
        duals = Duals(
            eq=np.zeros(0),
            ineq=np.zeros(0),
            lower=np.array([0.0]),
            upper=np.array([0.0]),
        )
        res = kkt_residuals(prog, np.array([0.5]), duals)
        assert res.primal == pytest.approx(0.5)

    def test_shape_mismatch(self):
        prog = qp_bound_example()
        duals = Duals(eq=np.zeros(1), ineq=np.zeros(0), lower=np.zeros(1), upper=np.zeros(1))
        with pytest.raises(InputError):
            kkt_residuals(prog, np.array([1.0]), duals)


class TestGoldenSection:
    def test_parabola(self):
        xm, val = golden_section(lambda x: (x - 2.0) ** 2, 0.0, 5.0, 1e-6)
        assert xm == pytest.approx(2.0, abs=1e-6)
        assert val == pytest.approx(0.0, abs=1e-10)

    def test_monotone_returns_endpoint_region(self):
        xm, _ = golden_section(lambda x: x, 0.0, 1.0, 1e-6)
        assert xm == pytest.approx(0.0, abs=1e-5)

    def test_kink_matches_dense_scan(self):
        xm, _ = golden_section(lambda x: abs(x - 0.3), 0.0, 1.0, 1e-7)
        dense = np.linspace(0.0, 1.0, 2_000_001)
        oracle = dense[np.argmin(np.abs(dense - 0.3))]
        assert xm == pytest.approx(oracle, abs=1e-6)

    def test_bad_bracket(self):
        with pytest.raises(InputError):
            golden_section(lambda x: x, 1.0, 0.0, 1e-6)


class TestMultiplierSweep:
    @staticmethod
    def _toy_build(lam):
        # two competing quadratic parts over a single variable in [0, 1]:
        # part A = x^2 (wants x = 0), part B = (x - 1)^2 (wants x = 1);
        # objective A + lam * B
        from rfopt.transcription import ObjectivePart
        import scipy.sparse as sp

        layout = VariableLayout().with_block("x", ())
        pb = ProgramBuilder(layout)
        pb.add_quadratic(0, 0, 1.0 + lam)
        pb.add_linear(0, -2.0 * lam)
        pb.add_constant(lam)
        pb.set_bounds(0, 0.0, 1.0)
        q = sp.csr_matrix(np.array([[2.0]]))
        pb.add_part("a", ObjectivePart(quad=q, lin=None, const=0.0))
        pb.add_part("b", ObjectivePart(quad=q, lin=np.array([-2.0]), const=1.0))
        return pb.build()

    def test_limits_and_monotonicity(self):
        lambdas = [0.0, 0.5, 1.0, 4.0, 1e6]
        points = multiplier_sweep(self._toy_build, lambdas)
        assert all(p.error is None for p in points)
        a_vals = [p.part_values["a"] for p in points]
        b_vals = [p.part_values["b"] for p in points]
        # lam = 0 minimizes part A alone; huge lam drives part B to its minimum
        assert a_vals[0] == pytest.approx(0.0, abs=1e-6)
        assert b_vals[-1] == pytest.approx(0.0, abs=1e-4)
        for earlier, later in zip(b_vals, b_vals[1:]):
            assert later <= earlier + 1e-8
        for earlier, later in zip(a_vals, a_vals[1:]):
            assert later >= earlier - 1e-8

    def test_negative_weight_rejected(self):
        with pytest.raises(ParameterError):
            multiplier_sweep(self._toy_build, [-1.0])
