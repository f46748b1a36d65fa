"""Excursion-set, upcrossing, Euler-characteristic, and tail-measure tests.

The 2D Euler characteristic is checked against a brute-force labeling
oracle: 4-connected flood fill for components, 8-connected flood fill of the
inactive complement for holes (enclosed components that never reach the grid
border).
"""

import math

import numpy as np
import pytest

from rfopt.errors import InputError, ParameterError, UnsupportedDimensionError
from rfopt.grf import FieldEnsemble, GridDomain, sample_field
from rfopt.kernels import Constant, Family, Kernel
from rfopt.measures import (
    count_upcrossings,
    cvar_field,
    euler_characteristic,
    excursion_mask,
    mc_excursion_probability,
    mc_expected_ec,
    rice_expected_upcrossings,
)


def line(n):
    return GridDomain(axes=((0.0, 1.0, n),))


def grid2d(n1, n2):
    return GridDomain(axes=((0.0, 1.0, n1), (0.0, 1.0, n2)))


def mask_from_array(arr):
    arr = np.asarray(arr, dtype=bool)
    if arr.ndim == 1:
        dom = line(arr.size)
    else:
        dom = grid2d(*arr.shape)
    return excursion_mask(arr.astype(float).ravel(), dom, 0.5)


def components_minus_holes(arr):
    """Flood-fill oracle: 4-connected active components minus enclosed
    8-connected inactive components."""
    arr = np.asarray(arr, dtype=bool)
    n1, n2 = arr.shape

    def flood(start, active_value, diagonal, visited):
        stack = [start]
        visited[start] = True
        cells = [start]
        while stack:
            i, j = stack.pop()
            steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
            if diagonal:
                steps += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
            for di, dj in steps:
                a, b = i + di, j + dj
                if 0 <= a < n1 and 0 <= b < n2 and not visited[a, b] and arr[a, b] == active_value:
                    visited[a, b] = True
                    stack.append((a, b))
                    cells.append((a, b))
        return cells

    visited = np.zeros_like(arr)
    components = 0
    for i in range(n1):
        for j in range(n2):
            if arr[i, j] and not visited[i, j]:
                components += 1
                flood((i, j), True, False, visited)

    visited = np.zeros_like(arr)
    holes = 0
    for i in range(n1):
        for j in range(n2):
            if not arr[i, j] and not visited[i, j]:
                cells = flood((i, j), False, True, visited)
                touches_border = any(
                    a in (0, n1 - 1) or b in (0, n2 - 1) for a, b in cells
                )
                if not touches_border:
                    holes += 1
    return components - holes


class TestExcursionMask:
    def test_all_below(self):
        m = excursion_mask(np.array([0.0, 0.1, 0.2]), line(3), 0.5)
        assert not m.active.any()

    def test_boundary_is_active(self):
        m = excursion_mask(np.array([0.0, 0.5, 0.0]), line(3), 0.5)
        np.testing.assert_array_equal(m.active, [False, True, False])

    def test_mixed(self):
        m = excursion_mask(np.array([0.0, 1.0, 0.0, 2.0]), line(4), 0.5)
        np.testing.assert_array_equal(m.active, [False, True, False, True])

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            excursion_mask(np.array([0.0, 1.0]), line(3), 0.5)


class TestUpcrossings:
    def test_single_crossing(self):
        assert count_upcrossings(np.linspace(0.0, 1.0, 10), 0.5) == 1

    def test_constant(self):
        assert count_upcrossings(np.full(5, 0.3), 0.5) == 0

    def test_two_crossings(self):
        assert count_upcrossings(np.array([0.0, 1.0, 0.0, 1.0, 0.0]), 0.5) == 2

    def test_too_short(self):
        with pytest.raises(InputError):
            count_upcrossings(np.array([1.0]), 0.5)


class TestRiceFormula:
    def test_at_zero_level(self):
        assert rice_expected_upcrossings(1.0, 1.0, 0.0) == pytest.approx(
            1.0 / (2.0 * math.pi), rel=1e-15
        )
        assert rice_expected_upcrossings(1.0, 1.0, 0.0) == pytest.approx(0.159154943, abs=1e-9)

    def test_at_unit_level(self):
        assert rice_expected_upcrossings(1.0, 1.0, 1.0) == pytest.approx(
            math.exp(-0.5) / (2.0 * math.pi), rel=1e-15
        )
        assert rice_expected_upcrossings(1.0, 1.0, 1.0) == pytest.approx(0.096532, abs=1e-6)

    def test_monotone_decay_in_level(self):
        levels = np.linspace(0.0, 8.0, 30)
        rates = [rice_expected_upcrossings(1.0, 1.0, u) for u in levels]
        assert all(a >= b for a, b in zip(rates, rates[1:]))
        assert rates[-1] < 1e-10

    def test_parameter_errors(self):
        with pytest.raises(ParameterError):
            rice_expected_upcrossings(0.0, 1.0, 0.0)
        with pytest.raises(ParameterError):
            rice_expected_upcrossings(1.0, -1.0, 0.0)

    def test_monte_carlo_validation(self):
        # SE field, sigma = beta = 1 on [0,1] with 201 points, K = 2000:
        # empirical mean upcrossings within 3 standard errors of the closed
        # form with lam = sigma/beta^2
        kernel = Kernel(Family.SQUARED_EXPONENTIAL, sigma=1.0, beta=1.0)
        dom = GridDomain(axes=((0.0, 1.0, 201),))
        ens = sample_field(kernel, Constant(0.0), dom, k=2000, seed=77)
        for u in (0.0, 1.0):
            counts = np.array([count_upcrossings(row, u) for row in ens.values])
            expected = rice_expected_upcrossings(1.0, 1.0, u)
            stderr = counts.std(ddof=1) / math.sqrt(len(counts))
            assert abs(counts.mean() - expected) <= 3.0 * stderr


class TestEulerCharacteristic:
    def test_all_false(self):
        assert euler_characteristic(mask_from_array(np.zeros((4, 5)))) == 0

    def test_full_rectangle(self):
        assert euler_characteristic(mask_from_array(np.ones((4, 5)))) == 1

    def test_ring_has_zero(self):
        ring = np.ones((3, 3), dtype=bool)
        ring[1, 1] = False
        assert euler_characteristic(mask_from_array(ring)) == 0

    def test_two_blocks(self):
        blocks = np.zeros((3, 5), dtype=bool)
        blocks[:, :2] = True
        blocks[:, 3:] = True
        assert euler_characteristic(mask_from_array(blocks)) == 2

    def test_1d_runs(self):
        assert euler_characteristic(mask_from_array([1, 1, 0, 1, 0, 1, 1])) == 3
        assert euler_characteristic(mask_from_array([0, 0, 0])) == 0

    def test_1d_matches_upcrossing_relation(self):
        gen = np.random.default_rng(5)
        dom = line(40)
        for _ in range(50):
            sample = gen.normal(size=40)
            u = float(gen.normal())
            chi = euler_characteristic(excursion_mask(sample, dom, u))
            runs = count_upcrossings(sample, u) + int(sample[0] >= u)
            assert chi == runs

    def test_matches_flood_fill_oracle(self):
        gen = np.random.default_rng(12)
        for trial in range(200):
            n1 = int(gen.integers(1, 13))
            n2 = int(gen.integers(1, 13))
            arr = gen.random((n1, n2)) < gen.uniform(0.2, 0.8)
            assert euler_characteristic(mask_from_array(arr)) == components_minus_holes(arr)

    def test_additivity_over_disjoint_union(self):
        gen = np.random.default_rng(31)
        for _ in range(30):
            a = gen.random((4, 5)) < 0.5
            b = gen.random((4, 5)) < 0.5
            stacked = np.zeros((4, 11), dtype=bool)  # separating inactive column
            stacked[:, :5] = a
            stacked[:, 6:] = b
            chi_a = euler_characteristic(mask_from_array(a))
            chi_b = euler_characteristic(mask_from_array(b))
            assert euler_characteristic(mask_from_array(stacked)) == chi_a + chi_b

    def test_dimension_guard(self):
        dom = GridDomain(axes=((0.0, 1.0, 2), (0.0, 1.0, 2), (0.0, 1.0, 2)))
        with pytest.raises(UnsupportedDimensionError):
            excursion_mask(np.zeros(8), dom, 0.5)


class TestMonteCarloEstimators:
    def _ensemble(self):
        dom = grid2d(3, 3)
        values = np.array(
            [np.arange(9.0), np.arange(9.0)[::-1], np.full(9, 4.0)]
        )
        return FieldEnsemble(domain=dom, values=values, seed=0)

    def test_expected_ec_full_and_empty(self):
        ens = self._ensemble()
        assert mc_expected_ec(ens, -100.0) == 1.0
        assert mc_expected_ec(ens, 100.0) == 0.0

    def test_expected_ec_mixed_matches_per_sample_oracle(self):
        ens = self._ensemble()
        u = 3.5
        chis = [
            euler_characteristic(excursion_mask(row, ens.domain, u))
            for row in ens.values
        ]
        assert mc_expected_ec(ens, u) == pytest.approx(np.mean(chis))

    def test_excursion_probability_extremes(self):
        ens = self._ensemble()
        assert mc_excursion_probability(ens, -100.0) == 1.0
        assert mc_excursion_probability(ens, 100.0) == 0.0

    def test_excursion_probability_counts(self):
        dom = line(2)
        values = np.array([[0.3, 0.0], [0.2, 0.0], [0.26, 0.0], [0.1, 0.0]])
        ens = FieldEnsemble(domain=dom, values=values, seed=0)
        assert mc_excursion_probability(ens, 0.25) == 0.5

    def test_probability_is_nonincreasing_and_quantized(self):
        kernel = Kernel(Family.SQUARED_EXPONENTIAL, sigma=1.0, beta=0.5)
        ens = sample_field(kernel, Constant(0.0), line(20), k=16, seed=4)
        levels = np.linspace(-3.0, 3.0, 25)
        probs = [mc_excursion_probability(ens, u) for u in levels]
        assert all(a >= b for a, b in zip(probs, probs[1:]))
        for p in probs:
            assert (p * 16) == pytest.approx(round(p * 16), abs=1e-12)


class TestCvar:
    def test_alpha_zero_is_mean(self):
        costs = np.array([1.0, 5.0, 2.0, -3.0])
        assert cvar_field(costs, 0.0) == pytest.approx(costs.mean())

    def test_half_level_four_samples(self):
        assert cvar_field(np.array([1.0, 2.0, 3.0, 4.0]), 0.5) == pytest.approx(3.5)

    def test_equal_costs(self):
        for alpha in (0.0, 0.3, 0.9):
            assert cvar_field(np.full(7, 2.5), alpha) == pytest.approx(2.5)

    def test_alpha_bounds(self):
        with pytest.raises(ParameterError):
            cvar_field(np.array([1.0]), 1.0)
        with pytest.raises(ParameterError):
            cvar_field(np.array([1.0]), -0.1)

    def test_matches_scan_oracle(self):
        # direct minimization of f + sum(max(v-f,0))/((1-a)K) over candidate
        # f values; the minimizer lies at a sample point
        gen = np.random.default_rng(8)
        for _ in range(25):
            costs = gen.normal(size=int(gen.integers(1, 12)))
            alpha = float(gen.uniform(0.0, 0.95))
            k = costs.size
            candidates = np.unique(costs)
            oracle = min(
                f + np.maximum(costs - f, 0.0).sum() / ((1.0 - alpha) * k)
                for f in candidates
            )
            assert cvar_field(costs, alpha) == pytest.approx(oracle, rel=1e-12)

    def test_monotone_in_alpha_and_at_least_mean(self):
        gen = np.random.default_rng(9)
        costs = gen.normal(size=15)
        values = [cvar_field(costs, a) for a in np.linspace(0.0, 0.9, 10)]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))
        assert values[0] >= costs.mean() - 1e-12
