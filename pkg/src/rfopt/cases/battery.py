"""Battery sizing under random dynamic energy pricing.

A home buys grid power y_g(t) at a random unit price to cover a constant
demand through a storage battery of capacity z_b (the single first-stage
decision).  The battery balance y_b' = y_g - demand is transcribed with
backward Euler on an equidistant grid, the expected purchase cost with
trapezoid quadrature over the Monte-Carlo price samples, and the whole
problem is one LP: per-sample recourse purchases, shared capacity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..errors import InfeasibleError, ParameterError
from ..grf import FieldEnsemble, GridDomain, sample_field
from ..kernels import Family, Kernel, Sinusoid
from ..solver import SolveResult, Status, solve_qp
from ..transcription import (
    ObjectivePart,
    ProgramBuilder,
    TranscribedProgram,
    VariableLayout,
    expectation_objective,
    quadrature_weights,
)

__all__ = [
    "BatteryConfig",
    "BatteryResult",
    "battery_solve",
    "battery_evaluate",
    "battery_simulate",
    "price_ensemble",
    "build_battery_program",
]


@dataclass(frozen=True)
class BatteryConfig:
    horizon: float = 24.0
    n_points: int = 49
    n_samples: int = 100
    sigma: float = 0.6
    beta: float = 1.5
    mean_amplitude: float = 1.0
    mean_period: float = 24.0
    mean_offset: float = 3.0
    demand: float = 1.0
    capacity_cost: float = 0.3
    capacity_lo: float = 0.0
    capacity_hi: float = 100.0
    state_floor: float = 0.2  # fraction of capacity the charge must stay above
    boundary_level: float = 0.5  # start/end charge as a fraction of capacity
    purchase_hi: float = math.inf  # optional cap on the purchase rate
    seed: int = 0

    def __post_init__(self):
        if self.n_points < 2:
            raise ParameterError("need at least two time points")
        for name in ("horizon", "sigma", "beta", "demand", "capacity_cost"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if not 0 <= self.state_floor < 1:
            raise ParameterError("state_floor must lie in [0, 1)")

    @property
    def domain(self) -> GridDomain:
        return GridDomain(axes=((0.0, self.horizon, self.n_points),))

    @property
    def kernel(self) -> Kernel:
        return Kernel(Family.SQUARED_EXPONENTIAL, sigma=self.sigma, beta=self.beta)

    @property
    def mean(self) -> Sinusoid:
        return Sinusoid(self.mean_amplitude, self.mean_period, self.mean_offset)


@dataclass(frozen=True)
class BatteryResult:
    capacity: float
    expected_cost: float
    purchases: np.ndarray  # (K, N) optimal y_g
    charge: np.ndarray  # (K, N) optimal y_b
    prices: FieldEnsemble
    solve: SolveResult


def price_ensemble(config: BatteryConfig, deterministic: bool) -> FieldEnsemble:
    """Sampled prices, or a single mean-price row in deterministic mode."""
    if deterministic:
        from ..grf import mean_vector

        mu = mean_vector(config.mean, config.domain)
        return FieldEnsemble(
            domain=config.domain, values=mu[None, :], seed=config.seed, provenance="mean price"
        )
    return sample_field(
        config.kernel, config.mean, config.domain, k=config.n_samples, seed=config.seed
    )


def build_battery_program(
    config: BatteryConfig, prices: np.ndarray, capacity: float | None = None
) -> TranscribedProgram:
    """LP for given per-sample prices; ``capacity`` pins z_b for evaluation."""
    prices = np.asarray(prices, dtype=float)
    k, n = prices.shape
    if n != config.n_points:
        raise ParameterError("price rows must match the time grid")
    t = config.domain.axis_points(0)
    weights = quadrature_weights(t)
    dt = np.diff(t)

    layout = (
        VariableLayout()
        .with_block("purchase", (n, k))
        .with_block("charge", (n, k))
        .with_block("capacity", ())
    )
    pb = ProgramBuilder(layout)

    zb = layout.index("capacity")
    for kk in range(k):
        for i in range(1, n):
            # backward Euler balance: y_b[i] - y_b[i-1] = dt (y_g[i] - demand)
            pb.add_eq(
                [
                    layout.index("charge", i, kk),
                    layout.index("charge", i - 1, kk),
                    layout.index("purchase", i, kk),
                ],
                [1.0, -1.0, -dt[i - 1]],
                -dt[i - 1] * config.demand,
            )
        for i in (0, n - 1):
            pb.add_eq(
                [layout.index("charge", i, kk), zb], [1.0, -config.boundary_level], 0.0
            )
        for i in range(n):
            ch = layout.index("charge", i, kk)
            pb.add_ineq([ch, zb], [-1.0, config.state_floor], 0.0)  # floor <= y_b
            pb.add_ineq([ch, zb], [1.0, -1.0], 0.0)  # y_b <= z_b
    for j in layout.indices("purchase"):
        pb.set_bounds(j, 0.0, config.purchase_hi)
    for j in layout.indices("charge"):
        pb.set_bounds(j, -math.inf, math.inf)
    if capacity is None:
        pb.set_bounds(zb, config.capacity_lo, config.capacity_hi)
    else:
        pb.set_bounds(zb, float(capacity), float(capacity))

    q, c, const = expectation_objective(
        layout, "purchase", weights, k, linear=prices.T
    )
    for j, coef in enumerate(c):
        if coef:
            pb.add_linear(j, coef)
    pb.add_linear(zb, config.capacity_cost)
    purchase_lin = c.copy()
    capacity_lin = np.zeros(layout.size)
    capacity_lin[zb] = config.capacity_cost
    pb.add_part("purchase_cost", ObjectivePart(quad=None, lin=purchase_lin))
    pb.add_part("capacity_cost", ObjectivePart(quad=None, lin=capacity_lin))
    return pb.build()


def battery_solve(config: BatteryConfig, deterministic: bool = False) -> BatteryResult:
    """Optimal capacity and expected cost for sampled (or mean) prices."""
    prices = price_ensemble(config, deterministic)
    program = build_battery_program(config, prices.values)
    res = solve_qp(program)
    if res.status is not Status.OPTIMAL:
        raise InfeasibleError(f"battery program ended with status {res.status.value}")
    layout = program.layout
    k, n = prices.values.shape
    purchases = res.x[layout.indices("purchase")].reshape(n, k).T
    charge = res.x[layout.indices("charge")].reshape(n, k).T
    return BatteryResult(
        capacity=float(res.x[layout.index("capacity")]),
        expected_cost=float(res.objective),
        purchases=purchases,
        charge=charge,
        prices=prices,
        solve=res,
    )


def battery_evaluate(
    config: BatteryConfig,
    capacity: float,
    prices: FieldEnsemble,
    workers: int = 1,
) -> float:
    """Expected cost of operating a fixed capacity against given price samples.

    Solves one recourse LP per sample (purchases and charge trajectory with
    z_b pinned) and averages; the capacity charge is added once.
    """
    t = config.domain.axis_points(0)
    weights = quadrature_weights(t)

    def recourse(row: np.ndarray) -> float:
        program = build_battery_program(
            replace(config, n_samples=1), row[None, :], capacity=capacity
        )
        res = solve_qp(program)
        if res.status is not Status.OPTIMAL:
            raise InfeasibleError(
                f"capacity {capacity} infeasible for a price sample "
                f"(status {res.status.value})"
            )
        return float(program.part_value("purchase_cost", res.x))

    rows = list(prices.values)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            costs = list(pool.map(recourse, rows))
    else:
        costs = [recourse(row) for row in rows]
    return float(np.mean(costs) + config.capacity_cost * capacity)


def battery_simulate(
    config: BatteryConfig,
    prices: FieldEnsemble,
    policy,
    capacity: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Cost-rate ensemble f(t) = price * policy(t) + capacity charge rate and
    the backward-Euler charge trajectories for a fixed purchase policy.

    The charge is not clipped to the state bounds: this reproduces the open
    -loop behavior of a hand-written policy, bounds included only when
    optimizing.
    """
    t = config.domain.axis_points(0)
    purchases = np.array([float(policy(ti)) for ti in t])
    dt = np.diff(t)
    charge = np.empty((prices.n_samples, t.size))
    charge[:, 0] = config.boundary_level * capacity
    for i in range(1, t.size):
        charge[:, i] = charge[:, i - 1] + dt[i - 1] * (purchases[i] - config.demand)
    cost_rate = prices.values * purchases[None, :] + config.capacity_cost * capacity / config.horizon
    return cost_rate, charge
