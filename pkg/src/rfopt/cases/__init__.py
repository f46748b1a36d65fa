"""End-to-end desk-scale case studies built on the library."""

from .battery import BatteryConfig, battery_evaluate, battery_simulate, battery_solve
from .ald import AldConfig, ald_optimize, ald_simulate, coverage_setpoint
from .diffusion import DiffusionConfig, diffusion_pareto, diffusion_solve

__all__ = [
    "BatteryConfig",
    "battery_solve",
    "battery_evaluate",
    "battery_simulate",
    "AldConfig",
    "ald_simulate",
    "ald_optimize",
    "coverage_setpoint",
    "DiffusionConfig",
    "diffusion_solve",
    "diffusion_pareto",
]
