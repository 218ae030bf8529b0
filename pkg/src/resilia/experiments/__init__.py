"""Scripted drivers for the shepherd, navigation and wind experiments."""

from .common import ExperimentResult, InfeasibleExperiment, write_outputs
from .mpc_wind import DEFAULT_GUSTS, WindConfig, run_mpc_wind
from .navigation import NavigationConfig, robust_subset, run_navigation, simulate_plan
from .shepherd import ShepherdConfig, disc_sampler, run_shepherd

__all__ = [
    "ExperimentResult",
    "InfeasibleExperiment",
    "write_outputs",
    "WindConfig",
    "DEFAULT_GUSTS",
    "run_mpc_wind",
    "NavigationConfig",
    "run_navigation",
    "robust_subset",
    "simulate_plan",
    "ShepherdConfig",
    "run_shepherd",
    "disc_sampler",
]
