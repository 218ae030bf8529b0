"""Robust and resilient constrained planning over finite disturbance scenarios."""

from .duality import KKT_TOL, SensitivityResult, Solution, SolveReport, dual_value, \
    kkt_residual, lagrangian, sensitivity_check, solve_instances
from .lqr import BoxSet, Branching, LqrProblem, MpcFailure, MpcResult, lower_to_problem_spec, \
    mpc_step, solve_dare
from .problem import AffineConstraint, AffineMap, BallConstraint, Objective, ProblemSpec, \
    ScenarioSet, TableMap, build_scenario_set, load_problem, save_problem, uniform_disc_grid, \
    validate_problem
from .quadrotor import QuadrotorParams, collision_update, continuous_matrices, discretize
from .resilient import SaddleState, ViolationCost, brute_force_oracle, run_arrow_hurwicz, \
    solve_mixed_enumeration, solve_resilient_joint
from .robust import RobustConfig, compute_epsilon, estimate_violation_probability, \
    solve_chance_enumeration, solve_robust_surrogate, solve_worst_case

__version__ = "0.1.0"

__all__ = [
    "KKT_TOL", "SensitivityResult", "Solution", "SolveReport", "dual_value", "kkt_residual",
    "lagrangian", "sensitivity_check", "solve_instances",
    "BoxSet", "Branching", "LqrProblem", "MpcFailure", "MpcResult", "lower_to_problem_spec",
    "mpc_step", "solve_dare",
    "AffineConstraint", "AffineMap", "BallConstraint", "Objective", "ProblemSpec", "ScenarioSet",
    "TableMap", "build_scenario_set", "load_problem", "save_problem", "uniform_disc_grid",
    "validate_problem",
    "QuadrotorParams", "collision_update", "continuous_matrices", "discretize",
    "SaddleState", "ViolationCost", "brute_force_oracle", "run_arrow_hurwicz",
    "solve_mixed_enumeration", "solve_resilient_joint",
    "RobustConfig", "compute_epsilon", "estimate_violation_probability",
    "solve_chance_enumeration", "solve_robust_surrogate", "solve_worst_case",
]
