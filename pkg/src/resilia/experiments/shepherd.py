"""Shepherd placement: watch sheep spread uniformly over a disc.

The shepherd covers a ball of radius ``r = R sqrt(coverage)`` and pays the
squared distance from home. Robust mode guarantees each sheep is covered
with probability ``1 - delta``; resilient mode lets the coverage radius grow
at a quadratic price per sheep.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..problem import AffineMap, BallConstraint, Objective, ProblemSpec, build_scenario_set, \
    uniform_disc_grid
from ..resilient import ViolationCost, solve_resilient_joint
from ..robust import solve_worst_case
from .common import ExperimentResult, InfeasibleExperiment

__all__ = ["ShepherdConfig", "run_shepherd", "disc_sampler", "shepherd_problem"]


@dataclass
class ShepherdConfig:
    perimeter_radius: float = 10.0
    home: tuple | None = None
    coverage_fraction: float = 0.9
    delta: float = 0.2
    sheep_count: int = 5
    rings: int = 7
    boundary_points: int = 256
    mc_samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.perimeter_radius <= 0:
            raise ValueError("perimeter radius must be positive")
        if not 0 < self.coverage_fraction <= 1:
            raise ValueError("coverage fraction must lie in (0, 1]")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.sheep_count < 1 or self.rings < 1 or self.mc_samples < 1:
            raise ValueError("counts must be positive")
        if self.home is None:
            self.home = (1.2 * self.perimeter_radius, 0.0)
        self.home = tuple(float(v) for v in self.home)
        if len(self.home) != 2:
            raise ValueError("home must be a 2-vector")

    @property
    def surveillance_radius(self) -> float:
        return self.perimeter_radius * np.sqrt(self.coverage_fraction)

    @property
    def robust_radius(self) -> float:
        """Radius of the centered sub-disc holding probability ``1 - delta``."""
        return self.perimeter_radius * np.sqrt(1.0 - self.delta)


def disc_sampler(radius: float):
    def sample(rng: np.random.Generator, n: int) -> np.ndarray:
        rad = radius * np.sqrt(rng.random(n))
        ang = 2.0 * np.pi * rng.random(n)
        return np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    return sample


def shepherd_problem(cfg: ShepherdConfig, scenarios) -> ProblemSpec:
    sheep = BallConstraint(np.eye(2), AffineMap(np.zeros(2), np.eye(2)),
                           cfg.surveillance_radius**2, name="coverage")
    return ProblemSpec(Objective.distance_to(cfg.home), [sheep], scenarios)


def _robust_scenarios(cfg: ShepherdConfig):
    grid = uniform_disc_grid(cfg.perimeter_radius, cfg.rings)
    inner = grid.points[np.linalg.norm(grid.points, axis=1) <= cfg.robust_radius]
    ang = 2.0 * np.pi * np.arange(cfg.boundary_points) / cfg.boundary_points
    rim = cfg.robust_radius * np.column_stack([np.cos(ang), np.sin(ang)])
    return build_scenario_set(np.vstack([inner, rim]))


def _monte_carlo(cfg: ShepherdConfig, x):
    """Max sheep distance per trial, per-sheep coverage rate, mean total squared violation."""
    rng = np.random.default_rng(cfg.seed)
    pts = disc_sampler(cfg.perimeter_radius)(rng, cfg.mc_samples * cfg.sheep_count)
    dist = np.linalg.norm(pts - np.asarray(x)[None, :], axis=1).reshape(cfg.mc_samples, -1)
    excess = np.maximum(dist**2 - cfg.surveillance_radius**2, 0.0)
    covered = float(np.mean(dist <= cfg.surveillance_radius))
    return dist.max(axis=1), covered, float(np.mean((excess**2).sum(axis=1)))


def _result(cfg, mode, sol, runtime, slack_table):
    samples, covered, sq_violation = _monte_carlo(cfg, sol.z)
    decision = {
        "position": sol.z,
        "distance_to_center": float(np.linalg.norm(sol.z)),
        "coverage_probability": covered,
        "expected_squared_violation": sq_violation,
    }
    return ExperimentResult(mode, decision, samples, sol.report.primal_value, slack_table,
                            runtime, sol.report.status)


def run_shepherd(cfg: ShepherdConfig | None = None, modes=("robust", "resilient")) -> dict:
    """Solve the requested modes; returns ``{mode: ExperimentResult}``."""
    cfg = cfg or ShepherdConfig()
    out = {}
    if "robust" in modes:
        t0 = time.perf_counter()
        scn = _robust_scenarios(cfg)
        sol = solve_worst_case(shepherd_problem(cfg, scn))
        if sol.report.status == "infeasible":
            raise InfeasibleExperiment("no position covers the required sub-disc")
        table = [{"scenario": j, "xi": scn.points[j], "lambda": sol.lam[0, j]}
                 for j in range(len(scn))]
        out["robust"] = _result(cfg, "robust", sol, time.perf_counter() - t0, table)
    if "resilient" in modes:
        t0 = time.perf_counter()
        scn = uniform_disc_grid(cfg.perimeter_radius, cfg.rings)
        cost = ViolationCost.quadratic(cfg.sheep_count * np.eye(1))
        sol = solve_resilient_joint(shepherd_problem(cfg, scn), cost)
        table = [{"scenario": j, "xi": scn.points[j], "lambda": sol.lam[0, j],
                  "slack": sol.s[0, j]} for j in range(len(scn))]
        out["resilient"] = _result(cfg, "resilient", sol, time.perf_counter() - t0, table)
    return out
