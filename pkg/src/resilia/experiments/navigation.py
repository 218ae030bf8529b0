"""Waypoint navigation through a hallway with an obstruction of unknown mass.

Coordinates are deviations from hover at 5 m altitude, so the altitude band
4..6 m becomes ``|z| <= 1``. The quadrotor must pass two waypoint boxes, may
hit a box of mass ``Delta`` at the collision instant and must end in the
terminal room. Robust mode enforces every constraint on the most likely
masses with cumulative probability at least ``1 - delta``; resilient mode
plans jointly over all masses and may relax thrust limits and the terminal
set at quadratic cost.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..lqr import Branching, BoxSet, LqrProblem, lower_to_problem_spec
from ..problem import build_scenario_set
from ..quadrotor import QuadrotorParams, continuous_matrices, discretize, reset_matrix
from ..resilient import ViolationCost, solve_resilient_joint
from ..robust import solve_worst_case
from .common import ExperimentResult

__all__ = ["NavigationConfig", "run_navigation", "simulate_plan", "robust_subset"]

ANGLE = np.pi / 9


@dataclass
class NavigationConfig:
    masses: tuple = (0.0, 0.1, 1.0, 10.0)
    probabilities: tuple = (0.5, 0.4, 0.05, 0.05)
    delta: float = 0.1
    sample_time: float = 0.5
    horizon: int = 15
    collision_step: int = 13
    start: tuple = (0.0, -6.0, 0.0, 0.0, 0.0, np.pi / 2)
    waypoints: tuple = ((5, (-1.0, -4.0)), (10, (0.5, -1.0)))
    waypoint_halfwidth: float = 0.3
    hallway: tuple = ((-1.5, 1.5), (-7.0, 1.5), (-1.0, 1.0))
    terminal_position: tuple = ((-0.1, 1.0), (-0.1, 0.5), (-0.1, 0.1))
    terminal_speed: float = 0.1
    input_bound: float = 0.005
    reach_tol: float = 1e-6
    params: QuadrotorParams = field(default_factory=QuadrotorParams)

    def __post_init__(self):
        if len(self.masses) != len(self.probabilities):
            raise ValueError("one probability per obstruction mass")
        if abs(sum(self.probabilities) - 1.0) > 1e-9 or min(self.probabilities) < 0:
            raise ValueError("probabilities must be nonnegative and sum to one")
        if min(self.masses) < 0:
            raise ValueError("masses must be nonnegative")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not 1 <= self.collision_step <= self.horizon:
            raise ValueError("collision must happen inside the horizon")

    def base_params(self) -> QuadrotorParams:
        return QuadrotorParams(**{**self.params.to_dict(), "Ts": self.sample_time})

    def problem(self) -> LqrProblem:
        p = self.base_params()
        A, B, _ = discretize(*continuous_matrices(p), p.Ts)
        x0 = np.zeros(12)
        x0[[0, 1, 2, 3, 4, 5]] = self.start
        safety = BoxSet((0, 1, 2), [lo for lo, _ in self.hallway],
                        [hi for _, hi in self.hallway], "safety")
        attitude = BoxSet((3, 4, 5), [-ANGLE, -ANGLE, -np.pi], [ANGLE, ANGLE, np.pi], "attitude")
        v = self.terminal_speed
        lo = [a for a, _ in self.terminal_position] + [-ANGLE, -ANGLE, -np.pi] + [-v] * 6
        hi = [b for _, b in self.terminal_position] + [ANGLE, ANGLE, np.pi] + [v] * 6
        terminal = BoxSet(tuple(range(12)), lo, hi, "terminal")
        half = self.waypoint_halfwidth
        waypoints = [(k, BoxSet((0, 1), np.subtract(c, half), np.add(c, half), "waypoint"))
                     for k, c in self.waypoints]
        return LqrProblem(A, B, np.eye(12), np.eye(4), x0, self.horizon,
                          state_sets=[safety, attitude],
                          input_set=BoxSet.symmetric([self.input_bound] * 4, name="thrust"),
                          waypoints=waypoints, terminal_set=terminal,
                          slack_flags={"thrust": True, "terminal": True})

    def branching(self, masses) -> Branching:
        p = self.base_params()
        Bs = [discretize(*continuous_matrices(p.with_added_mass(d)), p.Ts)[1] for d in masses]
        resets = [reset_matrix(p, d) for d in masses]
        return Branching(self.collision_step, Bs, resets)


def robust_subset(probabilities, delta: float) -> list[int]:
    """Most likely scenarios, in order, until their probability reaches ``1 - delta``."""
    order = sorted(range(len(probabilities)), key=lambda j: -probabilities[j])
    chosen, total = [], 0.0
    for j in order:
        if total >= 1.0 - delta - 1e-12:
            break
        chosen.append(j)
        total += probabilities[j]
    return sorted(chosen)


def simulate_plan(cfg: NavigationConfig, inputs, mass: float) -> np.ndarray:
    """Open-loop rollout of ``inputs`` when the obstruction weighs ``mass``."""
    lq = cfg.problem()
    p = cfg.base_params()
    heavy = discretize(*continuous_matrices(p.with_added_mass(mass)), p.Ts)[1]
    X = [lq.x0]
    for k, u in enumerate(inputs):
        B = heavy if k >= cfg.collision_step else lq.B
        nxt = lq.A @ X[-1] + B @ u
        if k + 1 == cfg.collision_step:
            nxt = reset_matrix(p, mass) @ nxt
        X.append(nxt)
    return np.array(X)


def _violations(lq: LqrProblem, X, U) -> np.ndarray:
    """Largest constraint violation at each step ``k = 0..N``."""
    out = np.zeros(lq.N + 1)
    for k in range(lq.N + 1):
        worst = 0.0
        if k >= 1:
            for box in lq.state_sets:
                worst = max(worst, float(box.violation(X[k]).max(initial=0.0)))
        for kw, box in lq.waypoints:
            if kw == k:
                worst = max(worst, float(box.violation(X[k]).max(initial=0.0)))
        if k < lq.N and lq.input_set is not None:
            worst = max(worst, float(lq.input_set.violation(U[k]).max(initial=0.0)))
        if k == lq.N:
            worst = max(worst, float(lq.terminal_set.violation(X[k]).max(initial=0.0)))
        out[k] = worst
    return out


def _trace(mode, mass, X, U, slacks=None):
    rows = []
    for k in range(len(X)):
        row = {"mode": mode, "mass": mass, "step": k}
        row.update({f"x{i}": X[k, i] for i in range(X.shape[1])})
        u = U[k] if k < len(U) else np.full(U.shape[1], np.nan)
        row.update({f"u{i}": u[i] for i in range(U.shape[1])})
        if slacks is not None:
            row["thrust_slack"] = slacks[k] if k < len(slacks) else 0.0
        rows.append(row)
    return rows


def _result(cfg, lq, mode, mass, X, U, objective, status, runtime, slack_row, slack_steps=None):
    term = lq.terminal_set.violation(X[-1])
    decision = {
        "mass": mass,
        "reached_terminal": bool(term.max(initial=0.0) <= cfg.reach_tol),
        "terminal_distance": float(np.linalg.norm(term)),
        "final_state": X[-1],
        "inputs": U,
    }
    return ExperimentResult(mode, decision, _violations(lq, X, U), objective, [slack_row],
                            runtime, status, _trace(mode, mass, X, U, slack_steps))


def run_navigation(cfg: NavigationConfig | None = None, modes=("robust", "resilient")) -> dict:
    """Plan in each requested mode and roll every plan out under every mass.

    Returns ``{mass: {mode: ExperimentResult}}``. A failed solve is recorded
    in the result status and the run continues.
    """
    cfg = cfg or NavigationConfig()
    lq = cfg.problem()
    masses = list(cfg.masses)
    results = {d: {} for d in masses}

    if "resilient" in modes:
        t0 = time.perf_counter()
        scn = build_scenario_set(np.array(masses)[:, None], weights=list(cfg.probabilities))
        low = lower_to_problem_spec(lq, scn, cfg.branching(masses))
        cost = ViolationCost.quadratic(np.eye(int(low.soft.sum())))
        sol = solve_resilient_joint(low.ps, cost, soft=low.soft)
        runtime = time.perf_counter() - t0
        for j, d in enumerate(masses):
            _, U = low.trajectory(sol.z, j)
            X = simulate_plan(cfg, U, d)
            thrust = low.group_slacks(sol.s, "thrust", j)
            terminal = low.group_slacks(sol.s, "terminal", j)
            row = {"mass": d, "thrust_slack": float(np.linalg.norm(thrust)),
                   "terminal_slack": float(np.linalg.norm(terminal)),
                   "thrust_slack_max": float(thrust.max(initial=0.0)),
                   "terminal_slack_max": float(terminal.max(initial=0.0))}
            per_step = thrust.reshape(lq.N, -1).max(axis=1) if thrust.size else None
            results[d]["resilient"] = _result(cfg, lq, "resilient", d, X, U,
                                              sol.report.primal_value, sol.report.status,
                                              runtime, row, per_step)

    if "robust" in modes:
        t0 = time.perf_counter()
        subset = robust_subset(cfg.probabilities, cfg.delta)
        sub_masses = [masses[j] for j in subset]
        probs = [cfg.probabilities[j] for j in subset]
        scn = build_scenario_set(np.array(sub_masses)[:, None], weights=probs)
        low = lower_to_problem_spec(lq, scn, cfg.branching(sub_masses))
        sol = solve_worst_case(low.ps)
        runtime = time.perf_counter() - t0
        for d in masses:
            # an unplanned mass follows the recourse of the nearest planned one
            j = int(np.argmin([abs(d - s) for s in sub_masses]))
            _, U = low.trajectory(sol.z, j)
            X = simulate_plan(cfg, U, d)
            row = {"mass": d, "planned_masses": sub_masses, "branch_used": sub_masses[j]}
            results[d]["robust"] = _result(cfg, lq, "robust", d, X, U, sol.report.primal_value,
                                           sol.report.status, runtime, row)
    return results
