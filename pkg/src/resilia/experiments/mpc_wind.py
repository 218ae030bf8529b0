"""Receding-horizon flight home through scripted wind gusts.

Each step plans over the horizon assuming the last observed wind persists,
applies the first input, then the true (scripted) wind acts. In resilient
mode the safety box and thrust limits may be relaxed; attitude, velocity and
terminal constraints stay hard.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..lqr import BoxSet, LqrProblem, MpcFailure, mpc_step
from ..quadrotor import N_WIND, QuadrotorParams, continuous_matrices, discretize
from .common import ExperimentResult

__all__ = ["WindConfig", "run_mpc_wind", "DEFAULT_GUSTS"]

ANGLE = np.pi / 9
DEFAULT_GUSTS = {2: 0.1, 5: 0.6, 7: 0.5}


@dataclass
class WindConfig:
    sample_time: float = 0.5
    horizon: int = 10
    max_steps: int = 60
    start: tuple = (0.0, 10.0, 0.0, 0.0, 0.0, -np.pi / 2)
    gusts: dict = field(default_factory=lambda: dict(DEFAULT_GUSTS))
    safety: tuple = ((-10.0, 0.1), (-0.5, 10.1), (-1.0, 1.0))
    speed_limit: float = 10.0
    terminal_halfwidth: float = 0.1
    input_bound: float = 0.005
    slacks: bool = True
    params: QuadrotorParams = field(default_factory=QuadrotorParams)

    def __post_init__(self):
        if self.horizon < 1 or self.max_steps < 1:
            raise ValueError("horizon and step cap must be positive")
        self.gusts = {int(k): float(v) for k, v in self.gusts.items()}

    def wind(self, t: int) -> np.ndarray:
        """Wind acting during step ``t``: a lateral force pulse."""
        w = np.zeros(N_WIND)
        w[0] = self.gusts.get(t, 0.0)
        return w

    def problem(self) -> tuple[LqrProblem, np.ndarray]:
        p = QuadrotorParams(**{**self.params.to_dict(), "Ts": self.sample_time})
        A, B, W = discretize(*continuous_matrices(p), p.Ts)
        safety = BoxSet((0, 1, 2), [lo for lo, _ in self.safety], [hi for _, hi in self.safety],
                        "safety")
        attitude = BoxSet((3, 4, 5), [-ANGLE, -ANGLE, -np.pi], [ANGLE, ANGLE, np.pi], "attitude")
        speed = BoxSet.symmetric([self.speed_limit] * 6, index=tuple(range(6, 12)), name="speed")
        h, v = self.terminal_halfwidth, self.terminal_halfwidth
        terminal = BoxSet(tuple(range(12)), [-h] * 3 + [-ANGLE, -ANGLE, -np.pi] + [-v] * 6,
                          [h] * 3 + [ANGLE, ANGLE, np.pi] + [v] * 6, "terminal")
        x0 = np.zeros(12)
        x0[:6] = self.start
        lq = LqrProblem(A, B, np.eye(12), np.eye(4), x0, self.horizon, W=W,
                        state_sets=[safety, attitude, speed],
                        input_set=BoxSet.symmetric([self.input_bound] * 4, name="thrust"),
                        terminal_set=terminal,
                        slack_flags={"safety": self.slacks, "thrust": self.slacks})
        return lq, W


def run_mpc_wind(cfg: WindConfig | None = None) -> ExperimentResult:
    """Closed-loop run until the terminal set is entered or the step cap hits.

    ``violation_samples`` holds the safety-box violation of the state at each
    logged step. Slacks in the trace are the applied thrust excess over the
    limit and the first-step safety slack of the plan.
    """
    cfg = cfg or WindConfig()
    lq, W = cfg.problem()
    mode = "resilient" if cfg.slacks else "robust"
    safety, hard = lq.state_sets[0], lq.state_sets[1:]
    x = lq.x0.copy()
    w_prev = np.zeros(N_WIND)
    rows, status, objective = [], "reached", 0.0
    t0 = time.perf_counter()
    for t in range(cfg.max_steps + 1):
        row = {"step": t, **{f"x{i}": x[i] for i in range(12)}}
        if lq.terminal_set.contains(x):
            rows.append(row)
            break
        if t == cfg.max_steps:
            rows.append(row)
            status = "step-cap"
            break
        try:
            res = mpc_step(lq, x, w_prev, mode=mode)
        except MpcFailure as err:
            rows.append(row)
            status = err.status
            break
        u = res.u
        plan_safety = res.slacks.get("safety", np.zeros(0))
        row.update({f"u{i}": u[i] for i in range(4)})
        row["thrust_slack"] = max(float(np.abs(u).max()) - cfg.input_bound, 0.0)
        row["safety_slack"] = float(plan_safety[: 2 * len(safety.index)].max(initial=0.0))
        row["wind_x"] = cfg.wind(t)[0]
        rows.append(row)
        objective += float(x @ lq.Q @ x + u @ lq.R @ u)
        w_now = cfg.wind(t)
        x = lq.A @ x + lq.B @ u + W @ w_now
        w_prev = w_now
    X = np.array([[r[f"x{i}"] for i in range(12)] for r in rows])
    safety_violation = np.array([safety.violation(s).max() for s in X])
    hard_violation = max(float(b.violation(s).max()) for b in hard for s in X)
    decision = {
        "steps": len(rows) - 1,
        "reached_terminal": status == "reached",
        "final_state": X[-1],
        "max_hard_violation": hard_violation,
        "max_safety_violation": float(safety_violation.max()),
        "slacks_enabled": cfg.slacks,
    }
    table = [{"step": r["step"], "thrust_slack": r.get("thrust_slack", 0.0),
              "safety_slack": r.get("safety_slack", 0.0)} for r in rows]
    return ExperimentResult(mode, decision, safety_violation, objective, table,
                            time.perf_counter() - t0, status, rows)
