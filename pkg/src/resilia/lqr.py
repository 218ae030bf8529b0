"""Finite-horizon constrained LQR lowered to scenario problems.

The decision vector stacks shared (pre-branch) states and inputs followed by
one block of post-branch states and inputs per scenario. Dynamics become pairs
of opposite affine rows; boxes become one affine row per bound.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .duality import Solution
from .problem import (AffineConstraint, AffineMap, Objective, ProblemSpec, ScenarioSet,
                      TableMap, build_scenario_set)
from .resilient import ViolationCost, solve_resilient_joint
from .robust import solve_worst_case

__all__ = [
    "BoxSet",
    "LqrProblem",
    "Branching",
    "LoweredLqr",
    "solve_dare",
    "dare_residual",
    "lower_to_problem_spec",
    "MpcResult",
    "mpc_step",
]


@dataclass(frozen=True)
class BoxSet:
    """``lower <= x[index] <= upper``; infinite bounds are skipped."""

    index: tuple
    lower: np.ndarray
    upper: np.ndarray
    name: str = ""

    def __post_init__(self):
        idx = tuple(int(i) for i in np.atleast_1d(self.index))
        lo = np.broadcast_to(np.asarray(self.lower, float), (len(idx),)).copy()
        hi = np.broadcast_to(np.asarray(self.upper, float), (len(idx),)).copy()
        if np.any(lo > hi):
            raise ValueError(f"box {self.name!r} has lower > upper")
        object.__setattr__(self, "index", idx)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def symmetric(cls, bound, index=None, name=""):
        bound = np.atleast_1d(np.asarray(bound, float))
        index = tuple(range(len(bound))) if index is None else index
        return cls(index, -bound, bound, name)

    def violation(self, x) -> np.ndarray:
        v = np.asarray(x, float)[list(self.index)]
        return np.maximum(np.maximum(v - self.upper, self.lower - v), 0.0)

    def contains(self, x, atol: float = 0.0) -> bool:
        return bool(np.all(self.violation(x) <= atol))

    def to_dict(self) -> dict:
        return {"index": list(self.index), "lower": _finite_list(self.lower),
                "upper": _finite_list(self.upper), "name": self.name}

    @classmethod
    def from_dict(cls, d: dict) -> "BoxSet":
        return cls(d["index"], _inf_array(d["lower"], -np.inf), _inf_array(d["upper"], np.inf),
                   d.get("name", ""))


def _finite_list(a):
    return [None if not np.isfinite(v) else float(v) for v in a]


def _inf_array(values, missing):
    return np.array([missing if v is None else float(v) for v in values])


@dataclass
class LqrProblem:
    """``min x_N'P x_N + sum_k x_k'Q x_k + u_k'R u_k`` under boxes and linear dynamics.

    ``state_sets`` hold at ``k = 1..N``, ``input_set`` at ``k = 0..N-1``,
    each waypoint box at its instant and ``terminal_set`` at ``N``. Box names
    key ``slack_flags``; a flagged box may be relaxed by resilient solves.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    x0: np.ndarray
    N: int
    W: np.ndarray | None = None
    w: np.ndarray | None = None
    P_term: np.ndarray | None = None
    state_sets: list = field(default_factory=list)
    input_set: BoxSet | None = None
    waypoints: list = field(default_factory=list)
    terminal_set: BoxSet | None = None
    slack_flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, float))
        self.B = np.atleast_2d(np.asarray(self.B, float))
        n, q = self.B.shape
        if self.A.shape != (n, n):
            raise ValueError("A must be n x n with n the row count of B")
        self.Q = np.atleast_2d(np.asarray(self.Q, float))
        self.R = np.atleast_2d(np.asarray(self.R, float))
        self.x0 = np.atleast_1d(np.asarray(self.x0, float))
        self.W = np.zeros((n, 0)) if self.W is None else np.atleast_2d(np.asarray(self.W, float))
        self.w = np.zeros(self.W.shape[1]) if self.w is None else np.atleast_1d(np.asarray(self.w, float))
        if self.Q.shape != (n, n) or self.R.shape != (q, q) or self.x0.shape != (n,):
            raise ValueError("cost matrices or initial state have inconsistent dimensions")
        if self.W.shape[0] != n or self.w.shape != (self.W.shape[1],):
            raise ValueError("disturbance matrix and disturbance are inconsistent")
        if self.N < 1:
            raise ValueError("horizon must be at least 1")
        for M, nm in ((self.Q, "Q"), (self.R, "R")):
            if np.abs(M - M.T).max() > 1e-12:
                raise ValueError(f"{nm} must be symmetric")
        if np.linalg.eigvalsh(self.Q).min() < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(self.R).min() <= 0:
            raise ValueError("R must be positive definite")
        if self.P_term is None:
            self.P_term = solve_dare(self.A, self.B, self.Q, self.R)
        self.P_term = np.atleast_2d(np.asarray(self.P_term, float))
        if np.abs(self.P_term - self.P_term.T).max() > 1e-12:
            raise ValueError("terminal cost must be symmetric")
        self.waypoints = [(int(k), b) for k, b in self.waypoints]
        for k, _ in self.waypoints:
            if not 1 <= k <= self.N:
                raise ValueError(f"waypoint instant {k} outside 1..N")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def q(self) -> int:
        return self.B.shape[1]

    def is_soft(self, name: str) -> bool:
        return bool(self.slack_flags.get(name, False))

    def replace(self, **kw) -> "LqrProblem":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return LqrProblem(**d)

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(), "B": self.B.tolist(), "W": self.W.tolist(),
            "Q": self.Q.tolist(), "R": self.R.tolist(), "P_term": self.P_term.tolist(),
            "x0": self.x0.tolist(), "N": self.N, "w": self.w.tolist(),
            "x_bound": [b.to_dict() for b in self.state_sets],
            "u_bound": None if self.input_set is None else self.input_set.to_dict(),
            "waypoints": [{"k": k, "box": b.to_dict()} for k, b in self.waypoints],
            "terminal_set": None if self.terminal_set is None else self.terminal_set.to_dict(),
            "slack_flags": dict(self.slack_flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LqrProblem":
        q = len(d["B"][0])

        def state_box(v, name):
            if isinstance(v, dict):
                return BoxSet.from_dict(v)
            return BoxSet.symmetric(v, name=name)

        xb = d.get("x_bound")
        if xb is None:
            states = []
        elif isinstance(xb, list) and xb and isinstance(xb[0], dict):
            states = [BoxSet.from_dict(b) for b in xb]
        else:
            states = [state_box(xb, "state")]
        ub = d.get("u_bound")
        inputs = None if ub is None else (BoxSet.from_dict(ub) if isinstance(ub, dict)
                                          else BoxSet.symmetric(np.broadcast_to(ub, (q,)), name="input"))
        ts = d.get("terminal_set")
        return cls(
            A=d["A"], B=d["B"], Q=d["Q"], R=d["R"], x0=d["x0"], N=int(d["N"]),
            W=d.get("W") or None, w=d.get("w") or None, P_term=d.get("P_term"),
            state_sets=states, input_set=inputs,
            waypoints=[(wp["k"], BoxSet.from_dict(wp["box"])) for wp in d.get("waypoints", [])],
            terminal_set=None if ts is None else BoxSet.from_dict(ts),
            slack_flags=d.get("slack_flags", {}),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "LqrProblem":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Riccati
# ---------------------------------------------------------------------------


def dare_residual(P, A, B, Q, R) -> float:
    S = R + B.T @ P @ B
    rhs = A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(S, B.T @ P @ A) + Q
    return float(np.abs(P - rhs).max())


def solve_dare(A, B, Q, R, tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
    """Stabilizing solution of the discrete algebraic Riccati equation.

    Structured doubling: with ``G = B R^-1 B'`` the iteration
    ``A <- A (I + G H)^-1 A``, ``G <- G + A (I + G H)^-1 G A'``,
    ``H <- H + A' H (I + G H)^-1 A`` drives ``H`` to ``P`` quadratically.
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    Q = np.atleast_2d(np.asarray(Q, float))
    R = np.atleast_2d(np.asarray(R, float))
    n = A.shape[0]
    Ak, Gk, Hk = A.copy(), B @ np.linalg.solve(R, B.T), Q.copy()
    I = np.eye(n)
    for _ in range(max_iter):
        M = I + Gk @ Hk
        AM = np.linalg.solve(M.T, Ak.T).T  # Ak M^-1
        H_next = Hk + Ak.T @ Hk @ np.linalg.solve(M, Ak)
        G_next = Gk + AM @ Gk @ Ak.T
        Ak = AM @ Ak
        Gk = 0.5 * (G_next + G_next.T)
        change = np.abs(H_next - Hk).max()
        Hk = 0.5 * (H_next + H_next.T)
        if change <= tol * max(1.0, np.abs(Hk).max()):
            break
    else:
        raise RuntimeError("Riccati doubling did not converge")
    P = Hk
    # one fixed-point sweep removes the doubling round-off
    for _ in range(3):
        S = R + B.T @ P @ B
        P = A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(S, B.T @ P @ A) + Q
        P = 0.5 * (P + P.T)
    return P


# ---------------------------------------------------------------------------
# Lowering
# ---------------------------------------------------------------------------


@dataclass
class Branching:
    """Scenario-dependent dynamics from instant ``instant`` on.

    At ``k = instant`` the propagated state is multiplied by ``reset[j]``; for
    ``k >= instant`` scenario ``j`` uses input matrix ``B[j]``. Inputs from
    ``instant`` on are scenario-specific recourse.
    """

    instant: int
    B: list
    reset: list


@dataclass
class LoweredLqr:
    ps: ProblemSpec
    lqr: LqrProblem
    branching: Branching | None
    layout: dict  # ("x", k, j) / ("u", k, j) -> slice into z
    groups: dict  # box name -> list of constraint indices
    soft: np.ndarray
    dynamics_rows: list

    @property
    def n_branches(self) -> int:
        return self.ps.n_scenarios

    def _key(self, kind, k, j):
        split = self.branching.instant if self.branching else self.lqr.N + 1
        return (kind, k, j if k >= split else 0)

    def state(self, z, k, j=0) -> np.ndarray:
        if k == 0:
            return self.lqr.x0.copy()
        return np.asarray(z)[self.layout[self._key("x", k, j)]]

    def input(self, z, k, j=0) -> np.ndarray:
        return np.asarray(z)[self.layout[self._key("u", k, j)]]

    def trajectory(self, z, j=0) -> tuple[np.ndarray, np.ndarray]:
        X = np.array([self.state(z, k, j) for k in range(self.lqr.N + 1)])
        U = np.array([self.input(z, k, j) for k in range(self.lqr.N)])
        return X, U

    def dynamics_residual(self, z) -> float:
        worst = 0.0
        lq = self.lqr
        for j in range(self.n_branches):
            X, U = self.trajectory(z, j)
            for k in range(lq.N):
                B = lq.B
                if self.branching is not None and k >= self.branching.instant:
                    B = self.branching.B[j]
                nxt = lq.A @ X[k] + B @ U[k] + lq.W @ lq.w
                if self.branching is not None and k + 1 == self.branching.instant:
                    nxt = self.branching.reset[j] @ nxt
                worst = max(worst, float(np.abs(X[k + 1] - nxt).max()))
        return worst

    def group_slacks(self, s, name, j) -> np.ndarray:
        return np.asarray(s)[self.groups.get(name, []), j]


def lower_to_problem_spec(lqr: LqrProblem, scenarios: ScenarioSet | None = None,
                          branching: Branching | None = None) -> LoweredLqr:
    """Stack the horizon into one :class:`ProblemSpec` over the scenarios.

    Pre-branch variables are single shared columns (non-anticipativity). The
    objective is the expected LQR cost over branches. Rows of branch-specific
    variables use per-scenario coefficient tables.
    """
    n, q, N = lqr.n, lqr.q, lqr.N
    if scenarios is None:
        scenarios = build_scenario_set(np.zeros((1, 1)))
    J = len(scenarios)
    if branching is not None:
        if not 1 <= branching.instant <= N:
            raise ValueError("branching instant must lie in 1..N")
        if len(branching.B) != J or len(branching.reset) != J:
            raise ValueError("branching data must have one entry per scenario")
    split = branching.instant if branching is not None else N + 1
    layout, col = {}, 0

    def alloc(key, size):
        nonlocal col
        layout[key] = slice(col, col + size)
        col += size

    for k in range(1, min(split, N + 1)):
        alloc(("x", k, 0), n)
    for k in range(0, min(split, N)):
        alloc(("u", k, 0), q)
    for j in range(J if branching is not None else 0):
        for k in range(split, N + 1):
            alloc(("x", k, j), n)
        for k in range(split, N):
            alloc(("u", k, j), q)
    p = col

    def xkey(k, j):
        return ("x", k, j if k >= split else 0)

    def ukey(k, j):
        return ("u", k, j if k >= split else 0)

    w = scenarios.weights
    H = np.zeros((p, p))
    for k in range(1, N + 1):
        Qk = lqr.P_term if k == N else lqr.Q
        for j in range(J):
            sl = layout[xkey(k, j)]
            weight = w[j] if k >= split else (1.0 if j == 0 else 0.0)
            H[sl, sl] += weight * Qk
    for k in range(N):
        for j in range(J):
            sl = layout[ukey(k, j)]
            weight = w[j] if k >= split else (1.0 if j == 0 else 0.0)
            H[sl, sl] += weight * lqr.R
    objective = Objective(0.5 * (H + H.T), offset=float(lqr.x0 @ lqr.Q @ lqr.x0))

    pts = scenarios.points
    constraints, groups, dyn_rows = [], {}, []

    def add(rows_by_scn, rhs_by_scn, soft, name, group):
        """rows_by_scn[j] is a dense coefficient row; shared rows use a plain map."""
        same = all(np.array_equal(rows_by_scn[0], r) for r in rows_by_scn) and \
            all(rhs_by_scn[0] == r for r in rhs_by_scn)
        if same:
            a, b = AffineMap(rows_by_scn[0]), AffineMap(float(rhs_by_scn[0]))
        else:
            a = TableMap(pts, np.array(rows_by_scn))
            b = TableMap(pts, np.array(rhs_by_scn, dtype=float))
        groups.setdefault(group, []).append(len(constraints))
        constraints.append(AffineConstraint(a, b, soft=soft, name=name))

    wvec = lqr.W @ lqr.w
    # dynamics: x_{k+1} - A x_k - B u_k = W w  (reset applied at the branch)
    for k in range(N):
        for r in range(n):
            rows, rhs = [], []
            for j in range(J):
                row = np.zeros(p)
                Bk = branching.B[j] if (branching is not None and k >= split) else lqr.B
                Tr = branching.reset[j] if (branching is not None and k + 1 == split) else np.eye(n)
                TA, TB = Tr @ lqr.A, Tr @ Bk
                row[layout[xkey(k + 1, j)].start + r] = 1.0
                const = (Tr @ wvec)[r]
                if k == 0:
                    const += (TA @ lqr.x0)[r]
                else:
                    row[layout[xkey(k, j)]] -= TA[r]
                row[layout[ukey(k, j)]] -= TB[r]
                rows.append(row)
                rhs.append(const)
            for sign, tag in ((1.0, "+"), (-1.0, "-")):
                dyn_rows.append(len(constraints))
                add([sign * r for r in rows], [sign * c for c in rhs], False,
                    f"dyn[{k}][{r}]{tag}", "dynamics")

    def add_box(box: BoxSet, kind: str, k: int):
        soft = lqr.is_soft(box.name)
        for pos, idx in enumerate(box.index):
            for bound, sign, tag in ((box.upper[pos], 1.0, "ub"), (box.lower[pos], -1.0, "lb")):
                if not np.isfinite(bound):
                    continue
                rows, rhs = [], []
                for j in range(J):
                    row = np.zeros(p)
                    key = xkey(k, j) if kind == "x" else ukey(k, j)
                    row[layout[key].start + idx] = sign
                    rows.append(row)
                    rhs.append(sign * bound)
                add(rows, rhs, soft, f"{box.name}[{k}][{idx}]{tag}", box.name)

    for k in range(1, N + 1):
        for box in lqr.state_sets:
            add_box(box, "x", k)
    for k, box in lqr.waypoints:
        add_box(box, "x", k)
    if lqr.terminal_set is not None:
        add_box(lqr.terminal_set, "x", N)
    if lqr.input_set is not None:
        for k in range(N):
            add_box(lqr.input_set, "u", k)

    ps = ProblemSpec(objective, constraints, scenarios)
    soft = np.array([c.soft for c in constraints], bool)
    return LoweredLqr(ps, lqr, branching, layout, groups, soft, dyn_rows)


# ---------------------------------------------------------------------------
# Receding horizon
# ---------------------------------------------------------------------------


@dataclass
class MpcResult:
    u: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    slacks: dict
    solution: Solution
    lowered: LoweredLqr

    @property
    def report(self):
        return self.solution.report


def mpc_step(lqr: LqrProblem, x_now, w_prev, mode: str = "resilient",
             h: ViolationCost | None = None) -> MpcResult:
    """Plan over the horizon from ``x_now`` assuming the last disturbance persists."""
    if mode not in ("robust", "resilient"):
        raise ValueError("mode must be robust or resilient")
    x_now = np.asarray(x_now, float)
    if not np.all(np.isfinite(x_now)):
        raise ValueError("state must be finite")
    problem = lqr.replace(x0=x_now, w=np.asarray(w_prev, float))
    low = lower_to_problem_spec(problem)
    if mode == "resilient" and low.soft.any():
        cost = h or ViolationCost.quadratic(np.eye(int(low.soft.sum())))
        sol = solve_resilient_joint(low.ps, cost, soft=low.soft)
    else:
        sol = solve_worst_case(low.ps)
    X, U = low.trajectory(sol.z)
    slacks = {name: low.group_slacks(sol.s, name, 0) for name in low.groups if name != "dynamics"}
    if sol.report.status != "converged":
        raise MpcFailure(sol.report.status, X, U, sol)
    return MpcResult(U[0].copy(), X, U, slacks, sol, low)


class MpcFailure(RuntimeError):
    """Horizon problem failed; carries the partial plan."""

    def __init__(self, status, states, inputs, solution):
        super().__init__(f"horizon problem {status}")
        self.status = status
        self.states = states
        self.inputs = inputs
        self.solution = solution


__all__.append("MpcFailure")
