"""Resilience by compromise: slack costs, joint solve, saddle dynamics, oracles."""

from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .duality import KKT_TOL, Solution, SolveReport, dual_value, solve_instances
from .problem import ProblemSpec

__all__ = [
    "ViolationCost",
    "cost_value",
    "grad_h_inverse",
    "solve_resilient_joint",
    "solve_pre_fixed_slack",
    "positive_projection",
    "SaddleState",
    "arrow_hurwicz_step",
    "run_arrow_hurwicz",
    "brute_force_oracle",
    "MixedResult",
    "solve_mixed_enumeration",
    "slack_fixed_point_error",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ViolationCost:
    """Cost ``h(s)`` of relaxing the slackened constraints of one scenario.

    ``quadratic``: ``s' Gamma s``; ``linear``: ``gamma' s``;
    ``heaviside-product``: ``-gamma * prod_i (1 - H(s_i))`` with ``H(x) = 1`` iff ``x >= 0``.
    """

    kind: str
    Gamma: np.ndarray | None = None
    gamma: np.ndarray | float | None = None

    def __post_init__(self):
        if self.kind == "quadratic":
            G = np.atleast_2d(np.asarray(self.Gamma, dtype=float))
            if G.shape[0] != G.shape[1] or np.abs(G - G.T).max() > 1e-12:
                raise ValueError("Gamma must be a symmetric square matrix")
            if np.linalg.eigvalsh(G).min() <= 0:
                raise ValueError("Gamma must be positive definite")
            object.__setattr__(self, "Gamma", G)
        elif self.kind == "linear":
            g = np.atleast_1d(np.asarray(self.gamma, dtype=float))
            if np.any(g < 0):
                raise ValueError("linear cost weights must be nonnegative")
            object.__setattr__(self, "gamma", g)
        elif self.kind == "heaviside-product":
            if float(self.gamma) < 0:
                raise ValueError("heaviside reward must be nonnegative")
            object.__setattr__(self, "gamma", float(self.gamma))
        else:
            raise ValueError(f"unknown cost kind {self.kind!r}")

    @classmethod
    def quadratic(cls, Gamma) -> "ViolationCost":
        return cls("quadratic", Gamma=Gamma)

    @classmethod
    def linear(cls, gamma) -> "ViolationCost":
        return cls("linear", gamma=gamma)

    @classmethod
    def heaviside(cls, gamma: float) -> "ViolationCost":
        return cls("heaviside-product", gamma=gamma)

    @property
    def size(self) -> int | None:
        if self.kind == "quadratic":
            return self.Gamma.shape[0]
        if self.kind == "linear":
            return len(self.gamma)
        return None

    def value(self, s) -> float:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if self.size is not None and s.shape != (self.size,):
            raise ValueError(f"slack row must have length {self.size}")
        if self.kind == "quadratic":
            return float(s @ self.Gamma @ s)
        if self.kind == "linear":
            return float(self.gamma @ s)
        return -self.gamma * float(np.prod(1.0 - (s >= 0)))

    def grad(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.kind == "quadratic":
            return 2.0 * self.Gamma @ s
        if self.kind == "linear":
            return self.gamma.copy()
        raise ValueError("heaviside cost has no gradient")

    def grad_inverse(self, y) -> np.ndarray:
        if self.kind != "quadratic":
            raise ValueError(f"the gradient of a {self.kind} cost is not invertible")
        return 0.5 * np.linalg.solve(self.Gamma, np.asarray(y, dtype=float))


def cost_value(h: ViolationCost, s_row) -> float:
    return h.value(s_row)


def grad_h_inverse(h: ViolationCost, y) -> np.ndarray:
    """The unique ``s`` with ``grad h(s) = y``."""
    return h.grad_inverse(y)


def _soft_mask(ps: ProblemSpec, h: ViolationCost, soft) -> np.ndarray:
    if soft is None:
        soft = np.ones(ps.m, bool) if h.size == ps.m else np.array([c.soft for c in ps.constraints])
    soft = np.asarray(soft, bool)
    if soft.shape != (ps.m,):
        raise ValueError("soft mask must have one entry per constraint")
    if h.size is not None and h.size != soft.sum():
        raise ValueError(f"cost acts on {h.size} slacks but {soft.sum()} constraints are soft")
    return soft


def solve_resilient_joint(ps: ProblemSpec, h: ViolationCost, *, soft=None, nonneg: bool = True,
                          tol: float = KKT_TOL, max_iter: int = 100) -> Solution:
    """Minimize ``J(z) + sum_j w_j h(s_j)`` subject to ``g(z, xi_j) <= s_j``.

    Constraints outside ``soft`` keep a zero slack. Returned slacks of those rows
    are zero and their duals are ordinary multipliers.
    """
    if h.kind != "quadratic":
        raise ValueError("the joint solve needs a strongly convex (quadratic) cost")
    soft = _soft_mask(ps, h, soft)
    return solve_instances(ps, slack_vars=soft, gamma=h.Gamma, nonneg=nonneg, tol=tol,
                           max_iter=max_iter)


def solve_pre_fixed_slack(ps: ProblemSpec, s, *, tol: float = KKT_TOL) -> Solution:
    """Minimize ``J`` subject to ``g(z, xi_j) <= s_j`` with ``s`` frozen."""
    return solve_instances(ps, slack=s, tol=tol)


def slack_fixed_point_error(ps: ProblemSpec, h: ViolationCost, sol: Solution, soft=None) -> float:
    """``max |s - grad_h_inverse(lam / f)|`` over the slackened rows."""
    soft = _soft_mask(ps, h, soft)
    target = _slacks_from_duals(ps, h, sol.lam, soft)
    return float(np.max(np.abs(sol.s[soft] - target[soft]), initial=0.0))


# ---------------------------------------------------------------------------
# Arrow-Hurwicz saddle dynamics
# ---------------------------------------------------------------------------


def positive_projection(x, v) -> np.ndarray:
    """Directional projection keeping ``x + a v`` in the nonnegative orthant."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(x < 0):
        raise ValueError("projection base point must be nonnegative")
    return np.where(x > 0, v, np.maximum(v, 0.0))


@dataclass
class SaddleState:
    z: np.ndarray
    lam: np.ndarray
    s: np.ndarray
    step_primal: float
    step_dual: float
    iteration: int = 0

    def __post_init__(self):
        if not (self.step_primal > 0 and self.step_dual > 0):
            raise ValueError("step sizes must be positive")
        if np.any(np.asarray(self.lam) < 0):
            raise ValueError("dual variables must be nonnegative")

    def copy(self) -> "SaddleState":
        return replace(self, z=self.z.copy(), lam=self.lam.copy(), s=self.s.copy())


class _QuadraticModel:
    """Vectorized ``g`` and ``grad_z L`` for affine and ball constraints."""

    def __init__(self, ps: ProblemSpec):
        self.ps = ps
        pts = ps.scenarios.points
        self.vol = ps.scenarios.measure
        self.H = ps.objective.hessian()
        self.lin = ps.objective.linear
        self.kinds = [c.kind for c in ps.constraints]
        self.data = []
        for c in ps.constraints:
            if c.kind == "affine":
                self.data.append((c.a.batch(pts), c.b.batch(pts).reshape(-1)))
            else:
                self.data.append((c.selector, c.center.batch(pts), c.radius_sq))

    def g(self, z) -> np.ndarray:
        out = np.empty((self.ps.m, self.ps.n_scenarios))
        for i, (kind, d) in enumerate(zip(self.kinds, self.data)):
            if kind == "affine":
                out[i] = d[0] @ z - d[1]
            else:
                r = (d[0] @ z)[None, :] - d[1]
                out[i] = np.einsum("jk,jk->j", r, r) - d[2]
        return out

    def grad(self, z, lam) -> np.ndarray:
        mass = lam * self.vol
        grad = self.H @ z + self.lin
        for i, (kind, d) in enumerate(zip(self.kinds, self.data)):
            if kind == "affine":
                grad = grad + mass[i] @ d[0]
            else:
                r = (d[0] @ z)[None, :] - d[1]
                grad = grad + 2.0 * d[0].T @ (mass[i] @ r)
        return grad

    def constraint_curvature(self) -> float:
        """Bound on ``sum_ij vol_j ||grad g_ij||^2`` scale used to size steps."""
        total = 0.0
        for kind, d in zip(self.kinds, self.data):
            if kind == "affine":
                total += float(np.sum(self.vol * np.einsum("jk,jk->j", d[0], d[0])))
            else:
                total += 2.0 * np.linalg.norm(d[0], 2) ** 2 * float(np.sum(self.vol))
        return total


def _slacks_from_duals(ps: ProblemSpec, h: ViolationCost, lam, soft) -> np.ndarray:
    s = np.zeros((ps.m, ps.n_scenarios))
    if soft.any():
        y = lam[soft] / ps.scenarios.density[None, :]
        s[soft] = 0.5 * np.linalg.solve(h.Gamma, y)
    return s


def arrow_hurwicz_step(ps: ProblemSpec, h: ViolationCost, state: SaddleState, *, soft=None,
                       _model: _QuadraticModel | None = None) -> SaddleState:
    """One explicit Euler step of the primal descent / projected dual ascent.

    The dual update uses the freshly updated primal iterate.
    """
    soft = _soft_mask(ps, h, soft)
    model = _model or _QuadraticModel(ps)
    z = state.z - state.step_primal * model.grad(state.z, state.lam)
    s_of_lam = _slacks_from_duals(ps, h, state.lam, soft)
    direction = positive_projection(state.lam, model.g(z) - s_of_lam)
    lam = np.maximum(state.lam + state.step_dual * direction, 0.0)
    return SaddleState(z, lam, _slacks_from_duals(ps, h, lam, soft), state.step_primal,
                       state.step_dual, state.iteration + 1)


def _saddle_residual(ps, h, model, z, lam, s, soft) -> float:
    gap = model.g(z) - s
    st = float(np.linalg.norm(model.grad(z, lam)))
    comp = float(np.max(np.abs(lam * gap), initial=0.0))
    feas = float(np.max(np.maximum(gap, 0.0), initial=0.0))
    return max(st, comp, feas)


def default_steps(ps: ProblemSpec, h: ViolationCost, soft=None) -> tuple[float, float]:
    """Step sizes ``0.5 / (1 + lambda_max(hess J))`` with a stability cap on the dual step."""
    soft = _soft_mask(ps, h, soft)
    eta = 0.5 / (1.0 + float(np.linalg.eigvalsh(ps.objective.hessian()).max()))
    eta_dual = eta
    if soft.any():
        damping = np.linalg.eigvalsh(np.linalg.inv(h.Gamma)).max() / (2 * ps.scenarios.density.min())
        eta_dual = min(eta_dual, 0.5 / damping)
    return eta, eta_dual


def initial_state(ps: ProblemSpec, h: ViolationCost, soft=None, steps=None) -> SaddleState:
    ep, ed = steps or default_steps(ps, h, soft)
    shape = (ps.m, ps.n_scenarios)
    return SaddleState(np.zeros(ps.dim), np.zeros(shape), np.zeros(shape), ep, ed)


def run_arrow_hurwicz(
    ps: ProblemSpec,
    h: ViolationCost,
    init: SaddleState | None = None,
    tol: float = 1e-10,
    max_iter: int = 200_000,
    *,
    soft=None,
    check_every: int = 50,
) -> tuple[SaddleState, SolveReport]:
    """Iterate the saddle dynamics until the KKT residual drops below ``tol``.

    Every ``check_every`` steps the residual is recorded; if it grows by more
    than a factor 100 over the best seen, the iterate is rolled back and both
    steps are halved. The residual trace is returned in ``report.trace``.
    """
    t0 = time.perf_counter()
    if h.kind != "quadratic":
        raise ValueError("the saddle dynamics need a strongly convex (quadratic) cost")
    soft = _soft_mask(ps, h, soft)
    model = _QuadraticModel(ps)
    state = (init or initial_state(ps, h, soft)).copy()
    start_iter = state.iteration
    resid = _saddle_residual(ps, h, model, state.z, state.lam, state.s, soft)
    trace = [resid]
    best = (resid, state.copy())
    status = "converged" if resid <= tol else "max-iterations"
    while status != "converged" and state.iteration - start_iter < max_iter:
        # a blow-up is caught by the residual check below
        with np.errstate(over="ignore", invalid="ignore"):
            state = arrow_hurwicz_step(ps, h, state, soft=soft, _model=model)
        if (state.iteration - start_iter) % check_every:
            continue
        with np.errstate(over="ignore", invalid="ignore"):
            resid = _saddle_residual(ps, h, model, state.z, state.lam, state.s, soft)
        trace.append(resid)
        if resid <= tol:
            status = "converged"
        elif not np.isfinite(resid) or resid > 100.0 * best[0]:
            it = state.iteration
            state = best[1].copy()
            state.step_primal *= 0.5
            state.step_dual *= 0.5
            state.iteration = it
            # keep the smaller steps for later rollbacks
            best = (best[0], state.copy())
            log.debug("saddle iteration diverging at %d; halving steps", it)
        elif resid < best[0]:
            best = (resid, state.copy())
    if status != "converged":
        final = _saddle_residual(ps, h, model, state.z, state.lam, state.s, soft)
        if final > best[0]:
            it = state.iteration
            state = best[1].copy()
            state.iteration = it
    resid = _saddle_residual(ps, h, model, state.z, state.lam, state.s, soft)
    primal = ps.objective.value(state.z) + sum(
        w * h.value(state.s[soft, j]) for j, w in enumerate(ps.scenarios.weights))
    dual = _saddle_dual(ps, h, state.lam, soft)
    report = SolveReport(float(primal), dual, resid, state.iteration - start_iter, status,
                         time.perf_counter() - t0)
    report.trace = trace
    return state, report


def _saddle_dual(ps, h, lam, soft) -> float:
    """Dual function of the joint problem without the slack sign constraint."""
    value = dual_value(ps, lam, np.zeros_like(lam))
    vol, w = ps.scenarios.measure, ps.scenarios.weights
    for j in range(ps.n_scenarios):
        c = vol[j] * lam[soft, j]
        if not soft.any():
            continue
        s = 0.5 * np.linalg.solve(w[j] * h.Gamma, c)
        value += float(w[j] * s @ h.Gamma @ s - c @ s)
    return float(value)


# ---------------------------------------------------------------------------
# Independent oracles
# ---------------------------------------------------------------------------


def brute_force_oracle(ps: ProblemSpec, h: ViolationCost, grid, *, soft=None,
                       chunk: int = 1 << 20) -> tuple[np.ndarray, np.ndarray, float]:
    """Exhaustive lattice search over ``z`` and the soft slacks.

    ``grid`` lists ``(lo, hi, n)`` per dimension: first the ``p`` entries of
    ``z``, then one per slack ordered scenario-major over the soft constraints.
    Returns ``(z, s, value)``; ``value`` is ``inf`` when no lattice point is feasible.
    """
    soft = _soft_mask(ps, h, soft)
    soft_idx = np.flatnonzero(soft)
    J = ps.n_scenarios
    n_dims = ps.dim + len(soft_idx) * J
    if n_dims > 6:
        raise ValueError(f"brute force limited to 6 grid dimensions, got {n_dims}")
    if len(grid) != n_dims:
        raise ValueError(f"grid needs {n_dims} axes")
    axes = [np.linspace(lo, hi, int(n)) for lo, hi, n in grid]
    shape = tuple(len(a) for a in axes)
    total = int(np.prod(shape))
    w = ps.scenarios.weights
    model = _QuadraticModel(ps)
    best = (np.inf, None)
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        idx = np.unravel_index(flat, shape)
        pts = np.column_stack([axes[k][idx[k]] for k in range(n_dims)])
        Z = pts[:, :ps.dim]
        S = pts[:, ps.dim:].reshape(len(pts), J, len(soft_idx))
        value = (np.einsum("ni,ij,nj->n", Z, ps.objective.Q, Z) + Z @ ps.objective.linear
                 + ps.objective.offset)
        feasible = np.ones(len(pts), bool)
        for j in range(J):
            if len(soft_idx):
                value = value + w[j] * np.array([h.value(row) for row in S[:, j]]) \
                    if h.kind != "quadratic" else value + w[j] * np.einsum(
                        "ni,ij,nj->n", S[:, j], h.Gamma, S[:, j])
        G = _batch_constraints(model, Z)  # (n, m, J)
        slack_full = np.zeros_like(G)
        if len(soft_idx):
            slack_full[:, soft_idx, :] = np.transpose(S, (0, 2, 1))
        feasible &= np.all(G <= slack_full, axis=(1, 2))
        if h.kind == "quadratic":
            feasible &= np.all(pts[:, ps.dim:] >= 0, axis=1)
        value = np.where(feasible, value, np.inf)
        k = int(np.argmin(value))
        if value[k] < best[0]:
            best = (float(value[k]), pts[k])
    if best[1] is None:
        return np.full(ps.dim, np.nan), np.full((ps.m, J), np.nan), np.inf
    pt = best[1]
    s = np.zeros((ps.m, J))
    s[soft_idx, :] = pt[ps.dim:].reshape(J, len(soft_idx)).T
    return pt[:ps.dim], s, best[0]


def _batch_constraints(model: _QuadraticModel, Z) -> np.ndarray:
    n = len(Z)
    out = np.empty((n, model.ps.m, model.ps.n_scenarios))
    for i, (kind, d) in enumerate(zip(model.kinds, model.data)):
        if kind == "affine":
            out[:, i, :] = Z @ d[0].T - d[1][None, :]
        else:
            SZ = Z @ d[0].T  # (n, r)
            r = SZ[:, None, :] - d[1][None, :, :]
            out[:, i, :] = np.einsum("njk,njk->nj", r, r) - d[2]
    return out


@dataclass
class MixedResult:
    z: np.ndarray
    s: np.ndarray
    achieved_delta: float
    subset: tuple
    value: float
    solutions: dict = field(default_factory=dict, repr=False)


MAX_ENUMERATION_SCENARIOS = 16


def solve_mixed_enumeration(ps: ProblemSpec, soft, hard, gamma: float,
                            soft_cost: ViolationCost | None = None,
                            tie_tol: float = 1e-9) -> MixedResult:
    """Mixed soft / all-or-nothing problem by enumerating satisfied scenario subsets.

    For each subset ``A`` the hard constraints are enforced on ``A`` only, soft
    constraints always carry quadratic slacks, and the objective is rewarded by
    ``gamma * Pr[A]``. Hard-row slacks in the result are the sign-free
    ``g(z, xi)``.
    """
    J = ps.n_scenarios
    if J > MAX_ENUMERATION_SCENARIOS:
        raise ValueError(f"enumeration limited to {MAX_ENUMERATION_SCENARIOS} scenarios")
    soft_mask = np.zeros(ps.m, bool)
    soft_mask[list(soft)] = True
    hard_mask = np.zeros(ps.m, bool)
    hard_mask[list(hard)] = True
    if np.any(soft_mask & hard_mask) or not np.all(soft_mask | hard_mask):
        raise ValueError("soft and hard index sets must partition the constraints")
    if soft_mask.any() and (soft_cost is None or soft_cost.kind != "quadratic"):
        raise ValueError("soft constraints need a quadratic cost")
    w = ps.scenarios.weights
    best = None
    for r in range(J, -1, -1):
        for A in itertools.combinations(range(J), r):
            active = np.zeros((ps.m, J), bool)
            active[soft_mask, :] = True
            active[np.ix_(hard_mask, list(A))] = True
            sol = solve_instances(ps, active=active, slack_vars=soft_mask,
                                  gamma=soft_cost.Gamma if soft_mask.any() else None)
            if sol.report.status == "infeasible":
                continue
            prob = float(w[list(A)].sum())
            value = sol.report.primal_value - gamma * prob
            if best is None or value < best[0] - tie_tol or (
                    abs(value - best[0]) <= tie_tol and prob > best[1] + 1e-15):
                best = (value, prob, A, sol)
    if best is None:
        raise RuntimeError("no scenario subset yields a feasible problem")
    value, prob, A, sol = best
    s = sol.s.copy()
    s[hard_mask] = ps.constraint_values(sol.z)[hard_mask]
    return MixedResult(sol.z, s, max(0.0, 1.0 - prob), tuple(A), value,
                       {"report": sol.report})
