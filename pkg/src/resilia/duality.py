"""Lagrangian, KKT diagnostics and sensitivity for the slack-parametrized problem.

Conventions. Duals and slacks are ``(m, n_scenarios)`` arrays. The integral over
the disturbance support becomes a sum with quadrature volumes
``vol_j = w_j / f_j`` (weight over density), so the Lagrangian reads::

    L(z, lam, s) = J(z) + sum_j vol_j sum_i lam_ij (g_i(z, xi_j) - s_ij)

and ``lam[:, j]`` is the value of the dual function at ``xi_j``.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import nnls

from .problem import AffineConstraint, BallConstraint, ProblemSpec
from .qcqp import ConvexProgram, QuadRow, interior_point

__all__ = [
    "SolveReport",
    "Solution",
    "lagrangian",
    "lagrangian_grad",
    "kkt_residual",
    "min_z_lagrangian",
    "dual_value",
    "solve_instances",
    "SensitivityResult",
    "sensitivity_check",
    "KKT_TOL",
]

KKT_TOL = 1e-8


@dataclass
class SolveReport:
    primal_value: float
    dual_value: float
    kkt_residual: float
    iterations: int
    status: str  # converged | max-iterations | infeasible
    runtime: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("runtime")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @property
    def converged(self) -> bool:
        return self.status == "converged"


@dataclass
class Solution:
    z: np.ndarray
    lam: np.ndarray
    s: np.ndarray
    report: SolveReport
    extra: dict = field(default_factory=dict)


def _shape_check(ps: ProblemSpec, lam, s):
    shape = (ps.m, ps.n_scenarios)
    lam = np.asarray(lam, dtype=float)
    s = np.zeros(shape) if s is None else np.broadcast_to(np.asarray(s, dtype=float), shape)
    if lam.shape != shape:
        raise ValueError(f"dual map must have shape {shape}, got {lam.shape}")
    return lam, s


def lagrangian(ps: ProblemSpec, z, lam, s) -> float:
    lam, s = _shape_check(ps, lam, s)
    g = ps.constraint_values(z)
    vol = ps.scenarios.measure
    return ps.objective.value(z) + float(np.sum(vol * lam * (g - s)))


def lagrangian_grad(ps: ProblemSpec, z, lam) -> np.ndarray:
    """Gradient of the Lagrangian in ``z``."""
    vol = ps.scenarios.measure
    grad = ps.objective.grad(z)
    for i, c in enumerate(ps.constraints):
        for j, xi in enumerate(ps.scenarios.points):
            if lam[i, j] != 0.0:
                grad = grad + vol[j] * lam[i, j] * c.grad(z, xi)
    return grad


def kkt_residual(ps: ProblemSpec, z, lam, s) -> tuple[float, float, float]:
    """Stationarity (2-norm), complementarity and feasibility (max-norms)."""
    lam, s = _shape_check(ps, lam, s)
    gap = ps.constraint_values(z) - s
    stationarity = float(np.linalg.norm(lagrangian_grad(ps, z, lam)))
    complementarity = float(np.max(np.abs(lam * gap), initial=0.0))
    feasibility = float(np.max(np.maximum(gap, 0.0), initial=0.0))
    return stationarity, complementarity, feasibility


def min_z_lagrangian(ps: ProblemSpec, lam, s=None) -> np.ndarray:
    """Unique minimizer of ``L(., lam, s)``.

    The Lagrangian is quadratic in ``z`` for affine and ball constraints, so this
    is a single symmetric solve. ``s`` does not move the minimizer.
    """
    lam, _ = _shape_check(ps, lam, s)
    vol = ps.scenarios.measure
    H = ps.objective.hessian().copy()
    lin = ps.objective.linear.copy()
    for i, c in enumerate(ps.constraints):
        for j, xi in enumerate(ps.scenarios.points):
            mass = vol[j] * lam[i, j]
            if mass == 0.0:
                continue
            if c.kind == "affine":
                lin += mass * c.a(xi)
            else:
                H += mass * c.hessian()
                lin -= 2.0 * mass * (c.selector.T @ c.center(xi))
    z = np.linalg.solve(H, -lin)
    # a Newton correction tightens the gradient norm for ill-scaled forms
    z -= np.linalg.solve(H, H @ z + lin)
    return z


def dual_value(ps: ProblemSpec, lam, s) -> float:
    """``min_z L(z, lam, s)``; a lower bound on the optimal value for any ``lam >= 0``."""
    return lagrangian(ps, min_z_lagrangian(ps, lam, s), lam, s)


# ---------------------------------------------------------------------------
# Assembly of the flattened program
# ---------------------------------------------------------------------------


class _Rows:
    """Flattened constraint rows with bookkeeping back to (constraint, scenario)."""

    def __init__(self, n):
        self.n = n
        self.aff_keys = {}  # key -> row index in aff
        self.aff = []  # [coef(dense n), rhs, groups list[(i,j)]]
        self.quads = []  # [QuadRow, groups]
        self.quad_keys = {}

    def add_affine(self, coef, rhs, ij, dedupe=True):
        coef = coef + 0.0  # fold -0.0 into 0.0 so byte keys compare by value
        rhs = float(rhs) + 0.0
        if dedupe:
            key = (coef.tobytes(), rhs)
            k = self.aff_keys.get(key)
            if k is not None:
                self.aff[k][2].append(ij)
                return
            self.aff_keys[key] = len(self.aff)
        self.aff.append([coef, float(rhs), [ij] if ij is not None else []])

    def add_quad(self, row: QuadRow, ij, key=None):
        if key is not None:
            k = self.quad_keys.get(key)
            if k is not None:
                self.quads[k][1].append(ij)
                return
            self.quad_keys[key] = len(self.quads)
        self.quads.append([row, [ij]])


def solve_instances(
    ps: ProblemSpec,
    *,
    slack=None,
    active=None,
    slack_vars=None,
    gamma=None,
    nonneg: bool = True,
    tol: float = KKT_TOL,
    max_iter: int = 100,
) -> Solution:
    """Solve the slack-parametrized problem, optionally with optimized slacks.

    Parameters
    ----------
    slack : array (m, J), optional
        Fixed slack values ``s_ij`` (default zero) for instances without a slack
        variable.
    active : bool array (m, J), optional
        Instances to enforce; the rest are dropped and get a zero dual.
    slack_vars : bool array (m,), optional
        Constraints whose slacks are decision variables, penalized by
        ``sum_j w_j s_j' gamma s_j`` over those constraints.
    gamma : array (k, k)
        Quadratic slack cost over the ``k`` slackened constraints.
    nonneg : bool
        Enforce ``s >= 0`` on slack variables.
    """
    t0 = time.perf_counter()
    m, J, p = ps.m, ps.n_scenarios, ps.dim
    fixed = np.zeros((m, J)) if slack is None else np.array(
        np.broadcast_to(np.asarray(slack, float), (m, J)))
    active = np.ones((m, J), bool) if active is None else np.asarray(active, bool)
    soft = np.zeros(m, bool) if slack_vars is None else np.asarray(slack_vars, bool)
    if soft.any() and gamma is None:
        raise ValueError("slack variables need a quadratic cost matrix")
    soft_idx = np.flatnonzero(soft)
    pos_in_soft = {i: k for k, i in enumerate(soft_idx)}
    # slack variable columns: for each soft constraint and active scenario
    svar = -np.ones((m, J), dtype=int)
    n_s = 0
    for j in range(J):
        for i in soft_idx:
            if active[i, j]:
                svar[i, j] = p + n_s
                n_s += 1
    n = p + n_s
    w = ps.scenarios.weights
    vol = ps.scenarios.measure

    H = np.zeros((n, n))
    H[:p, :p] = ps.objective.hessian()
    q = np.zeros(n)
    q[:p] = ps.objective.linear
    if n_s:
        G_sym = np.asarray(gamma, float)
        G_sym = G_sym + G_sym.T
        for j in range(J):
            cols = [(pos_in_soft[i], svar[i, j]) for i in soft_idx if svar[i, j] >= 0]
            for ka, ca in cols:
                for kb, cb in cols:
                    H[ca, cb] += w[j] * G_sym[ka, kb]

    rows = _Rows(n)
    for i, c in enumerate(ps.constraints):
        for j, xi in enumerate(ps.scenarios.points):
            if not active[i, j]:
                continue
            col = svar[i, j]
            rhs_shift = fixed[i, j] if col < 0 else 0.0
            if c.kind == "affine":
                coef = np.zeros(n)
                coef[:p] = c.a(xi)
                if col >= 0:
                    coef[col] = -1.0
                rows.add_affine(coef, float(c.b(xi)) + rhs_shift, (i, j), dedupe=col < 0)
            else:
                S = np.zeros((c.selector.shape[0], n))
                S[:, :p] = c.selector
                a = np.zeros(n)
                if col >= 0:
                    a[col] = -1.0
                center = c.center(xi)
                key = None if col >= 0 else (i, center.tobytes(), rhs_shift)
                rows.add_quad(QuadRow(S, center, a, c.radius_sq + rhs_shift), (i, j), key)
    if nonneg:
        for col in range(p, n):
            coef = np.zeros(n)
            coef[col] = -1.0
            rows.add_affine(coef, 0.0, None, dedupe=False)

    # pair mirrored affine rows into equalities
    eq_pairs, ineq_rows, used = [], [], set()
    for k, (coef, rhs, groups) in enumerate(rows.aff):
        if k in used:
            continue
        mirror = rows.aff_keys.get(((0.0 - coef).tobytes(), 0.0 - rhs)) if groups else None
        if mirror is not None and mirror != k and mirror not in used and rows.aff[mirror][2]:
            eq_pairs.append((k, mirror))
            used.update((k, mirror))
        else:
            ineq_rows.append(k)
    E = np.array([rows.aff[k][0] for k, _ in eq_pairs]).reshape(len(eq_pairs), n)
    e = np.array([rows.aff[k][1] for k, _ in eq_pairs])
    G = np.array([rows.aff[k][0] for k in ineq_rows]).reshape(len(ineq_rows), n)
    h = np.array([rows.aff[k][1] for k in ineq_rows])
    prog = ConvexProgram(sp.csr_matrix(H), q, sp.csr_matrix(E), e, sp.csr_matrix(G), h,
                         [r for r, _ in rows.quads])
    res = interior_point(prog, max_iter=max_iter)

    z = res.x[:p]
    lam = np.zeros((m, J))

    def spread(mult, groups):
        groups = [g for g in groups if g is not None]
        if not groups:
            return
        total = sum(vol[j] for _, j in groups)
        for i, j in groups:
            lam[i, j] = mult / total

    for k, (plus, minus) in enumerate(eq_pairs):
        spread(max(res.nu[k], 0.0), rows.aff[plus][2])
        spread(max(-res.nu[k], 0.0), rows.aff[minus][2])
    for r, k in enumerate(ineq_rows):
        spread(max(res.lam[r], 0.0), rows.aff[k][2])
    ng = len(ineq_rows)
    for r, (_, groups) in enumerate(rows.quads):
        spread(max(res.lam[ng + r], 0.0), groups)

    s = fixed.copy()
    for i, j in zip(*np.nonzero(svar >= 0)):
        s[i, j] = res.x[svar[i, j]]
    if nonneg and n_s:
        s[svar >= 0] = np.maximum(s[svar >= 0], 0.0)

    primal = float(ps.objective.value(z))
    if n_s:
        primal += sum(float(w[j] * s[soft_idx, j] @ np.asarray(gamma) @ s[soft_idx, j]) for j in range(J))
    sol = Solution(z, lam, s, SolveReport(primal, np.nan, np.inf, res.iterations, "infeasible"),
                   extra={"active": active, "slack_vars": soft, "ipm_status": res.status,
                          "gamma": gamma, "nonneg": nonneg})
    if res.status == "infeasible":
        sol.report.runtime = time.perf_counter() - t0
        return sol
    lam_eff = np.where(active, lam, 0.0)
    st, comp, feas = kkt_residual(ps, z, lam_eff, s if n_s else fixed)
    feas = float(np.max(np.where(active, np.maximum(ps.constraint_values(z) - s, 0), 0),
                        initial=0.0))
    resid = max(st, comp, feas)
    if n_s:
        resid = max(resid, _slack_stationarity(ps, lam, s, soft_idx, svar, gamma, nonneg))
        dual = _joint_dual_value(ps, lam_eff, soft_idx, svar, gamma, nonneg, fixed)
    else:
        dual = dual_value(ps, lam_eff, fixed)
    sol.report = SolveReport(
        primal_value=primal,
        dual_value=dual,
        kkt_residual=resid,
        iterations=res.iterations,
        status="converged" if resid <= tol else "max-iterations",
        runtime=time.perf_counter() - t0,
    )
    sol.extra["stationarity"] = st
    sol.extra["complementarity"] = comp
    sol.extra["feasibility"] = feas
    return sol


def _slack_stationarity(ps, lam, s, soft_idx, svar, gamma, nonneg) -> float:
    """KKT residual of the slack block: ``w_j grad h(s_j) - vol_j lam_j``."""
    w, vol = ps.scenarios.weights, ps.scenarios.measure
    G_sym = np.asarray(gamma) + np.asarray(gamma).T
    worst = 0.0
    for j in range(ps.n_scenarios):
        mask = svar[soft_idx, j] >= 0
        if not mask.any():
            continue
        idx = soft_idx[mask]
        r = w[j] * (G_sym[np.ix_(mask, mask)] @ s[idx, j]) - vol[j] * lam[idx, j]
        if nonneg:
            # complementarity s >= 0, r >= 0, s*r = 0 via its natural residual
            worst = max(worst, float(np.max(np.abs(np.minimum(s[idx, j], r)))))
        else:
            worst = max(worst, float(np.max(np.abs(r))))
    return worst


def _joint_dual_value(ps, lam, soft_idx, svar, gamma, nonneg, fixed) -> float:
    """Dual function of the joint slack problem at ``lam``."""
    w, vol = ps.scenarios.weights, ps.scenarios.measure
    soft_mask = np.zeros(ps.m, bool)
    soft_mask[soft_idx] = True
    hard_s = np.where(soft_mask[:, None], 0.0, fixed)
    value = dual_value(ps, lam, hard_s)
    G = np.asarray(gamma, float)
    G = 0.5 * (G + G.T)
    for j in range(ps.n_scenarios):
        mask = svar[soft_idx, j] >= 0
        if not mask.any():
            continue
        idx = soft_idx[mask]
        M = w[j] * G[np.ix_(mask, mask)]
        c = vol[j] * lam[idx, j]
        # min_s s'Ms - c's  (over s >= 0 when nonneg)
        if nonneg:
            L = np.linalg.cholesky(M)
            target = 0.5 * np.linalg.solve(L, c)
            s_opt, _ = nnls(L.T, target)
        else:
            s_opt = 0.5 * np.linalg.solve(M, c)
        value += float(s_opt @ M @ s_opt - c @ s_opt)
    return value


# ---------------------------------------------------------------------------
# Sensitivity
# ---------------------------------------------------------------------------


@dataclass
class SensitivityResult:
    finite_difference: np.ndarray  # d P* / d s_ij divided by vol_j
    lam: np.ndarray
    rel_error: np.ndarray
    active: np.ndarray


def sensitivity_check(
    ps: ProblemSpec,
    s,
    h_step: float = 1e-4,
    reference: Solution | None = None,
    active_threshold: float = 1e-3,
    floor: float = 1e-3,
) -> SensitivityResult:
    """Compare central finite differences of ``P*(s)`` against ``-lam*``.

    The derivative with respect to ``s_ij`` is divided by the quadrature volume
    of scenario ``j`` to recover the pointwise dual. ``rel_error`` is
    ``|fd + lam| / max(|lam|, floor)``.
    """
    m, J = ps.m, ps.n_scenarios
    s = np.array(np.broadcast_to(np.asarray(s, float), (m, J)))
    ref = reference if reference is not None else solve_instances(ps, slack=s)
    if not ref.report.converged:
        raise RuntimeError(f"reference solve did not converge ({ref.report.status})")
    vol = ps.scenarios.measure
    fd = np.zeros((m, J))
    for i in range(m):
        for j in range(J):
            up, down = s.copy(), s.copy()
            up[i, j] += h_step
            down[i, j] -= h_step
            p_up = solve_instances(ps, slack=up)
            p_dn = solve_instances(ps, slack=down)
            for r in (p_up, p_dn):
                if r.report.status == "infeasible":
                    raise RuntimeError("perturbed problem is infeasible; reduce h_step")
            fd[i, j] = (p_up.report.primal_value - p_dn.report.primal_value) / (2 * h_step * vol[j])
    lam = ref.lam
    rel = np.abs(fd + lam) / np.maximum(np.abs(lam), floor)
    return SensitivityResult(fd, lam, rel, lam > active_threshold)
