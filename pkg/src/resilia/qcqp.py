"""Primal-dual interior-point solver for small convex QCQPs.

Solves::

    minimize    0.5 x'Hx + q'x
    subject to  E x = e
                G x <= h
                ||S_k x - c_k||^2 + a_k'x <= b_k      (k = 1..K)

with Mehrotra predictor-corrector steps on the reduced Newton system. Small
problems use dense LAPACK factorizations; larger ones (the horizon-stacked
quadrotor programs) use SuperLU on the sparse saddle-point matrix.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DENSE_LIMIT = 400


@dataclass
class QuadRow:
    S: np.ndarray  # dense (r, n)
    c: np.ndarray
    a: np.ndarray  # dense length-n linear term
    b: float


@dataclass
class ConvexProgram:
    H: object
    q: np.ndarray
    E: object = None
    e: np.ndarray | None = None
    G: object = None
    h: np.ndarray | None = None
    quads: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.q)
        self.q = np.asarray(self.q, dtype=float)
        if self.E is None:
            self.E, self.e = sp.csr_matrix((0, n)), np.zeros(0)
        if self.G is None:
            self.G, self.h = sp.csr_matrix((0, n)), np.zeros(0)
        self.e = np.asarray(self.e, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        self.dense = n + self.E.shape[0] <= DENSE_LIMIT
        conv = _todense if self.dense else (lambda M: sp.csr_matrix(M))
        self.H, self.E, self.G = conv(self.H), conv(self.E), conv(self.G)

    @property
    def n(self) -> int:
        return len(self.q)

    @property
    def n_ineq(self) -> int:
        return self.G.shape[0] + len(self.quads)

    def objective(self, x) -> float:
        return float(0.5 * x @ (self.H @ x) + self.q @ x)

    def ineq(self, x) -> np.ndarray:
        out = np.empty(self.n_ineq)
        ng = self.G.shape[0]
        out[:ng] = self.G @ x - self.h
        for k, row in enumerate(self.quads):
            r = row.S @ x - row.c
            out[ng + k] = r @ r + row.a @ x - row.b
        return out

    def ineq_jacobian(self, x):
        if not self.quads:
            return self.G
        rows = np.array([2.0 * (row.S.T @ (row.S @ x - row.c)) + row.a for row in self.quads])
        if self.dense:
            return np.vstack([self.G, rows])
        return sp.vstack([self.G, sp.csr_matrix(rows)], format="csr")

    def quad_hessian(self, lam_q):
        H = np.zeros((self.n, self.n))
        for lk, row in zip(lam_q, self.quads):
            if lk != 0.0:
                H += (2.0 * lk) * (row.S.T @ row.S)
        return H if self.dense else sp.csr_matrix(H)


def _todense(M) -> np.ndarray:
    if sp.issparse(M):
        return M.toarray()
    return np.asarray(M, dtype=float)


@dataclass
class IPMResult:
    x: np.ndarray
    nu: np.ndarray  # equality multipliers
    lam: np.ndarray  # inequality multipliers (affine rows then quad rows)
    status: str  # "optimal" | "infeasible" | "max-iterations"
    iterations: int
    residual: float


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


def interior_point(
    prog: ConvexProgram,
    tol: float = 1e-11,
    max_iter: int = 100,
    x0: np.ndarray | None = None,
    polish: bool = True,
) -> IPMResult:
    """Solve ``prog``; a phase-one check classifies any failure.

    With ``polish`` the interior-point answer is refined by Newton's method on
    the equality system of its identified active set, which removes the
    ``sqrt(mu)`` error on degenerate rows.
    """
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        res = _ipm(prog, tol, max_iter, x0)
        if polish and res.status != "infeasible":
            res = _polish(prog, res)
    if res.status != "optimal" and not _phase_one(prog):
        res.status = "infeasible"
    return res


def kkt_error(prog: ConvexProgram, x, nu, lam) -> float:
    F = prog.ineq(x)
    rd = prog.H @ x + prog.q + prog.E.T @ nu + prog.ineq_jacobian(x).T @ lam
    return max(np.abs(rd).max(initial=0.0),
               np.abs(prog.E @ x - prog.e).max(initial=0.0),
               np.maximum(F, 0.0).max(initial=0.0),
               np.abs(lam * F).max(initial=0.0),
               np.maximum(-lam, 0.0).max(initial=0.0))


def _polish(prog: ConvexProgram, res: IPMResult, newton_iter: int = 8) -> IPMResult:
    """Newton refinement on the active set ``{k : lam_k >= -F_k}``."""
    x, nu, lam = res.x.copy(), res.nu.copy(), res.lam.copy()
    before = kkt_error(prog, x, nu, lam)
    F = prog.ineq(x)
    act = np.flatnonzero(lam >= -F)
    n, ne, na = prog.n, prog.E.shape[0], len(act)
    ng = prog.G.shape[0]
    quad_act = act[act >= ng] - ng
    lam_a = lam[act].copy()
    reg = 1e-13
    last = np.inf
    for _ in range(newton_iter):
        JF = prog.ineq_jacobian(x)
        Ja = JF[act] if na else np.zeros((0, n))
        lam_full = np.zeros(prog.n_ineq)
        lam_full[act] = lam_a
        rd = prog.H @ x + prog.q + prog.E.T @ nu + (Ja.T @ lam_a if na else 0.0)
        rhs = -np.concatenate([rd, prog.E @ x - prog.e, prog.ineq(x)[act]])
        size = np.abs(rhs).max(initial=0.0)
        if size <= 1e-15 * (1.0 + np.abs(prog.q).max(initial=0.0)) or size >= 0.5 * last:
            break
        last = size
        K = prog.H
        if len(quad_act):
            lq = np.zeros(len(prog.quads))
            lq[quad_act] = lam_full[ng + quad_act]
            K = K + prog.quad_hessian(lq)
        C = sp.vstack([sp.csr_matrix(prog.E), sp.csr_matrix(Ja)], format="csr") \
            if not prog.dense else np.vstack([prog.E, Ja])
        try:
            fac = _Factor(K, C, reg, prog.dense)
            step = fac.solve(rhs)
        except (RuntimeError, np.linalg.LinAlgError, ValueError, sla.LinAlgWarning):
            return res
        if not np.all(np.isfinite(step)):
            return res
        x = x + step[:n]
        nu = nu + step[n:n + ne]
        lam_a = lam_a + step[n + ne:]
    lam_new = np.zeros(prog.n_ineq)
    lam_new[act] = np.maximum(lam_a, 0.0)
    after = kkt_error(prog, x, nu, lam_new)
    scale = 1.0 + np.abs(prog.q).max(initial=0.0) + np.abs(prog.h).max(initial=0.0)
    # the polished point sits exactly on its active set, so accept round-off ties
    if after <= max(before, 1e-11 * scale):
        return IPMResult(x, nu, lam_new, "optimal" if res.status == "optimal" or after <= 1e-9
                         else res.status, res.iterations, after)
    return res


class _Factor:
    """Factorization of the reduced KKT matrix ``[[K, E'], [E, -reg]]``."""

    def __init__(self, K, E, reg, dense):
        n, ne = K.shape[0], E.shape[0]
        self.dense = dense
        if dense:
            M = np.zeros((n + ne, n + ne))
            M[:n, :n] = K + reg * np.eye(n)
            if ne:
                M[:n, n:] = E.T
                M[n:, :n] = E
                M[n:, n:] = -reg * np.eye(ne)
            self.M = M
            with warnings.catch_warnings():
                warnings.simplefilter("error", sla.LinAlgWarning)
                self.lu = sla.lu_factor(M, check_finite=False)
        else:
            blocks = [[K + reg * sp.eye(n), E.T], [E, -reg * sp.eye(ne)]] if ne else [[K + reg * sp.eye(n)]]
            self.M = sp.bmat(blocks, format="csc")
            self.lu = spla.splu(self.M)

    def solve(self, rhs):
        if self.dense:
            sol = sla.lu_solve(self.lu, rhs, check_finite=False)
            return sol + sla.lu_solve(self.lu, rhs - self.M @ sol, check_finite=False)
        sol = self.lu.solve(rhs)
        return sol + self.lu.solve(rhs - self.M @ sol)


def _ipm(prog: ConvexProgram, tol: float, max_iter: int, x0=None, mu_tol: float = 1e-15) -> IPMResult:
    n, ne, ni = prog.n, prog.E.shape[0], prog.n_ineq
    ng = prog.G.shape[0]
    dense = prog.dense
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    nu = np.zeros(ne)
    F = prog.ineq(x)
    t = np.maximum(-F, 1.0)
    lam = np.ones(ni)
    scale = 1.0 + max(np.abs(prog.q).max(initial=0.0), np.abs(prog.h).max(initial=0.0),
                      np.abs(prog.e).max(initial=0.0))
    Hmax = np.abs(prog.H).max() if dense else abs(prog.H).max()
    reg = 1e-14 * (1.0 + Hmax)
    best = None
    history = []

    for it in range(max_iter + 1):
        F = prog.ineq(x)
        JF = prog.ineq_jacobian(x)
        rd = prog.H @ x + prog.q + prog.E.T @ nu + JF.T @ lam
        re = prog.E @ x - prog.e
        rp = F + t
        mu = float(lam @ t) / ni if ni else 0.0
        res_norm = max(np.abs(rd).max(initial=0.0), np.abs(re).max(initial=0.0),
                       np.abs(rp).max(initial=0.0))
        score = max(res_norm, mu)
        if best is None or score < best[0]:
            best = (score, x.copy(), nu.copy(), lam.copy(), it)
        if res_norm <= tol * scale and mu <= mu_tol * scale:
            return IPMResult(x, nu, lam, "optimal", it, res_norm)
        if it == max_iter:
            break
        history.append(np.abs(rp).max(initial=0.0) + np.abs(re).max(initial=0.0))
        if (it > 40 and history[-1] > 0.5 * history[-15] and history[-1] > 1e-6 * scale
                and lam.max(initial=0.0) > 1e10):
            break  # infeasibility is not shrinking while multipliers blow up

        D = lam / t
        if dense:
            K = prog.H + (JF.T * D) @ JF
            if prog.quads:
                K = K + prog.quad_hessian(lam[ng:])
        else:
            K = prog.H + JF.T @ sp.diags(D) @ JF
            if prog.quads:
                K = K + prog.quad_hessian(lam[ng:])
        try:
            fac = _Factor(K, prog.E, reg, dense)
        except (RuntimeError, np.linalg.LinAlgError, ValueError, sla.LinAlgWarning):
            log.debug("singular KKT matrix at iteration %d", it)
            break

        def newton(rc):
            w = (-rc + lam * rp) / t
            rhs_x = -rd - JF.T @ w
            sol = fac.solve(np.concatenate([rhs_x, -re]) if ne else rhs_x)
            dx, dnu = sol[:n], sol[n:]
            JFdx = JF @ dx
            return dx, dnu, w + D * JFdx, -rp - JFdx

        dx, dnu, dlam, dt = newton(lam * t)
        if ni:
            a_aff = min(_max_step(lam, dlam), _max_step(t, dt))
            mu_aff = float((lam + a_aff * dlam) @ (t + a_aff * dt)) / ni
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            dx, dnu, dlam, dt = newton(lam * t + dlam * dt - sigma * mu)
            alpha = min(1.0, 0.99 * min(_max_step(lam, dlam), _max_step(t, dt)))
        else:
            alpha = 1.0
        if not np.all(np.isfinite(dx)):
            break
        x = x + alpha * dx
        nu = nu + alpha * dnu
        lam = lam + alpha * dlam
        t = t + alpha * dt

    _, x, nu, lam, it = best
    F = prog.ineq(x)
    rd = prog.H @ x + prog.q + prog.E.T @ nu + prog.ineq_jacobian(x).T @ lam
    res_norm = max(np.abs(rd).max(initial=0.0), np.abs(prog.E @ x - prog.e).max(initial=0.0),
                   np.maximum(F, 0).max(initial=0.0))
    return IPMResult(x, nu, lam, "max-iterations", it, res_norm)


def _phase_one(prog: ConvexProgram, threshold: float = 1e-7) -> bool:
    """True when the constraint set of ``prog`` is numerically nonempty.

    Minimizes ``tau + tau^2/2 + 1e-8 ||x||^2 / 2`` with every inequality shifted
    by ``tau``; the shifted problem always has an interior.
    """
    n = prog.n
    ng = prog.G.shape[0]
    H = sp.block_diag([1e-8 * sp.eye(n), sp.csr_matrix([[1.0]])], format="csr")
    q = np.zeros(n + 1)
    q[-1] = 1.0
    G = sp.hstack([sp.csr_matrix(prog.G), sp.csr_matrix(-np.ones((ng, 1)))], format="csr") \
        if ng else sp.csr_matrix((0, n + 1))
    quads = [QuadRow(np.hstack([row.S, np.zeros((row.S.shape[0], 1))]), row.c,
                     np.append(row.a, -1.0), row.b) for row in prog.quads]
    E = sp.hstack([sp.csr_matrix(prog.E), sp.csr_matrix((prog.E.shape[0], 1))], format="csr")
    shifted = ConvexProgram(H, q, E, prog.e, G, prog.h, quads)
    x0 = np.zeros(n + 1)
    x0[-1] = 1.0 + max(0.0, prog.ineq(np.zeros(n)).max(initial=0.0))
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        res = _ipm(shifted, 1e-10, 150, x0)
    tau = res.x[-1]
    eq_ok = np.abs(prog.E @ res.x[:n] - prog.e).max(initial=0.0) <= 1e-6
    scale = 1.0 + np.abs(prog.h).max(initial=0.0)
    return bool(eq_ok and tau <= threshold * scale)
