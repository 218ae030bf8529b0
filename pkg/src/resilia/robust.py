"""Robust designs: worst case, chance-constrained surrogate, Monte Carlo checks."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .duality import KKT_TOL, Solution, solve_instances
from .problem import ProblemSpec, Sampler, ScenarioSet, TableMap

__all__ = [
    "RobustConfig",
    "compute_epsilon",
    "solve_robust_surrogate",
    "solve_worst_case",
    "estimate_violation_probability",
    "satisfaction_mask",
    "solve_chance_enumeration",
    "ChanceResult",
]


@dataclass(frozen=True)
class RobustConfig:
    """Chance level ``delta``, Lipschitz bound ``L`` and sub-Gaussian proxy ``sigma``."""

    delta: float
    lipschitz_max: float
    sigma: float
    mean_xi: np.ndarray | None = None

    def __post_init__(self):
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.lipschitz_max < 0:
            raise ValueError("Lipschitz bound must be nonnegative")
        if self.mean_xi is not None:
            object.__setattr__(self, "mean_xi", np.atleast_1d(np.asarray(self.mean_xi, float)))

    @staticmethod
    def box_sigma(width: float) -> float:
        """Admissible proxy for disturbances supported in ``[0, width]^d``."""
        return width / 2.0


def compute_epsilon(cfg: RobustConfig, m: int, d: int) -> float:
    """Margin ``L sigma sqrt(2 ln(2 m d / delta))``."""
    if m < 1 or d < 1:
        raise ValueError("need at least one constraint and one disturbance dimension")
    ratio = 2.0 * m * d / cfg.delta
    if ratio <= 1.0:
        raise ValueError("delta too large for a positive logarithm")
    return cfg.lipschitz_max * cfg.sigma * math.sqrt(2.0 * math.log(ratio))


def solve_robust_surrogate(ps: ProblemSpec, cfg: RobustConfig, *, tol: float = KKT_TOL) -> Solution:
    """Minimize ``J`` subject to ``g_i(z, E[xi]) <= -eps`` for every constraint.

    An empty surrogate set is reported through ``report.status == "infeasible"``.
    """
    mean = ps.scenarios.mean() if cfg.mean_xi is None else cfg.mean_xi
    if mean.shape != (ps.scenarios.dim,):
        raise ValueError("mean disturbance has the wrong dimension")
    for c in ps.constraints:
        maps = (c.a, c.b) if c.kind == "affine" else (c.center,)
        if any(isinstance(mp, TableMap) for mp in maps):
            raise ValueError("surrogate needs constraint maps defined off the scenario table")
    eps = compute_epsilon(cfg, ps.m, ps.scenarios.dim)
    single = ScenarioSet(mean[None, :], np.ones(1), np.ones(1))
    sol = solve_instances(ps.with_scenarios(single), slack=-eps, tol=tol)
    sol.extra["epsilon"] = eps
    return sol


def solve_worst_case(ps: ProblemSpec, *, tol: float = KKT_TOL) -> Solution:
    """Minimize ``J`` subject to every constraint at every scenario."""
    return solve_instances(ps, tol=tol)


def satisfaction_mask(ps: ProblemSpec, z, xis, atol: float = 0.0) -> np.ndarray:
    """Boolean per sample: all constraints hold at ``z``."""
    ok = np.ones(len(xis), bool)
    for c in ps.constraints:
        ok &= c.values_batch(z, xis) <= atol
    return ok


def estimate_violation_probability(ps: ProblemSpec, z, sampler: Sampler, n: int, seed: int,
                                   block: int = 1 << 16) -> tuple[float, float]:
    """Monte Carlo estimate of ``Pr[g_i(z, xi) <= 0 for all i]``.

    Samples are drawn in fixed-size blocks, each from its own child stream of
    ``SeedSequence(seed)``, so the estimate does not depend on how the work is
    split. Returns ``(p_hat, 1.96 * sqrt(p_hat (1 - p_hat) / n))``.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    n_blocks = -(-n // block)
    streams = np.random.SeedSequence(seed).spawn(n_blocks)
    hits = 0
    for k, ss in enumerate(streams):
        size = min(block, n - k * block)
        xis = np.asarray(sampler(np.random.default_rng(ss), size), dtype=float)
        if xis.ndim == 1:
            xis = xis[:, None]
        hits += int(satisfaction_mask(ps, z, xis).sum())
    p = hits / n
    return p, 1.96 * math.sqrt(p * (1.0 - p) / n)


@dataclass
class ChanceResult:
    z: np.ndarray
    value: float
    subset: tuple
    probability: float
    solution: Solution


def solve_chance_enumeration(ps: ProblemSpec, delta: float, *, prob_tol: float = 1e-12
                             ) -> ChanceResult:
    """Exact scenario chance-constrained solve by subset enumeration.

    Minimizes ``J`` over all ``z`` that satisfy every constraint on some
    scenario subset of probability at least ``1 - delta``.
    """
    J = ps.n_scenarios
    if J > 16:
        raise ValueError("enumeration limited to 16 scenarios")
    w = ps.scenarios.weights
    best = None
    for r in range(J + 1):
        for A in itertools.combinations(range(J), r):
            prob = float(w[list(A)].sum())
            if prob < 1.0 - delta - prob_tol:
                continue
            active = np.zeros((ps.m, J), bool)
            active[:, list(A)] = True
            sol = solve_instances(ps, active=active)
            if sol.report.status == "infeasible":
                continue
            if best is None or sol.report.primal_value < best.value:
                best = ChanceResult(sol.z, sol.report.primal_value, A, prob, sol)
    if best is None:
        raise RuntimeError("chance-constrained problem is infeasible")
    return best
