"""Problem definitions over finite disturbance scenario sets.

A problem is a strongly convex quadratic objective ``J(z)`` together with a
catalog of convex constraints ``g_i(z, xi) <= 0`` that depend on a disturbance
realization ``xi``. The continuous disturbance support is represented by a
weighted finite :class:`ScenarioSet`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "AffineMap",
    "TableMap",
    "ScenarioSet",
    "Objective",
    "AffineConstraint",
    "BallConstraint",
    "ProblemSpec",
    "ValidationReport",
    "evaluate_constraint",
    "evaluate_objective",
    "build_scenario_set",
    "validate_problem",
    "problem_to_dict",
    "problem_from_dict",
    "load_problem",
    "save_problem",
]


def _as_array(x) -> np.ndarray:
    a = np.array(x, dtype=float)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Disturbance-dependent data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AffineMap:
    """``xi -> offset + gain @ xi``; a constant when ``gain`` is None."""

    offset: np.ndarray
    gain: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "offset", _as_array(self.offset))
        if self.gain is not None:
            gain = _as_array(self.gain)
            if gain.shape[:-1] != self.offset.shape:
                raise ValueError("gain shape must be offset.shape + (d,)")
            object.__setattr__(self, "gain", gain)

    def __call__(self, xi) -> np.ndarray:
        if self.gain is None:
            return self.offset
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-1] != self.gain.shape[-1]:
            raise ValueError(
                f"disturbance has dimension {xi.shape[-1]}, map expects {self.gain.shape[-1]}"
            )
        return self.offset + self.gain @ xi

    def batch(self, xis: np.ndarray) -> np.ndarray:
        """Evaluate at every row of ``xis``; returns shape ``(n,) + offset.shape``."""
        xis = np.atleast_2d(np.asarray(xis, dtype=float))
        if self.gain is None:
            return np.broadcast_to(self.offset, (len(xis),) + self.offset.shape)
        return self.offset + np.einsum("...d,nd->n...", self.gain, xis)

    def to_dict(self) -> dict:
        d = {"offset": self.offset.tolist()}
        if self.gain is not None:
            d["gain"] = self.gain.tolist()
        return d


@dataclass(frozen=True)
class TableMap:
    """Values tabulated at a fixed list of disturbance points.

    Only defined at the listed points; evaluation elsewhere raises.
    """

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(_as_array(self.points))
        vals = _as_array(self.values)
        if len(vals) != len(pts):
            raise ValueError("one value per tabulated point is required")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)

    def __call__(self, xi) -> np.ndarray:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        hit = np.flatnonzero(np.all(self.points == xi, axis=1))
        if hit.size == 0:
            raise KeyError(f"no tabulated value at xi={xi.tolist()}")
        return self.values[hit[0]]

    def batch(self, xis: np.ndarray) -> np.ndarray:
        return np.stack([self(xi) for xi in np.atleast_2d(xis)])

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "values": self.values.tolist()}


def _map_from_dict(d) -> AffineMap | TableMap:
    if isinstance(d, (int, float, list)):
        return AffineMap(d)
    if "points" in d:
        return TableMap(d["points"], d["values"])
    return AffineMap(d["offset"], d.get("gain"))


def _as_map(x) -> AffineMap | TableMap:
    if isinstance(x, (AffineMap, TableMap)):
        return x
    return AffineMap(x)


# ---------------------------------------------------------------------------
# Scenario sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSet:
    """Weighted finite family of disturbance realizations.

    ``weights`` are probabilities used for expectations. ``density`` holds the
    density (or probability mass) at each point. Their ratio is the quadrature
    volume ``weights / density`` that stands in for ``dxi`` in integrals over the
    support.
    """

    points: np.ndarray
    weights: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        pts = _as_array(self.points)
        if pts.ndim == 1:
            pts = _as_array(pts[:, None])
        w = _as_array(self.weights)
        f = _as_array(self.density)
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
            raise ValueError("need at least one scenario of dimension >= 1")
        if w.shape != (len(pts),) or f.shape != (len(pts),):
            raise ValueError("weights and density need one entry per scenario")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to one")
        if np.any(~(f > 0)):
            raise ValueError("density values must be positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "density", f)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def measure(self) -> np.ndarray:
        """Quadrature volume attached to each scenario."""
        return self.weights / self.density

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def subset(self, index: Sequence[int]) -> "ScenarioSet":
        """Scenarios ``index`` with weights renormalized to one."""
        index = np.asarray(index, dtype=int)
        w = self.weights[index]
        total = w.sum()
        if total <= 0:
            raise ValueError("subset carries no probability")
        return ScenarioSet(self.points[index], w / total, self.density[index])

    def to_dict(self) -> dict:
        return {
            "points": self.points.tolist(),
            "weights": self.weights.tolist(),
            "density": self.density.tolist(),
        }


def build_scenario_set(points, density=None, weights=None) -> ScenarioSet:
    """Normalize a finite enumeration of disturbances into a :class:`ScenarioSet`.

    Parameters
    ----------
    points : array_like, shape (n, d) or (n,)
        The realizations. A 1-D input is read as ``n`` scalar disturbances.
    density : callable or array_like, optional
        Density (or probability mass) at each point. Defaults to the weights
        when they are all positive (a discrete law), else to uniform mass.
    weights : array_like, optional
        Probability weights. If omitted, weights are proportional to the
        density, which is right for equal-volume grids and discrete laws.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if len(pts) == 0:
        raise ValueError("empty scenario set")
    if density is None:
        f = np.full(len(pts), 1.0 / len(pts))
        if weights is not None and np.all(np.asarray(weights, dtype=float) > 0):
            f = np.asarray(weights, dtype=float).reshape(len(pts))
            f = f / f.sum()
    elif callable(density):
        f = np.array([float(density(p)) for p in pts])
    else:
        f = np.asarray(density, dtype=float).reshape(len(pts))
    if np.any(~(f > 0)):
        raise ValueError("density must be positive at every scenario")
    w = f if weights is None else np.asarray(weights, dtype=float).reshape(len(pts))
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative with positive total")
    w = w / w.sum()
    # kill rounding so the sum-to-one invariant holds tightly
    w[-1] = 1.0 - w[:-1].sum() if len(w) > 1 else 1.0
    return ScenarioSet(pts, w, f)


# ---------------------------------------------------------------------------
# Objective and constraints
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Objective:
    """Quadratic performance ``J(z) = z'Qz + linear'z + offset``."""

    Q: np.ndarray
    linear: np.ndarray | None = None
    offset: float = 0.0
    kind: str = "quadratic-form"

    def __post_init__(self):
        Q = _as_array(np.atleast_2d(self.Q))
        if Q.shape[0] != Q.shape[1]:
            raise ValueError("objective matrix must be square")
        lin = np.zeros(Q.shape[0]) if self.linear is None else np.asarray(self.linear, float)
        if lin.shape != (Q.shape[0],):
            raise ValueError("linear term has the wrong dimension")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "linear", _as_array(lin))
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def dim(self) -> int:
        return self.Q.shape[0]

    @classmethod
    def distance_to(cls, target, weight: float = 1.0) -> "Objective":
        """``weight * ||z - target||^2``."""
        t = np.asarray(target, dtype=float)
        return cls(weight * np.eye(len(t)), -2.0 * weight * t, weight * float(t @ t))

    def value(self, z) -> float:
        z = self._check(z)
        return float(z @ self.Q @ z + self.linear @ z + self.offset)

    def grad(self, z) -> np.ndarray:
        z = self._check(z)
        return (self.Q + self.Q.T) @ z + self.linear

    def hessian(self) -> np.ndarray:
        return self.Q + self.Q.T

    def strong_convexity(self) -> float:
        """Smallest eigenvalue of the Hessian ``2Q``."""
        return float(np.linalg.eigvalsh(self.hessian()).min())

    def _check(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dim,):
            raise ValueError(f"expected a vector of length {self.dim}, got shape {z.shape}")
        return z

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "Q_obj": self.Q.tolist(),
            "linear": self.linear.tolist(),
            "offset": self.offset,
        }


@dataclass(frozen=True)
class AffineConstraint:
    """``g(z, xi) = a(xi)'z - b(xi)``.

    ``soft`` marks requirements that may receive a slack; ``lipschitz`` is the
    user-declared Lipschitz bound of ``g`` in ``xi`` (infinity norm).
    """

    a: AffineMap | TableMap
    b: AffineMap | TableMap
    soft: bool = True
    lipschitz: float | None = None
    name: str = ""
    kind = "affine"

    def __post_init__(self):
        object.__setattr__(self, "a", _as_map(self.a))
        object.__setattr__(self, "b", _as_map(self.b))

    def value(self, z, xi) -> float:
        a = self.a(xi)
        z = np.asarray(z, dtype=float)
        if a.shape != z.shape:
            raise ValueError(f"constraint expects z of shape {a.shape}, got {z.shape}")
        return float(a @ z - self.b(xi))

    def grad(self, z, xi) -> np.ndarray:
        return np.array(self.a(xi), dtype=float)

    def values_batch(self, z, xis) -> np.ndarray:
        return self.a.batch(xis) @ np.asarray(z, float) - self.b.batch(xis).reshape(-1)

    def to_dict(self) -> dict:
        d = {"kind": "affine", "a": self.a.to_dict(), "b": self.b.to_dict(), "soft": self.soft,
             "name": self.name}
        if self.lipschitz is not None:
            d["lipschitz"] = self.lipschitz
        return d


@dataclass(frozen=True)
class BallConstraint:
    """``g(z, xi) = ||S z - c(xi)||^2 - radius_sq``."""

    selector: np.ndarray
    center: AffineMap | TableMap
    radius_sq: float
    soft: bool = True
    lipschitz: float | None = None
    name: str = ""
    kind = "ball"

    def __post_init__(self):
        object.__setattr__(self, "selector", _as_array(np.atleast_2d(self.selector)))
        object.__setattr__(self, "center", _as_map(self.center))
        if not self.radius_sq > 0:
            raise ValueError("ball radius_sq must be positive")
        object.__setattr__(self, "radius_sq", float(self.radius_sq))

    def residual(self, z, xi) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.selector.shape[1],):
            raise ValueError(
                f"constraint expects z of length {self.selector.shape[1]}, got shape {z.shape}"
            )
        c = self.center(xi)
        if c.shape != (self.selector.shape[0],):
            raise ValueError("center dimension does not match the selector")
        return self.selector @ z - c

    def value(self, z, xi) -> float:
        r = self.residual(z, xi)
        return float(r @ r - self.radius_sq)

    def grad(self, z, xi) -> np.ndarray:
        return 2.0 * self.selector.T @ self.residual(z, xi)

    def hessian(self) -> np.ndarray:
        return 2.0 * self.selector.T @ self.selector

    def values_batch(self, z, xis) -> np.ndarray:
        r = (self.selector @ np.asarray(z, float))[None, :] - self.center.batch(xis)
        return np.einsum("ni,ni->n", r, r) - self.radius_sq

    def to_dict(self) -> dict:
        d = {"kind": "ball", "selector": self.selector.tolist(), "center": self.center.to_dict(),
             "radius_sq": self.radius_sq, "soft": self.soft, "name": self.name}
        if self.lipschitz is not None:
            d["lipschitz"] = self.lipschitz
        return d


Constraint = AffineConstraint | BallConstraint


def evaluate_constraint(c: Constraint, z, xi) -> float:
    """Value of ``g(z, xi)`` for one constraint."""
    return c.value(z, xi)


def evaluate_objective(o: Objective, z) -> float:
    return o.value(z)


@dataclass(frozen=True)
class ProblemSpec:
    objective: Objective
    constraints: tuple
    scenarios: ScenarioSet
    slater_point: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.slater_point is not None:
            object.__setattr__(self, "slater_point", _as_array(self.slater_point))

    @property
    def dim(self) -> int:
        return self.objective.dim

    @property
    def m(self) -> int:
        return len(self.constraints)

    @property
    def n_scenarios(self) -> int:
        return len(self.scenarios)

    def constraint_values(self, z) -> np.ndarray:
        """All ``g_i(z, xi_j)`` as an ``(m, n_scenarios)`` array."""
        return np.array(
            [[c.value(z, xi) for xi in self.scenarios.points] for c in self.constraints]
        ).reshape(self.m, self.n_scenarios)

    def with_scenarios(self, scenarios: ScenarioSet) -> "ProblemSpec":
        return ProblemSpec(self.objective, self.constraints, scenarios, self.slater_point)

    def with_constraints(self, constraints: Iterable) -> "ProblemSpec":
        return ProblemSpec(self.objective, tuple(constraints), self.scenarios, self.slater_point)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    strong_convexity: float
    symmetric: bool
    dimensions_ok: bool
    slater_violations: list = field(default_factory=list)
    messages: list = field(default_factory=list)

    @property
    def strongly_convex(self) -> bool:
        return self.symmetric and self.strong_convexity > 0

    @property
    def slater_ok(self) -> bool:
        return not self.slater_violations

    @property
    def ok(self) -> bool:
        return self.strongly_convex and self.dimensions_ok and self.slater_ok


def validate_problem(ps: ProblemSpec) -> ValidationReport:
    """Check strong convexity, dimensions and (if given) the Slater point."""
    Q = ps.objective.Q
    symmetric = bool(np.allclose(Q, Q.T, atol=1e-12, rtol=0))
    mu = ps.objective.strong_convexity()
    report = ValidationReport(strong_convexity=mu, symmetric=symmetric, dimensions_ok=True)
    if not symmetric:
        report.messages.append("objective matrix is not symmetric")
    if mu <= 0:
        report.messages.append(f"objective is not strongly convex (min eigenvalue {mu:.3g})")

    probe = np.zeros(ps.dim) if ps.slater_point is None else ps.slater_point
    for i, c in enumerate(ps.constraints):
        for j, xi in enumerate(ps.scenarios.points):
            try:
                v = c.value(probe, xi)
            except (ValueError, KeyError) as exc:
                report.dimensions_ok = False
                report.messages.append(f"constraint {i}, scenario {j}: {exc}")
                continue
            if not np.isfinite(v):
                report.dimensions_ok = False
                report.messages.append(f"constraint {i}, scenario {j}: non-finite value")
            elif ps.slater_point is not None and not v < 0:
                report.slater_violations.append((i, j))
    if report.slater_violations:
        report.messages.append(
            f"Slater point violates {len(report.slater_violations)} constraint/scenario pairs"
        )
    return report


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def problem_to_dict(ps: ProblemSpec) -> dict:
    d = {
        "objective": ps.objective.to_dict(),
        "constraints": [c.to_dict() for c in ps.constraints],
        "scenarios": ps.scenarios.to_dict(),
    }
    if ps.slater_point is not None:
        d["slater_point"] = ps.slater_point.tolist()
    return d


def _constraint_from_dict(d: dict) -> Constraint:
    common = dict(soft=d.get("soft", True), lipschitz=d.get("lipschitz"), name=d.get("name", ""))
    if d["kind"] == "affine":
        return AffineConstraint(_map_from_dict(d["a"]), _map_from_dict(d["b"]), **common)
    if d["kind"] == "ball":
        return BallConstraint(
            d["selector"], _map_from_dict(d["center"]), d["radius_sq"], **common
        )
    raise ValueError(f"unknown constraint kind {d['kind']!r}")


def problem_from_dict(d: dict) -> ProblemSpec:
    o = d["objective"]
    objective = Objective(o["Q_obj"], o.get("linear"), o.get("offset", 0.0))
    sc = d["scenarios"]
    scenarios = ScenarioSet(sc["points"], sc["weights"], sc.get("density", sc["weights"]))
    constraints = tuple(_constraint_from_dict(c) for c in d["constraints"])
    return ProblemSpec(objective, constraints, scenarios, d.get("slater_point"))


def save_problem(ps: ProblemSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(problem_to_dict(ps), fh, indent=2)


def load_problem(path) -> ProblemSpec:
    with open(path) as fh:
        return problem_from_dict(json.load(fh))


def uniform_disc_grid(radius: float, rings: int, center=(0.0, 0.0)) -> ScenarioSet:
    """Equal-area cells on a disc: ring ``k`` holds ``8k - 4`` cells (``4 rings^2`` total).

    Points are cell centroids in the polar sense; each cell carries the uniform
    density ``1 / (pi radius^2)``.
    """
    pts = []
    for k in range(1, rings + 1):
        n_cells = 8 * k - 4
        r_in, r_out = radius * (k - 1) / rings, radius * k / rings
        rho = np.sqrt(0.5 * (r_in**2 + r_out**2))
        ang = 2 * np.pi * (np.arange(n_cells) + 0.5) / n_cells
        pts.append(np.column_stack([rho * np.cos(ang), rho * np.sin(ang)]))
    pts = np.vstack(pts) + np.asarray(center, dtype=float)
    f = 1.0 / (np.pi * radius**2)
    return build_scenario_set(pts, density=np.full(len(pts), f))


Sampler = Callable[[np.random.Generator, int], np.ndarray]
