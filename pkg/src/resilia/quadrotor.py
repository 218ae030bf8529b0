"""Linearized quadrotor about hover, with exact zero-order-hold discretization.

State ``(x, y, z, phi, theta, psi, u, v, w, p, q, r)``; input deviation from
hover ``(f_t, tau_x, tau_y, tau_z)``; wind ``(f_wx, f_wy, f_wz, tau_wx, tau_wy, tau_wz)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

__all__ = [
    "QuadrotorParams",
    "continuous_matrices",
    "discretize",
    "step",
    "collision_update",
    "reset_matrix",
    "LINEAR_VELOCITY",
    "N_STATE",
    "N_INPUT",
    "N_WIND",
]

N_STATE, N_INPUT, N_WIND = 12, 4, 6
LINEAR_VELOCITY = (6, 7, 8)


def _sphere_and_arms(M, R, l, m_prime):
    core = 2.0 * M * R**2 / 5.0
    return core + 2.0 * l**2 * m_prime, core + 4.0 * l**2 * m_prime


@dataclass(frozen=True)
class QuadrotorParams:
    """Physical parameters; inertias default to the sphere-plus-point-masses model."""

    m: float = 0.5
    M: float = 0.341
    m_prime: float = 0.0398
    l: float = 0.17
    R: float = 0.0812
    Ix: float | None = None
    Iy: float | None = None
    Iz: float | None = None
    g: float = 9.81
    Ts: float = 0.1
    mass_tol: float = 1e-3

    def __post_init__(self):
        if min(self.m, self.M, self.m_prime, self.l, self.R, self.g, self.Ts) <= 0:
            raise ValueError("physical parameters must be positive")
        if abs(self.m - (self.M + 4 * self.m_prime)) > self.mass_tol:
            raise ValueError("total mass must equal body mass plus four rotor masses")
        ixy, iz = _sphere_and_arms(self.M, self.R, self.l, self.m_prime)
        for name, val in (("Ix", ixy), ("Iy", ixy), ("Iz", iz)):
            if getattr(self, name) is None:
                object.__setattr__(self, name, val)

    @classmethod
    def hummingbird(cls, Ts: float = 0.1) -> "QuadrotorParams":
        return cls(Ts=Ts)

    def with_added_mass(self, delta: float) -> "QuadrotorParams":
        """Mass ``delta`` attached at the center: body sphere and total mass grow."""
        if delta < 0:
            raise ValueError("added mass must be nonnegative")
        ixy, iz = _sphere_and_arms(self.M + delta, self.R, self.l, self.m_prime)
        return replace(self, m=self.m + delta, M=self.M + delta, Ix=ixy, Iy=ixy, Iz=iz)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("mass_tol")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "QuadrotorParams":
        keys = {"m", "M", "m_prime", "l", "R", "Ix", "Iy", "Iz", "g", "Ts"}
        unknown = set(d) - keys
        if unknown:
            raise ValueError(f"unknown parameter keys: {sorted(unknown)}")
        return cls(**d)


def continuous_matrices(params: QuadrotorParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    A = np.zeros((N_STATE, N_STATE))
    A[0:6, 6:12] = np.eye(6)
    A[6, 4] = -params.g
    A[7, 3] = params.g
    B = np.zeros((N_STATE, N_INPUT))
    B[8, 0] = 1.0 / params.m
    B[9, 1] = 1.0 / params.Ix
    B[10, 2] = 1.0 / params.Iy
    B[11, 3] = 1.0 / params.Iz
    W = np.zeros((N_STATE, N_WIND))
    W[6:9, 0:3] = np.eye(3) / params.m
    W[9, 3] = 1.0 / params.Ix
    W[10, 4] = 1.0 / params.Iy
    W[11, 5] = 1.0 / params.Iz
    return A, B, W


def discretize(A_c, B_c, W_c, Ts: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Zero-order hold for a nilpotent ``A_c`` (index at most 4).

    ``exp(A_c T) = sum_k A_c^k T^k / k!`` and its integral both truncate after
    the cubic term.
    """
    if Ts <= 0:
        raise ValueError("sample time must be positive")
    A_c = np.asarray(A_c, dtype=float)
    n = A_c.shape[0]
    powers = [np.eye(n)]
    for _ in range(3):
        powers.append(powers[-1] @ A_c)
    if np.any(powers[-1] @ A_c != 0):
        raise ValueError("state matrix is not nilpotent of index <= 4")
    fact = [1.0, 1.0, 2.0, 6.0, 24.0]
    A = sum(P * Ts**k / fact[k] for k, P in enumerate(powers))
    integral = sum(P * Ts ** (k + 1) / fact[k + 1] for k, P in enumerate(powers))
    return A, integral @ np.asarray(B_c, float), integral @ np.asarray(W_c, float)


def step(A, B, W, x, u, w=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (A.shape[1],) or u.shape != (B.shape[1],):
        raise ValueError("state or input has the wrong length")
    out = A @ x + B @ u
    if w is not None:
        w = np.asarray(w, dtype=float)
        if w.shape != (W.shape[1],):
            raise ValueError("disturbance has the wrong length")
        out = out + W @ w
    return out


def collision_update(state, params: QuadrotorParams, delta: float
                     ) -> tuple[np.ndarray, QuadrotorParams]:
    """Inelastic pickup of a resting mass: linear momentum is conserved."""
    if delta < 0:
        raise ValueError("added mass must be nonnegative")
    x = np.array(state, dtype=float)
    idx = list(LINEAR_VELOCITY)
    x[idx] = x[idx] * (params.m / (params.m + delta))
    return x, params.with_added_mass(delta)


def reset_matrix(params: QuadrotorParams, delta: float) -> np.ndarray:
    """Linear map of :func:`collision_update` on the state."""
    D = np.eye(N_STATE)
    for i in LINEAR_VELOCITY:
        D[i, i] = params.m / (params.m + delta)
    return D
