"""Rigid-body quadrotor with collective-thrust / body-rate actuation.

The body rates follow the (clamped) command directly; the torque-level
attitude loop is not simulated. Thrust acts along the body z-axis and is
rotated into the world frame by the attitude quaternion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mathcore import IDENTITY_QUAT, IntegrationError, quat_deriv, quat_normalize, quat_rotate, rk4_step


class DivergedSimulationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class QuadParams:
    mass: float = 1.5
    g_z: float = 9.81
    f_min: float = 0.0
    f_max: float = 20.0
    omega_min: float = -6.0
    omega_max: float = 6.0
    dt: float = 0.001

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if not self.f_min < self.f_max:
            raise ValueError(f"need f_min < f_max, got [{self.f_min}, {self.f_max}]")
        if not self.omega_min < self.omega_max:
            raise ValueError(f"need omega_min < omega_max, got [{self.omega_min}, {self.omega_max}]")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def hover_thrust(self) -> float:
        return self.mass * self.g_z


@dataclass
class QuadState:
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        self.q = np.asarray(self.q, dtype=np.float64)
        self.omega = np.asarray(self.omega, dtype=np.float64)

    def copy(self) -> "QuadState":
        return QuadState(self.p.copy(), self.v.copy(), self.q.copy(), self.omega.copy())


@dataclass(frozen=True)
class ControlInput:
    thrust: float
    omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=np.float64))

    def as_array(self) -> np.ndarray:
        return np.concatenate(([self.thrust], self.omega))


def clamp_input(u: ControlInput, params: QuadParams) -> ControlInput:
    thrust = min(max(float(u.thrust), params.f_min), params.f_max)
    omega = np.clip(u.omega, params.omega_min, params.omega_max)
    return ControlInput(thrust, omega)


def derivative(s: QuadState, u: ControlInput, params: QuadParams) -> np.ndarray:
    """Time derivative of the 13-vector ``[p, v, q, omega]``.

    ``omega`` tracks the command, so its derivative is reported as zero and
    the attitude kinematics use the commanded rates.
    """
    acc = quat_rotate(s.q, (0.0, 0.0, u.thrust / params.mass))
    acc[2] -= params.g_z
    return np.concatenate((s.v, acc, quat_deriv(s.q, u.omega), np.zeros(3)))


def _flow(u: ControlInput, params: QuadParams):
    a = u.thrust / params.mass
    hx, hy, hz = (0.5 * float(w) for w in u.omega)
    g_z = params.g_z

    def f(x: np.ndarray) -> np.ndarray:
        # scalar arithmetic: far cheaper than numpy calls on 3- and 4-vectors
        _, _, _, vx, vy, vz, w, qx, qy, qz = x.tolist()
        return np.array((
            vx, vy, vz,
            2.0 * a * (qx * qz + w * qy),  # thrust along the third column of R(q)
            2.0 * a * (qy * qz - w * qx),
            a * (1.0 - 2.0 * (qx * qx + qy * qy)) - g_z,
            -qx * hx - qy * hy - qz * hz,  # 0.5 * q ⊗ (0, omega)
            w * hx + qy * hz - qz * hy,
            w * hy - qx * hz + qz * hx,
            w * hz + qx * hy - qy * hx,
        ))

    return f


def step(s: QuadState, u: ControlInput, params: QuadParams) -> QuadState:
    u = clamp_input(u, params)
    x = np.concatenate((s.p, s.v, s.q))
    try:
        x = rk4_step(_flow(u, params), x, params.dt)
    except IntegrationError as exc:
        raise DivergedSimulationError(str(exc)) from exc
    return QuadState(x[0:3], x[3:6], quat_normalize(x[6:10]), u.omega.copy())
