"""Vector/quaternion helpers and a fixed-step RK4 integrator.

Quaternions are scalar-first ``(w, x, y, z)`` numpy arrays using the Hamilton
product; a unit quaternion rotates body-frame vectors into the world frame.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


class DegenerateQuaternionError(ValueError):
    pass


class IntegrationError(ArithmeticError):
    pass


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.sqrt(q @ q)
    if not np.isfinite(n) or n == 0.0:
        raise DegenerateQuaternionError(f"cannot normalize quaternion {q!r} (norm={n})")
    return q / n


def quat_mul(a, b) -> np.ndarray:
    """Hamilton product ``a ⊗ b``."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate ``v`` by unit quaternion ``q`` (body -> world)."""
    w = q[0]
    u = np.array([q[1], q[2], q[3]])
    v = np.asarray(v, dtype=np.float64)
    # v' = v + 2w(u x v) + 2u x (u x v)
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate(([np.cos(half)], np.sin(half) * axis))


def quat_deriv(q, omega) -> np.ndarray:
    """Attitude kinematics ``q_dot = 0.5 * q ⊗ (0, omega)`` with body-frame rates."""
    return 0.5 * quat_mul(q, (0.0, omega[0], omega[1], omega[2]))


def rk4_step(f: Callable[[np.ndarray], np.ndarray], x, dt: float) -> np.ndarray:
    """One classical Runge-Kutta 4 step of the autonomous system ``x' = f(x)``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=np.float64)
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.isfinite(out).all():
        # any non-finite stage propagates into the result, so one check suffices
        for name, k in (("k1", k1), ("k2", k2), ("k3", k3), ("k4", k4)):
            if not np.isfinite(k).all():
                raise IntegrationError(f"non-finite derivative at stage {name} (dt={dt}, x={x!r})")
        raise IntegrationError(f"non-finite state after step (dt={dt}, x={x!r})")
    return out
