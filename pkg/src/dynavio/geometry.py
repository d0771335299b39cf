"""Quaternion and rotation primitives.

Conventions used across the whole package:

* Quaternions are numpy arrays ``[w, x, y, z]`` (Hamilton product, scalar
  first).  Most functions broadcast over leading dimensions, so ``(N, 4)``
  stacks work directly.
* ``q_wb`` rotates body-frame vectors into the world frame:
  ``v_w = quat_to_rot(q_wb) @ v_b``.
* Body-rate kinematics: ``q_dot = 0.5 * q (x) [0, omega_body]``.

All functions are pure; inputs are never mutated.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "GRAVITY_W",
    "quat_identity",
    "quat_normalize",
    "quat_mult",
    "quat_conj",
    "quat_rotate",
    "quat_to_rot",
    "rot_to_quat",
    "quat_from_rotvec",
    "quat_log",
    "quat_integrate",
    "quat_left",
    "quat_right",
    "rot_error_angle",
    "skew",
    "so3_jr",
    "so3_jr_inv",
]

# World gravity, m/s^2, z-up world frame.
GRAVITY_W = np.array([0.0, 0.0, -9.79])

_UNIT_TOL = 1e-6


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def _check_finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input")


def quat_normalize(q) -> np.ndarray:
    """Return q scaled to unit norm. Raises on zero or non-finite input."""
    q = np.asarray(q, dtype=float)
    _check_finite(q)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ValueError("cannot normalize near-zero quaternion")
    return q / n


def quat_mult(a, b) -> np.ndarray:
    """Hamilton product a (x) b, broadcasting over leading dims."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    out = q.copy()
    out[..., 1:] *= -1.0
    return out


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector(s) v by quaternion(s) q: R(q) @ v."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    qv = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(qv, v)
    return v + w * t + np.cross(qv, t)


def quat_to_rot(q) -> np.ndarray:
    """3x3 rotation matrix of a unit quaternion (batched: (..., 3, 3)).

    Raises ValueError if any quaternion deviates from unit norm by more
    than 1e-6.
    """
    q = np.asarray(q, dtype=float)
    _check_finite(q)
    n = np.linalg.norm(q, axis=-1)
    if np.any(np.abs(n - 1.0) > _UNIT_TOL):
        raise ValueError("quaternion not unit-norm")
    w, x, y, z = np.moveaxis(q, -1, 0)
    rows = np.stack(
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
        axis=-1,
    )
    return rows.reshape(q.shape[:-1] + (3, 3))


def rot_to_quat(R) -> np.ndarray:
    """Unit quaternion (w >= 0) of a single 3x3 rotation matrix."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError("expected a single 3x3 matrix")
    tr = np.trace(R)
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    q = q / np.linalg.norm(q)
    if q[0] < 0.0:
        q = -q
    return q


def quat_from_rotvec(phi) -> np.ndarray:
    """Exponential map: rotation vector -> unit quaternion (batched)."""
    phi = np.asarray(phi, dtype=float)
    _check_finite(phi)
    theta = np.linalg.norm(phi, axis=-1, keepdims=True)
    half = 0.5 * theta
    small = theta < 1e-8
    # sin(theta/2)/theta, series for small angles
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(small, 0.5 - theta * theta / 48.0, np.sin(half) / np.where(small, 1.0, theta))
    w = np.cos(half)
    return np.concatenate([w, k * phi], axis=-1)


def quat_log(q) -> np.ndarray:
    """Logarithm map: unit quaternion -> rotation vector (batched)."""
    q = np.asarray(q, dtype=float)
    # work on the w >= 0 hemisphere so the angle is in [0, pi]
    q = np.where(q[..., :1] < 0.0, -q, q)
    w = q[..., 0]
    vec = q[..., 1:]
    s = np.linalg.norm(vec, axis=-1)
    angle = 2.0 * np.arctan2(s, w)
    small = s < 1e-8
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(small, 2.0 / np.where(w == 0.0, 1.0, w), angle / np.where(small, 1.0, s))
    return scale[..., None] * vec


def quat_integrate(q, omega, dt: float) -> np.ndarray:
    """One attitude step under constant body rate over dt.

    Implements q' = normalize(q (x) [1, 0.5*omega*dt]).  dt must lie in
    (0, 0.1) seconds; all inputs must be finite.
    """
    q = np.asarray(q, dtype=float)
    omega = np.asarray(omega, dtype=float)
    _check_finite(q, omega)
    if not np.isfinite(dt):
        raise ValueError("non-finite dt")
    if not (0.0 < dt < 0.1):
        raise ValueError(f"dt out of range (0, 0.1): {dt}")
    half = 0.5 * dt * omega
    dq = np.concatenate([np.ones(omega.shape[:-1] + (1,)), half], axis=-1)
    return quat_normalize(quat_mult(q, dq))


def quat_left(q) -> np.ndarray:
    """4x4 left-product matrix: quat_left(q) @ p == q (x) p."""
    q = np.asarray(q, dtype=float)
    w = q[0]
    v = q[1:]
    out = np.empty((4, 4))
    out[0, 0] = w
    out[0, 1:] = -v
    out[1:, 0] = v
    out[1:, 1:] = w * np.eye(3) + skew(v)
    return out


def quat_right(q) -> np.ndarray:
    """4x4 right-product matrix: quat_right(q) @ p == p (x) q."""
    q = np.asarray(q, dtype=float)
    w = q[0]
    v = q[1:]
    out = np.empty((4, 4))
    out[0, 0] = w
    out[0, 1:] = -v
    out[1:, 0] = v
    out[1:, 1:] = w * np.eye(3) - skew(v)
    return out


def rot_error_angle(Ra, Rb) -> float:
    """Geodesic angle in radians between two rotation matrices, in [0, pi]."""
    Ra = np.asarray(Ra, dtype=float)
    Rb = np.asarray(Rb, dtype=float)
    c = 0.5 * (np.trace(Ra.T @ Rb) - 1.0)
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def skew(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def so3_jr(phi) -> np.ndarray:
    """Right Jacobian of SO(3): Exp(phi + d) ~= Exp(phi) (x) Exp(so3_jr(phi) @ d)."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < 1e-6:
        return np.eye(3) - 0.5 * K + (1.0 / 6.0) * (K @ K)
    c1 = (1.0 - np.cos(theta)) / theta**2
    c2 = (theta - np.sin(theta)) / theta**3
    return np.eye(3) - c1 * K + c2 * (K @ K)


def so3_jr_inv(phi) -> np.ndarray:
    """Inverse right Jacobian: d Log(A Exp(d))/dd = so3_jr_inv(Log(A))."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * K + (1.0 / 12.0) * (K @ K)
    c = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * K + c * (K @ K)
