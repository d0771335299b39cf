"""Closed-form reference trajectories and the thrust-aligned attitude builder.

A trajectory prescribes position (and exact derivatives); attitude follows
from the requirement that collective rotor thrust, which can only point
along body +z, balances gravity, external force, and the commanded
acceleration.  Yaw is a free function and is prescribed separately.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from ..geometry import GRAVITY_W, quat_normalize, rot_to_quat
from .types import GroundTruthSample

TRAJECTORY_KINDS = ("hover", "circle", "lemniscate", "polyline")

# Feasibility floors for the attitude construction.
MIN_THRUST = 0.5        # m/s^2 of collective thrust
MIN_UPRIGHT = 0.05      # cos of max tilt from world up


class InfeasibleTrajectoryError(ValueError):
    """Demanded motion cannot be produced by a z-axis thrust vehicle."""


@dataclass
class ContinuousTrajectory:
    """Vectorized callables over time arrays; duration in seconds."""

    duration: float
    position: Callable[[np.ndarray], np.ndarray]
    velocity: Callable[[np.ndarray], np.ndarray]
    acceleration: Callable[[np.ndarray], np.ndarray]
    yaw: Callable[[np.ndarray], np.ndarray]


def make_trajectory(kind: str, duration: float, params: dict | None = None) -> ContinuousTrajectory:
    params = dict(params or {})
    if duration <= 0.0:
        raise ValueError("duration must be > 0")
    yaw0 = float(params.pop("yaw0", 0.0))
    yaw_rate = float(params.pop("yaw_rate", 0.0))

    def yaw(t):
        t = np.asarray(t, dtype=float)
        return yaw0 + yaw_rate * t

    if kind == "hover":
        center = np.asarray(params.pop("center", [0.0, 0.0, 1.0]), dtype=float)
        _reject_unknown(kind, params)

        def pos(t):
            t = np.atleast_1d(np.asarray(t, dtype=float))
            return np.broadcast_to(center, (t.size, 3)).copy()

        zero = lambda t: np.zeros((np.atleast_1d(np.asarray(t)).size, 3))
        return ContinuousTrajectory(duration, pos, zero, zero, yaw)

    if kind == "circle":
        center = np.asarray(params.pop("center", [0.0, 0.0, 1.2]), dtype=float)
        radius = float(params.pop("radius", 2.0))
        period = float(params.pop("period", 10.0))
        z_amp = float(params.pop("z_amplitude", 0.0))
        z_period = float(params.pop("z_period", period / 2.0))
        _reject_unknown(kind, params)
        if radius <= 0.0 or period <= 0.0 or z_period <= 0.0:
            raise ValueError("circle radius/period must be > 0")
        w = 2.0 * np.pi / period
        wz = 2.0 * np.pi / z_period

        def pos(t):
            t = np.atleast_1d(np.asarray(t, dtype=float))
            return center + np.stack(
                [radius * np.cos(w * t), radius * np.sin(w * t), z_amp * np.sin(wz * t)], axis=-1
            )

        def vel(t):
            t = np.atleast_1d(np.asarray(t, dtype=float))
            return np.stack(
                [-radius * w * np.sin(w * t), radius * w * np.cos(w * t),
                 z_amp * wz * np.cos(wz * t)], axis=-1
            )

        def acc(t):
            t = np.atleast_1d(np.asarray(t, dtype=float))
            return np.stack(
                [-radius * w * w * np.cos(w * t), -radius * w * w * np.sin(w * t),
                 -z_amp * wz * wz * np.sin(wz * t)], axis=-1
            )

        return ContinuousTrajectory(duration, pos, vel, acc, yaw)

    if kind == "lemniscate":
        center = np.asarray(params.pop("center", [0.0, 0.0, 1.2]), dtype=float)
        x_amp = float(params.pop("x_amplitude", 2.0))
        y_amp = float(params.pop("y_amplitude", 1.2))
        z_amp = float(params.pop("z_amplitude", 0.25))
        period = float(params.pop("period", 8.0))
        _reject_unknown(kind, params)
        if period <= 0.0:
            raise ValueError("lemniscate period must be > 0")
        w = 2.0 * np.pi / period
        phz = 1.0

        def pos(t):
            t = np.atleast_1d(np.asarray(t, dtype=float))
            return center + np.stack(
                [x_amp * np.sin(w * t), 0.5 * y_amp * np.sin(2.0 * w * t),
                 z_amp * np.sin(w * t + phz)], axis=-1
            )

        def vel(t):
            t = np.atleast_1d(np.asarray(t, dtype=float))
            return np.stack(
                [x_amp * w * np.cos(w * t), y_amp * w * np.cos(2.0 * w * t),
                 z_amp * w * np.cos(w * t + phz)], axis=-1
            )

        def acc(t):
            t = np.atleast_1d(np.asarray(t, dtype=float))
            return np.stack(
                [-x_amp * w * w * np.sin(w * t), -2.0 * y_amp * w * w * np.sin(2.0 * w * t),
                 -z_amp * w * w * np.sin(w * t + phz)], axis=-1
            )

        return ContinuousTrajectory(duration, pos, vel, acc, yaw)

    if kind == "polyline":
        waypoints = np.asarray(params.pop("waypoints", [[0, 0, 1], [2, 0, 1.5], [2, 2, 1]]), dtype=float)
        _reject_unknown(kind, params)
        if waypoints.ndim != 2 or waypoints.shape[0] < 2 or waypoints.shape[1] != 3:
            raise ValueError("polyline needs at least two 3D waypoints")
        knots = np.linspace(0.0, duration, waypoints.shape[0])
        # clamped: zero velocity at both ends, C2 in between
        spline = CubicSpline(knots, waypoints, bc_type="clamped")
        dspline = spline.derivative(1)
        ddspline = spline.derivative(2)

        def pos(t):
            return np.atleast_2d(spline(np.clip(np.asarray(t, dtype=float), 0.0, duration)))

        def vel(t):
            return np.atleast_2d(dspline(np.clip(np.asarray(t, dtype=float), 0.0, duration)))

        def acc(t):
            return np.atleast_2d(ddspline(np.clip(np.asarray(t, dtype=float), 0.0, duration)))

        return ContinuousTrajectory(duration, pos, vel, acc, yaw)

    raise ValueError(f"unknown trajectory kind: {kind!r}")


def _reject_unknown(kind, params):
    if params:
        raise ValueError(f"unknown {kind} parameters: {sorted(params)}")


def thrust_world(a_w: np.ndarray, f_w: np.ndarray, gravity: np.ndarray = GRAVITY_W) -> np.ndarray:
    """Mass-normalized rotor thrust demanded in the world frame.

    From Newton's law a = g + R t_b + f: the rotor thrust vector must supply
    a - g - f.
    """
    return np.asarray(a_w, dtype=float) - gravity - np.asarray(f_w, dtype=float)


def attitude_from_thrust(t_w: np.ndarray, yaw: np.ndarray) -> np.ndarray:
    """Quaternion array (N, 4) with body z along t_w and heading from yaw.

    Raises InfeasibleTrajectoryError when the demanded thrust collapses
    below MIN_THRUST, tilts past ~87 deg from vertical, or the yaw reference
    degenerates with the thrust axis.
    """
    t_w = np.atleast_2d(np.asarray(t_w, dtype=float))
    yaw = np.broadcast_to(np.asarray(yaw, dtype=float), (t_w.shape[0],))
    norms = np.linalg.norm(t_w, axis=1)
    if np.any(norms < MIN_THRUST):
        raise InfeasibleTrajectoryError(
            f"collective thrust demand {norms.min():.3f} m/s^2 below the {MIN_THRUST} floor"
        )
    z_b = t_w / norms[:, None]
    if np.any(z_b[:, 2] < MIN_UPRIGHT):
        raise InfeasibleTrajectoryError(
            "thrust direction tilts more than ~87 deg from vertical"
        )
    x_c = np.stack([np.cos(yaw), np.sin(yaw), np.zeros_like(yaw)], axis=-1)
    y_b = np.cross(z_b, x_c)
    ynorm = np.linalg.norm(y_b, axis=1)
    if np.any(ynorm < 1e-6):
        raise InfeasibleTrajectoryError("yaw reference parallel to thrust axis")
    y_b /= ynorm[:, None]
    x_b = np.cross(y_b, z_b)

    quats = np.empty((t_w.shape[0], 4))
    prev = None
    for i in range(t_w.shape[0]):
        R = np.column_stack([x_b[i], y_b[i], z_b[i]])
        q = rot_to_quat(R)
        if prev is not None and np.dot(q, prev) < 0.0:
            q = -q
        quats[i] = q
        prev = q
    return quat_normalize(quats)


def generate_trajectory(
    kind: str,
    duration: float,
    params: dict | None = None,
    imu_hz: float = 400.0,
) -> list:
    """Sample a trajectory at IMU rate into GroundTruthSample rows.

    Force-free: f_ext_b is zero and the attitude balances gravity alone.
    apply_force_profile recomputes the attitude once forces are known.
    """
    ctraj = make_trajectory(kind, duration, params)
    n = int(round(duration * imu_hz)) + 1
    t = np.arange(n) / imu_hz
    p = ctraj.position(t)
    v = ctraj.velocity(t)
    a = ctraj.acceleration(t)
    q = attitude_from_thrust(thrust_world(a, np.zeros_like(a)), ctraj.yaw(t))
    return [
        GroundTruthSample(
            t=float(t[i]), p_w=p[i].copy(), v_w=v[i].copy(), q_wb=q[i].copy(),
            f_ext_b=np.zeros(3), b_a=np.zeros(3), b_g=np.zeros(3), a_w=a[i].copy(),
        )
        for i in range(n)
    ]
