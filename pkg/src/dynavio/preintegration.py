"""Relative-motion preintegration between keyframes.

Two integrators over the same IMU-rate stream:

DynPreintegration folds rotor thrust into the kinematics and accumulates a
running external-force integral alongside the usual position/velocity
deltas.  Its 18-dim error state is [d_alpha, d_beta, d_fsum, d_theta,
d_ba, d_bg]; the attitude error is marginalized out when the block is
finalized, leaving a 15x15 covariance over [alpha, beta, favg, ba, bg].

ImuPreintegration is the accelerometer/gyro-only counterpart with the
15-dim error state [d_alpha, d_beta, d_theta, d_ba, d_bg].

Both propagate covariance as P <- F P F^T + G Q G^T and the bias Jacobian
as J <- F J, where F and G are the exact derivatives of one integration
step.  White-noise sigmas are per sample; bias-walk sigmas are per sqrt
second.  Finalized blocks support first-order re-correction of their
integrals when the linearization biases move, which is what keeps the
correction error quadratic in the bias shift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import quat_from_rotvec, quat_mult, quat_normalize, quat_to_rot, skew


@dataclass(eq=False)
class FusedImu:
    """IMU-rate stream with rotor thrust held onto every tick."""

    t: np.ndarray       # (N,)
    accel: np.ndarray   # (N, 3)
    gyro: np.ndarray    # (N, 3)
    thrust: np.ndarray  # (N,) mass-normalized collective thrust, body z


def fuse_streams(imu: list, rotor: list, mass: float, thrust_coeffs) -> FusedImu:
    """Attach the latest rotor-derived thrust to each IMU tick.

    Thrust per unit mass is sum(tau_i * omega_i^2) / m, held constant
    between rotor samples (ticks before the first sample use the first).
    """
    if not imu:
        raise ValueError("empty imu stream")
    if not rotor:
        raise ValueError("empty rotor stream")
    coeffs = np.asarray(thrust_coeffs, dtype=float)
    t = np.array([s.t for s in imu])
    accel = np.array([s.accel for s in imu], dtype=float)
    gyro = np.array([s.gyro for s in imu], dtype=float)
    rt = np.array([s.t for s in rotor])
    collective = np.array([s.omega for s in rotor], dtype=float) ** 2 @ coeffs / float(mass)
    idx = np.searchsorted(rt, t + 1e-9, side="right") - 1
    idx = np.clip(idx, 0, rt.size - 1)
    return FusedImu(t=t, accel=accel, gyro=gyro, thrust=collective[idx])


def segment(fused: FusedImu, t0: float, t1: float):
    """Integration steps covering [t0, t1] with sample-and-hold integrands.

    Returns (dts, accel, gyro, thrust); off-grid boundaries produce partial
    first/last steps fed by the latest sample at or before them.
    """
    t = fused.t
    eps = 1e-9
    if t1 <= t0:
        raise ValueError("segment needs t1 > t0")
    if t0 < t[0] - eps or t1 > t[-1] + eps:
        raise ValueError("segment outside the fused stream")
    inner = t[(t > t0 + eps) & (t < t1 - eps)]
    bps = np.concatenate([[t0], inner, [t1]])
    dts = np.diff(bps)
    src = np.clip(np.searchsorted(t, bps[:-1] + eps, side="right") - 1, 0, t.size - 1)
    return dts, fused.accel[src], fused.gyro[src], fused.thrust[src]


def _rotation_step(gyro, lin_bg, dt):
    """Delta quaternion of one step and its exact error-transport pieces."""
    u = 0.5 * (gyro - lin_bg) * dt
    s = 1.0 + u @ u
    dq = np.concatenate([[1.0], u]) / np.sqrt(s)
    transport = (dt / s) * (np.eye(3) - skew(u))
    return dq, quat_to_rot(dq), transport


class DynPreintegration:
    """Thrust-driven preintegration with an external-force integral."""

    def __init__(self, lin_ba, lin_bg, sigma_thrust, sigma_a, sigma_gyro, sigma_ba, sigma_bg):
        self.lin_ba = np.asarray(lin_ba, dtype=float).copy()
        self.lin_bg = np.asarray(lin_bg, dtype=float).copy()
        self.alpha = np.zeros(3)
        self.beta = np.zeros(3)
        self.fsum = np.zeros(3)
        self.gamma = np.array([1.0, 0.0, 0.0, 0.0])
        self.dt_total = 0.0
        self.P = np.zeros((18, 18))
        self.J = np.eye(18)
        # noise order: [n_thrust, n_gyro, n_bg, n_a, n_ba]
        self._Q = np.diag(
            np.concatenate([
                np.full(3, sigma_thrust**2), np.full(3, sigma_gyro**2),
                np.full(3, sigma_bg**2), np.full(3, sigma_a**2), np.full(3, sigma_ba**2),
            ])
        )

    def add(self, accel, gyro, thrust, dt):
        accel = np.asarray(accel, dtype=float)
        gyro = np.asarray(gyro, dtype=float)
        dt = float(dt)
        if dt <= 0.0:
            raise ValueError("dt must be > 0")
        R = quat_to_rot(self.gamma)
        t_vec = np.array([0.0, 0.0, float(thrust)])
        f = accel - self.lin_ba - t_vec
        dq, R_d, D = _rotation_step(gyro, self.lin_bg, dt)
        rdt = np.sqrt(dt)

        F = np.eye(18)
        F[0:3, 3:6] = dt * np.eye(3)
        F[0:3, 9:12] = -0.5 * dt * dt * R @ skew(t_vec)
        F[3:6, 9:12] = -dt * R @ skew(t_vec)
        F[6:9, 9:12] = -dt * R @ skew(f)
        F[6:9, 12:15] = -dt * R
        F[9:12, 9:12] = R_d.T
        F[9:12, 15:18] = -D

        G = np.zeros((18, 15))
        G[0:3, 0:3] = -0.5 * dt * dt * R
        G[3:6, 0:3] = -dt * R
        G[6:9, 0:3] = dt * R       # thrust noise leaks into the force row with flipped sign
        G[9:12, 3:6] = -D
        G[15:18, 6:9] = rdt * np.eye(3)
        G[6:9, 9:12] = -dt * R
        G[12:15, 12:15] = rdt * np.eye(3)

        self.P = F @ self.P @ F.T + G @ self._Q @ G.T
        self.J = F @ self.J
        self.alpha = self.alpha + self.beta * dt + 0.5 * R @ t_vec * dt * dt
        self.beta = self.beta + R @ t_vec * dt
        self.fsum = self.fsum + R @ f * dt
        self.gamma = quat_normalize(quat_mult(self.gamma, dq))
        self.dt_total += dt
        return F, G

    def finalize(self, t0: float) -> "DynBlock":
        if self.dt_total <= 0.0:
            raise ValueError("nothing integrated")
        span = self.dt_total
        # report the force integral as an interval average; rescale the
        # corresponding covariance/Jacobian rows to match
        P = self.P.copy()
        P[6:9, :] /= span
        P[:, 6:9] /= span
        J = self.J.copy()
        J[6:9, :] /= span
        J[:, 6:9] *= span
        keep = np.r_[0:9, 12:18]
        return DynBlock(
            t0=float(t0), t1=float(t0) + span, dt=span,
            lin_ba=self.lin_ba.copy(), lin_bg=self.lin_bg.copy(),
            alpha=self.alpha.copy(), beta=self.beta.copy(), favg=self.fsum / span,
            gamma=self.gamma.copy(), P=P[np.ix_(keep, keep)], J=J,
        )


@dataclass(eq=False)
class DynBlock:
    """Finalized thrust-kinematics block between two keyframes.

    P is 15x15 over [alpha, beta, favg, ba, bg]; J is the scaled 18x18
    error-transport Jacobian whose bias columns feed corrected_terms.
    """

    t0: float
    t1: float
    dt: float
    lin_ba: np.ndarray
    lin_bg: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    favg: np.ndarray
    gamma: np.ndarray
    P: np.ndarray
    J: np.ndarray

    def corrected_terms(self, ba, bg):
        """First-order re-correction of (alpha, beta, favg) to new biases."""
        dba = np.asarray(ba, dtype=float) - self.lin_ba
        dbg = np.asarray(bg, dtype=float) - self.lin_bg
        J = self.J
        alpha = self.alpha + J[0:3, 12:15] @ dba + J[0:3, 15:18] @ dbg
        beta = self.beta + J[3:6, 12:15] @ dba + J[3:6, 15:18] @ dbg
        favg = self.favg + J[6:9, 12:15] @ dba + J[6:9, 15:18] @ dbg
        return alpha, beta, favg

    def p12(self) -> np.ndarray:
        """Covariance over the residual rows [alpha, beta, favg, ba-walk]."""
        return self.P[:12, :12]

    def p9(self) -> np.ndarray:
        """Covariance over [alpha, beta, ba-walk], the force-agnostic rows."""
        idx = np.r_[0:6, 9:12]
        return self.P[np.ix_(idx, idx)]

    def to_dict(self) -> dict:
        return {
            "t0": self.t0, "t1": self.t1, "dt": self.dt,
            "alpha": self.alpha.tolist(), "beta": self.beta.tolist(),
            "favg": self.favg.tolist(), "gamma": self.gamma.tolist(),
            "p_diag": np.diag(self.P).tolist(),
        }


class ImuPreintegration:
    """Accelerometer/gyro preintegration (no thrust, no force integral)."""

    def __init__(self, lin_ba, lin_bg, sigma_a, sigma_gyro, sigma_ba, sigma_bg):
        self.lin_ba = np.asarray(lin_ba, dtype=float).copy()
        self.lin_bg = np.asarray(lin_bg, dtype=float).copy()
        self.alpha = np.zeros(3)
        self.beta = np.zeros(3)
        self.gamma = np.array([1.0, 0.0, 0.0, 0.0])
        self.dt_total = 0.0
        self.P = np.zeros((15, 15))
        self.J = np.eye(15)
        # noise order: [n_a, n_gyro, n_ba, n_bg]
        self._Q = np.diag(
            np.concatenate([
                np.full(3, sigma_a**2), np.full(3, sigma_gyro**2),
                np.full(3, sigma_ba**2), np.full(3, sigma_bg**2),
            ])
        )

    def add(self, accel, gyro, dt):
        accel = np.asarray(accel, dtype=float)
        gyro = np.asarray(gyro, dtype=float)
        dt = float(dt)
        if dt <= 0.0:
            raise ValueError("dt must be > 0")
        R = quat_to_rot(self.gamma)
        a = accel - self.lin_ba
        dq, R_d, D = _rotation_step(gyro, self.lin_bg, dt)
        rdt = np.sqrt(dt)

        F = np.eye(15)
        F[0:3, 3:6] = dt * np.eye(3)
        F[0:3, 6:9] = -0.5 * dt * dt * R @ skew(a)
        F[0:3, 9:12] = -0.5 * dt * dt * R
        F[3:6, 6:9] = -dt * R @ skew(a)
        F[3:6, 9:12] = -dt * R
        F[6:9, 6:9] = R_d.T
        F[6:9, 12:15] = -D

        G = np.zeros((15, 12))
        G[0:3, 0:3] = -0.5 * dt * dt * R
        G[3:6, 0:3] = -dt * R
        G[6:9, 3:6] = -D
        G[9:12, 6:9] = rdt * np.eye(3)
        G[12:15, 9:12] = rdt * np.eye(3)

        self.P = F @ self.P @ F.T + G @ self._Q @ G.T
        self.J = F @ self.J
        self.alpha = self.alpha + self.beta * dt + 0.5 * R @ a * dt * dt
        self.beta = self.beta + R @ a * dt
        self.gamma = quat_normalize(quat_mult(self.gamma, dq))
        self.dt_total += dt
        return F, G

    def finalize(self, t0: float) -> "ImuBlock":
        if self.dt_total <= 0.0:
            raise ValueError("nothing integrated")
        return ImuBlock(
            t0=float(t0), t1=float(t0) + self.dt_total, dt=self.dt_total,
            lin_ba=self.lin_ba.copy(), lin_bg=self.lin_bg.copy(),
            alpha=self.alpha.copy(), beta=self.beta.copy(), gamma=self.gamma.copy(),
            P=self.P.copy(), J=self.J.copy(),
        )


@dataclass(eq=False)
class ImuBlock:
    """Finalized IMU block; P is 15x15 over [alpha, beta, theta, ba, bg]."""

    t0: float
    t1: float
    dt: float
    lin_ba: np.ndarray
    lin_bg: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    P: np.ndarray
    J: np.ndarray

    def corrected_terms(self, ba, bg):
        dba = np.asarray(ba, dtype=float) - self.lin_ba
        dbg = np.asarray(bg, dtype=float) - self.lin_bg
        J = self.J
        alpha = self.alpha + J[0:3, 9:12] @ dba + J[0:3, 12:15] @ dbg
        beta = self.beta + J[3:6, 9:12] @ dba + J[3:6, 12:15] @ dbg
        gamma = quat_normalize(
            quat_mult(self.gamma, quat_from_rotvec(J[6:9, 12:15] @ dbg))
        )
        return alpha, beta, gamma

    def theta_bias_jacobian(self) -> np.ndarray:
        return self.J[6:9, 12:15]


def preintegrate_dyn(
    fused: FusedImu, t0: float, t1: float, lin_ba, lin_bg, *,
    sigma_thrust, sigma_a, sigma_gyro, sigma_ba, sigma_bg,
) -> DynBlock:
    dts, accel, gyro, thrust = segment(fused, t0, t1)
    pre = DynPreintegration(
        lin_ba, lin_bg, sigma_thrust=sigma_thrust, sigma_a=sigma_a,
        sigma_gyro=sigma_gyro, sigma_ba=sigma_ba, sigma_bg=sigma_bg,
    )
    for i in range(dts.size):
        pre.add(accel[i], gyro[i], thrust[i], dts[i])
    return pre.finalize(t0)


def preintegrate_imu(
    fused: FusedImu, t0: float, t1: float, lin_ba, lin_bg, *,
    sigma_a, sigma_gyro, sigma_ba, sigma_bg,
) -> ImuBlock:
    dts, accel, gyro, _ = segment(fused, t0, t1)
    pre = ImuPreintegration(
        lin_ba, lin_bg, sigma_a=sigma_a, sigma_gyro=sigma_gyro,
        sigma_ba=sigma_ba, sigma_bg=sigma_bg,
    )
    for i in range(dts.size):
        pre.add(accel[i], gyro[i], dts[i])
    return pre.finalize(t0)
