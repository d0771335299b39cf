"""Thrust-coefficient identification from hover data.

A hovering quadrotor with coincident centroid and geometric center loads
each rotor with exactly a quarter of its weight, so per-rotor coefficients
decouple into independent scalar regressions of m*g/4 on the squared rotor
speed.  Recursive least squares with a forgetting factor processes the
hover samples online.
"""

from dataclasses import dataclass, field

import numpy as np

from .geometry import GRAVITY_W

N_ROTORS = 4
_G = float(-GRAVITY_W[2])

THETA_INIT = 1e-4
P_INIT = 1e2
FORGETTING_DEFAULT = 0.999

# hover gate
GYRO_LIMIT = 0.05        # rad/s
ACCEL_LIMIT = 0.3        # m/s^2 deviation from |g|
MIN_HOVER_DURATION = 1.0  # s


def _default_theta():
    return np.full(N_ROTORS, THETA_INIT)


def _default_pmat():
    return P_INIT * np.eye(N_ROTORS)


@dataclass
class RlsState:
    """Per-rotor coefficient estimates with their covariance."""

    theta: np.ndarray = field(default_factory=_default_theta)
    Pmat: np.ndarray = field(default_factory=_default_pmat)
    forgetting: float = FORGETTING_DEFAULT

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).reshape(N_ROTORS)
        self.Pmat = np.asarray(self.Pmat, dtype=float).reshape(N_ROTORS, N_ROTORS)
        if not 0.9 < self.forgetting <= 1.0:
            raise ValueError("forgetting must lie in (0.9, 1]")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta must be finite")


def rls_update(state: RlsState, omega_rotor, mass: float) -> RlsState:
    """One recursive least-squares step from a single rotor-speed sample.

    Rotors reporting zero speed carry no information (zero regressor) and
    are skipped.
    """
    if mass <= 0:
        raise ValueError("mass must be positive")
    omega = np.asarray(omega_rotor, dtype=float).reshape(N_ROTORS)
    theta = state.theta.copy()
    P = state.Pmat.copy()
    lam = state.forgetting
    y = mass * _G / N_ROTORS
    for i in range(N_ROTORS):
        phi = omega[i] ** 2
        if phi == 0.0:
            continue
        p = P[i, i]
        k = p * phi / (lam + phi * p * phi)
        theta[i] += k * (y - phi * theta[i])
        P[i, i] = (1.0 - k * phi) * p / lam
    return RlsState(theta=theta, Pmat=P, forgetting=lam)


def detect_hover(log, gyro_limit: float = GYRO_LIMIT,
                 accel_limit: float = ACCEL_LIMIT,
                 min_duration: float = MIN_HOVER_DURATION):
    """Contiguous time spans where the IMU reports near-static flight.

    Returns a list of (t_start, t_end) tuples, possibly empty.
    """
    segments = []
    start = None
    prev_t = None
    for s in log.imu:
        calm = (np.linalg.norm(s.gyro) < gyro_limit
                and abs(np.linalg.norm(s.accel) - _G) < accel_limit)
        if calm:
            if start is None:
                start = s.t
            prev_t = s.t
        elif start is not None:
            if prev_t - start >= min_duration:
                segments.append((start, prev_t))
            start = None
    if start is not None and prev_t - start >= min_duration:
        segments.append((start, prev_t))
    return segments


def identify_from_log(log, forgetting: float = FORGETTING_DEFAULT) -> dict:
    """Run hover detection and RLS over a full log.

    Returns {"tau": [4], "residual_rms": float, "n_samples": int}.
    """
    segments = detect_hover(log)
    state = RlsState(forgetting=forgetting)
    used = []
    for sample in log.rotor:
        if any(t0 <= sample.t <= t1 for t0, t1 in segments):
            state = rls_update(state, sample.omega, log.mass)
            used.append(sample.omega)
    if used:
        phi = np.square(np.stack(used))
        y = log.mass * _G / N_ROTORS
        res = y - phi * state.theta
        rms = float(np.sqrt(np.mean(np.square(res))))
    else:
        rms = 0.0
    return {"tau": [float(v) for v in state.theta],
            "residual_rms": rms,
            "n_samples": len(used)}
