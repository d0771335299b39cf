"""Synthesize IMU, rotor speed, and camera streams from ground truth.

All randomness flows through one np.random.default_rng(seed) in a fixed
draw order (landmarks, accel bias walk, gyro bias walk, accel noise, gyro
noise, thrust noise, pixel noise), so a given truth + NoiseConfig always
produces byte-identical measurements.
"""

from __future__ import annotations

import numpy as np

from ..geometry import GRAVITY_W as g_w
from ..geometry import quat_conj, quat_log, quat_mult, quat_to_rot
from .types import (
    GroundTruthSample,
    ImuSample,
    LandmarkObservation,
    NoiseConfig,
    RotorSpeedSample,
    SensorLog,
)

# pinhole with normalized image coordinates; optical axis is body +z
Z_MIN = 0.2
TAN_HALF_FOV = 1.0
MIN_VISIBLE = 20


def camera_frame_indices(n: int, imu_hz: float, cam_hz: float) -> np.ndarray:
    """Camera frames live on the IMU tick grid so timestamps match exactly."""
    stride = max(1, int(round(imu_hz / cam_hz)))
    return np.arange(0, n, stride)


def rotor_frame_indices(n: int, imu_hz: float, rmu_hz: float) -> np.ndarray:
    stride = max(1, int(round(imu_hz / rmu_hz)))
    return np.arange(0, n, stride)


def _visible_counts(landmarks, p_cam, r_cam):
    d = landmarks[None, :, :] - p_cam[:, None, :]
    p_c = np.einsum("mji,mkj->mki", r_cam, d)
    z = p_c[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = p_c[..., 0] / z
        v = p_c[..., 1] / z
    vis = (z > Z_MIN) & (np.abs(u) <= TAN_HALF_FOV) & (np.abs(v) <= TAN_HALF_FOV)
    return vis, p_c


def build_landmark_field(
    p_cam: np.ndarray,
    r_cam: np.ndarray,
    rng: np.random.Generator,
    n_base: int = 150,
    min_visible: int = MIN_VISIBLE,
    max_rounds: int = 60,
) -> np.ndarray:
    """Scatter landmarks above the flight volume, topping up any camera
    frame that sees fewer than min_visible of them."""
    lo = p_cam.min(axis=0)
    hi = p_cam.max(axis=0)
    margin = 3.0
    xy = rng.uniform(lo[:2] - margin, hi[:2] + margin, size=(n_base, 2))
    z = rng.uniform(hi[2] + 1.5, hi[2] + 4.0, size=(n_base, 1))
    lms = np.concatenate([xy, z], axis=1)
    for _ in range(max_rounds):
        vis, _ = _visible_counts(lms, p_cam, r_cam)
        counts = vis.sum(axis=1)
        if counts.min() >= min_visible:
            return lms
        worst = int(np.argmin(counts))
        uv = rng.uniform(-0.8, 0.8, size=(24, 2))
        depth = rng.uniform(2.0, 6.0, size=(24, 1))
        p_c = np.concatenate([uv * depth, depth], axis=1)
        lms = np.concatenate([lms, p_cam[worst] + p_c @ r_cam[worst].T], axis=0)
    raise ValueError("could not place enough landmarks in view of every frame")


def synthesize_sensors(
    truth: list,
    mass: float,
    thrust_coeffs,
    noise: NoiseConfig | None = None,
    init_ba=None,
    init_bg=None,
) -> SensorLog:
    """Turn a ground-truth trajectory into a full SensorLog.

    truth rows must lie on the 1/imu_hz tick grid.  Accelerometer measures
    specific force R^T (a_w - g) plus bias and noise; the gyro comes from
    central differences of the true attitude; rotor speeds back-solve the
    collective thrust each rotor must carry, with noise injected in the
    thrust domain; the camera emits normalized-coordinate landmark
    observations.  Returned truth rows carry the walked biases.
    """
    noise = noise if noise is not None else NoiseConfig()
    mass = float(mass)
    thrust_coeffs = np.asarray(thrust_coeffs, dtype=float)
    if mass <= 0.0:
        raise ValueError("mass must be > 0")
    if thrust_coeffs.shape != (4,) or np.any(thrust_coeffs <= 0.0):
        raise ValueError("thrust_coeffs must be four positive scalars")
    n = len(truth)
    if n < 2:
        raise ValueError("need at least two truth samples")

    dt = 1.0 / noise.imu_hz
    t = np.array([s.t for s in truth])
    if np.max(np.abs(t - t[0] - np.arange(n) * dt)) > 1e-9:
        raise ValueError("truth samples must lie on the IMU tick grid")

    p = np.array([s.p_w for s in truth])
    v = np.array([s.v_w for s in truth])
    q = np.array([s.q_wb for s in truth])
    f_b = np.array([s.f_ext_b for s in truth])
    if all(s.a_w is not None for s in truth):
        a_w = np.array([s.a_w for s in truth])
    else:
        a_w = np.gradient(v, dt, axis=0)

    R = quat_to_rot(q)
    rng = np.random.default_rng(noise.seed)

    # 1. landmarks (camera poses depend only on truth, so the rng order holds)
    cam_idx = camera_frame_indices(n, noise.imu_hz, noise.cam_hz)
    landmarks = build_landmark_field(p[cam_idx], R[cam_idx], rng)

    # 2.-3. bias random walks
    init_ba = np.zeros(3) if init_ba is None else np.asarray(init_ba, dtype=float)
    init_bg = np.zeros(3) if init_bg is None else np.asarray(init_bg, dtype=float)
    steps_a = noise.sigma_ba * np.sqrt(dt) * rng.standard_normal((n - 1, 3))
    steps_g = noise.sigma_bg * np.sqrt(dt) * rng.standard_normal((n - 1, 3))
    b_a = init_ba + np.concatenate([np.zeros((1, 3)), np.cumsum(steps_a, axis=0)])
    b_g = init_bg + np.concatenate([np.zeros((1, 3)), np.cumsum(steps_g, axis=0)])

    # 4. accelerometer: specific force + bias + white noise
    sf = np.einsum("nij,nj->ni", R.transpose(0, 2, 1), a_w - g_w)
    accel = sf + b_a + noise.sigma_a * rng.standard_normal((n, 3))

    # 5. gyro: central differences of attitude, one-sided at the ends
    omega = np.empty((n, 3))
    omega[1:-1] = quat_log(quat_mult(quat_conj(q[:-2]), q[2:])) / (2.0 * dt)
    omega[0] = quat_log(quat_mult(quat_conj(q[0]), q[1])) / dt
    omega[-1] = quat_log(quat_mult(quat_conj(q[-2]), q[-1])) / dt
    gyro = omega + b_g + noise.sigma_gyro * rng.standard_normal((n, 3))

    # 6. rotor speeds from collective thrust demand
    rmu_idx = rotor_frame_indices(n, noise.imu_hz, noise.rmu_hz)
    f_w = np.einsum("nij,nj->ni", R, f_b)
    thrust_true = np.linalg.norm(a_w - g_w - f_w, axis=1)
    thrust_meas = thrust_true[rmu_idx] + noise.sigma_thrust * rng.standard_normal(rmu_idx.size)
    thrust_meas = np.maximum(thrust_meas, 0.0)
    speeds = np.sqrt(mass * thrust_meas[:, None] / (4.0 * thrust_coeffs))

    # 7. camera observations, frames ascending, landmark id ascending
    vis, p_c = _visible_counts(landmarks, p[cam_idx], R[cam_idx])
    frame_ids = []
    frame_uv = []
    for m in range(cam_idx.size):
        ids = np.nonzero(vis[m])[0]
        frame_ids.append(ids)
        pc = p_c[m, ids]
        frame_uv.append(pc[:, :2] / pc[:, 2:3])
    n_obs = sum(ids.size for ids in frame_ids)
    px_noise = noise.sigma_px * rng.standard_normal((n_obs, 2))

    cam = []
    k = 0
    for m, ids in enumerate(frame_ids):
        tc = float(t[cam_idx[m]])
        for j, lm in enumerate(ids):
            cam.append(
                LandmarkObservation(
                    t=tc, landmark_id=int(lm),
                    uv=frame_uv[m][j] + px_noise[k], pixel_sigma=noise.sigma_px,
                )
            )
            k += 1

    imu = [ImuSample(t=float(t[i]), accel=accel[i], gyro=gyro[i]) for i in range(n)]
    rotor = [RotorSpeedSample(t=float(t[i]), omega=speeds[j]) for j, i in enumerate(rmu_idx)]
    truth_out = [
        GroundTruthSample(
            t=s.t, p_w=s.p_w.copy(), v_w=s.v_w.copy(), q_wb=s.q_wb.copy(),
            f_ext_b=s.f_ext_b.copy(), b_a=b_a[i], b_g=b_g[i],
            a_w=None if s.a_w is None else s.a_w.copy(),
        )
        for i, s in enumerate(truth)
    ]
    return SensorLog(
        imu=imu, rotor=rotor, cam=cam, truth=truth_out,
        mass=mass, thrust_coeffs=thrust_coeffs, gravity=g_w.copy(), noise=noise,
        landmarks=landmarks,
    )


DEFAULT_MASS = 1.0
DEFAULT_THRUST_COEFFS = (2.5e-6, 2.5e-6, 2.5e-6, 2.5e-6)


def simulate_flight(
    kind: str,
    duration: float,
    traj_params: dict | None = None,
    profile=None,
    noise: NoiseConfig | None = None,
    mass: float = DEFAULT_MASS,
    thrust_coeffs=DEFAULT_THRUST_COEFFS,
    init_ba=None,
    init_bg=None,
) -> SensorLog:
    """One-call scenario: trajectory -> external force -> sensor streams."""
    from .forces import apply_force_profile
    from .trajectory import generate_trajectory
    from .types import ForceProfile

    noise = noise if noise is not None else NoiseConfig()
    truth = generate_trajectory(kind, duration, traj_params, imu_hz=noise.imu_hz)
    profile = profile if profile is not None else ForceProfile(kind="zero")
    truth = apply_force_profile(truth, profile)
    return synthesize_sensors(
        truth, mass, thrust_coeffs, noise, init_ba=init_ba, init_bg=init_bg
    )
