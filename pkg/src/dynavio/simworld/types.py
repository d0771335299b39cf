"""Data containers shared by the simulator and the dataset IO layer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..geometry import GRAVITY_W


@dataclass(eq=False)
class GroundTruthSample:
    """True vehicle state at one instant.

    f_ext_b is the mass-normalized external force in the body frame (m/s^2).
    a_w carries the analytic world acceleration when the sample came from a
    closed-form trajectory; consumers fall back to finite differences of v_w
    when it is None.
    """

    t: float
    p_w: np.ndarray
    v_w: np.ndarray
    q_wb: np.ndarray
    f_ext_b: np.ndarray
    b_a: np.ndarray
    b_g: np.ndarray
    a_w: Optional[np.ndarray] = None


@dataclass(eq=False)
class ImuSample:
    t: float
    accel: np.ndarray  # specific force, body frame, m/s^2
    gyro: np.ndarray   # body rates, rad/s


@dataclass(eq=False)
class RotorSpeedSample:
    t: float
    omega: np.ndarray  # per-rotor speeds, rad/s, entries >= 0


@dataclass(eq=False)
class LandmarkObservation:
    t: float
    landmark_id: int
    uv: np.ndarray       # ideal pinhole image coordinates (x/z, y/z)
    pixel_sigma: float   # observation noise std in the same normalized units


@dataclass
class ForceProfile:
    """External force model evaluated in the world frame.

    kind: "zero" | "constant_payload" | "elastic_rope" | "wind_gust".
    constant_payload: constant world-frame vector `payload` (m/s^2).
    elastic_rope: pulls toward `anchor` with magnitude
        stiffness * max(0, |p - anchor| - rest_length).
    wind_gust: `magnitude * direction` inside [start, stop], zero outside,
        with smoothstep ramps of width `ramp` at both edges (an ideal step
        would imply a discontinuous attitude and unbounded body rates).
    """

    kind: str = "zero"
    payload: np.ndarray = field(default_factory=lambda: np.zeros(3))
    anchor: np.ndarray = field(default_factory=lambda: np.zeros(3))
    stiffness: float = 0.0
    rest_length: float = 0.0
    direction: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    magnitude: float = 0.0
    start: float = 0.0
    stop: float = 0.0
    ramp: float = 0.25

    KINDS = ("zero", "constant_payload", "elastic_rope", "wind_gust")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown force profile kind: {self.kind!r}")
        self.payload = np.asarray(self.payload, dtype=float)
        self.anchor = np.asarray(self.anchor, dtype=float)
        self.direction = np.asarray(self.direction, dtype=float)


@dataclass
class NoiseConfig:
    """Sensor noise model and sampling rates.

    sigma_a, sigma_gyro, sigma_thrust are per-sample white-noise standard
    deviations (accelerometer m/s^2, gyro rad/s, collective thrust m/s^2
    injected in thrust domain and mapped to rotor speed).  sigma_ba and
    sigma_bg are bias random-walk densities per sqrt(s).  sigma_px is the
    landmark observation noise std in normalized image coordinates.
    """

    sigma_a: float = 0.02
    sigma_gyro: float = 0.002
    sigma_thrust: float = 0.05
    sigma_ba: float = 1e-4
    sigma_bg: float = 1e-5
    sigma_px: float = 0.002
    imu_hz: float = 400.0
    rmu_hz: float = 100.0
    cam_hz: float = 30.0
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_a", "sigma_gyro", "sigma_thrust", "sigma_ba", "sigma_bg", "sigma_px"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("imu_hz", "rmu_hz", "cam_hz"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be > 0")

    def zeroed(self) -> "NoiseConfig":
        """Copy with every noise magnitude set to zero (rates kept)."""
        return NoiseConfig(
            sigma_a=0.0, sigma_gyro=0.0, sigma_thrust=0.0, sigma_ba=0.0, sigma_bg=0.0,
            sigma_px=0.0, imu_hz=self.imu_hz, rmu_hz=self.rmu_hz, cam_hz=self.cam_hz,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        return {
            "sigma_a": self.sigma_a,
            "sigma_gyro": self.sigma_gyro,
            "sigma_thrust": self.sigma_thrust,
            "sigma_ba": self.sigma_ba,
            "sigma_bg": self.sigma_bg,
            "sigma_px": self.sigma_px,
            "imu_hz": self.imu_hz,
            "rmu_hz": self.rmu_hz,
            "cam_hz": self.cam_hz,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseConfig":
        return cls(**{k: d[k] for k in cls().to_dict() if k in d})


@dataclass(eq=False)
class SensorLog:
    """A complete synthetic flight recording."""

    imu: list            # list[ImuSample]
    rotor: list          # list[RotorSpeedSample]
    cam: list            # list[LandmarkObservation]
    truth: list          # list[GroundTruthSample]
    mass: float
    thrust_coeffs: np.ndarray  # (4,)
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY_W.copy())
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    # true landmark positions (K, 3); kept in memory for diagnostics,
    # never serialized, None after a dataset round trip
    landmarks: Optional[np.ndarray] = None
