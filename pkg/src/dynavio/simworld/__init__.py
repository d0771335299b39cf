"""Quadrotor flight simulator: trajectories, external forces, sensor
synthesis, and dataset serialization."""

from .dataset import (
    DatasetError,
    DatasetParseError,
    DatasetValidationError,
    read_estimate,
    read_log,
    write_estimate,
    write_log,
)
from .forces import apply_force_profile, profile_force_world
from .sensors import (
    DEFAULT_MASS,
    DEFAULT_THRUST_COEFFS,
    build_landmark_field,
    camera_frame_indices,
    rotor_frame_indices,
    simulate_flight,
    synthesize_sensors,
)
from .trajectory import (
    ContinuousTrajectory,
    InfeasibleTrajectoryError,
    attitude_from_thrust,
    generate_trajectory,
    make_trajectory,
    thrust_world,
)
from .types import (
    ForceProfile,
    GroundTruthSample,
    ImuSample,
    LandmarkObservation,
    NoiseConfig,
    RotorSpeedSample,
    SensorLog,
)

__all__ = [
    "ContinuousTrajectory",
    "DatasetError",
    "DatasetParseError",
    "DatasetValidationError",
    "DEFAULT_MASS",
    "DEFAULT_THRUST_COEFFS",
    "ForceProfile",
    "GroundTruthSample",
    "ImuSample",
    "InfeasibleTrajectoryError",
    "LandmarkObservation",
    "NoiseConfig",
    "RotorSpeedSample",
    "SensorLog",
    "apply_force_profile",
    "attitude_from_thrust",
    "build_landmark_field",
    "camera_frame_indices",
    "generate_trajectory",
    "make_trajectory",
    "profile_force_world",
    "read_estimate",
    "read_log",
    "rotor_frame_indices",
    "simulate_flight",
    "synthesize_sensors",
    "thrust_world",
    "write_estimate",
    "write_log",
]
