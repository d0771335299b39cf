"""External force profile evaluation.

Profiles are defined in the world frame as a function of time and position.
Applying a profile to a force-free trajectory keeps the flown path identical
but recomputes the attitude: the rotors must now cancel the external force
as well as gravity, so the body tilts into the disturbance.
"""

from __future__ import annotations

import numpy as np

from ..geometry import quat_to_rot
from .trajectory import attitude_from_thrust, thrust_world
from .types import ForceProfile, GroundTruthSample


def profile_force_world(profile: ForceProfile, t: np.ndarray, p_w: np.ndarray) -> np.ndarray:
    """Mass-normalized world-frame external force at (t, p_w), shape (N, 3)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    p_w = np.atleast_2d(np.asarray(p_w, dtype=float))
    out = np.zeros((t.size, 3))

    if profile.kind == "zero":
        return out

    if profile.kind == "constant_payload":
        out[:] = profile.payload
        return out

    if profile.kind == "elastic_rope":
        # pulls toward the anchor once stretched past rest length, slack otherwise
        delta = profile.anchor - p_w
        dist = np.linalg.norm(delta, axis=1)
        taut = dist > profile.rest_length
        stretch = np.where(taut, dist - profile.rest_length, 0.0)
        safe = np.where(dist > 1e-12, dist, 1.0)
        out = profile.stiffness * stretch[:, None] * delta / safe[:, None]
        return out

    if profile.kind == "wind_gust":
        # smoothstep ramp on each edge keeps the force C1 in time
        ramp = max(profile.ramp, 1e-9)
        up = np.clip((t - profile.start) / ramp, 0.0, 1.0)
        down = np.clip((profile.stop - t) / ramp, 0.0, 1.0)
        s = _smoothstep(up) * _smoothstep(down)
        return profile.magnitude * s[:, None] * profile.direction

    raise ValueError(f"unknown force profile kind: {profile.kind!r}")


def _smoothstep(x):
    return x * x * (3.0 - 2.0 * x)


def apply_force_profile(truth: list, profile: ForceProfile, yaw: np.ndarray | None = None) -> list:
    """Rebuild attitude and body-frame force along a sampled trajectory.

    truth: GroundTruthSample rows from generate_trajectory (a_w attached).
    yaw: optional per-sample yaw override; default keeps each sample's
    current heading (extracted from its force-free attitude).
    """
    t = np.array([s.t for s in truth])
    p = np.array([s.p_w for s in truth])
    a = np.array([s.a_w for s in truth])
    f_w = profile_force_world(profile, t, p)

    if yaw is None:
        # heading of the existing body x axis projected to the ground plane
        R = quat_to_rot(np.array([s.q_wb for s in truth]))
        yaw = np.arctan2(R[:, 1, 0], R[:, 0, 0])

    q = attitude_from_thrust(thrust_world(a, f_w), yaw)
    R = quat_to_rot(q)
    f_b = np.einsum("nij,nj->ni", R.transpose(0, 2, 1), f_w)

    out = []
    for i, s in enumerate(truth):
        out.append(
            GroundTruthSample(
                t=s.t, p_w=s.p_w.copy(), v_w=s.v_w.copy(), q_wb=q[i].copy(),
                f_ext_b=f_b[i].copy(), b_a=s.b_a.copy(), b_g=s.b_g.copy(),
                a_w=s.a_w.copy(),
            )
        )
    return out
