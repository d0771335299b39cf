"""Simulator checks: trajectories, forces, sensor models, dataset IO."""

import numpy as np
import pytest

from dynavio.geometry import (
    GRAVITY_W,
    quat_integrate,
    quat_to_rot,
    rot_error_angle,
)
from dynavio.simworld import (
    DatasetParseError,
    DatasetValidationError,
    ForceProfile,
    InfeasibleTrajectoryError,
    NoiseConfig,
    apply_force_profile,
    attitude_from_thrust,
    generate_trajectory,
    make_trajectory,
    profile_force_world,
    read_log,
    simulate_flight,
    synthesize_sensors,
    write_log,
)


def quiet_noise(**kw):
    base = NoiseConfig().zeroed()
    return NoiseConfig.from_dict({**base.to_dict(), **kw})


def reconstructed_thrust(log, sample):
    return float(np.dot(log.thrust_coeffs, sample.omega**2) / log.mass)


class TestTrajectories:
    def test_hover_is_static_identity_attitude(self):
        truth = generate_trajectory("hover", 1.0, {"center": [1.0, -2.0, 1.5]})
        assert len(truth) == 401
        for s in (truth[0], truth[200], truth[-1]):
            np.testing.assert_allclose(s.p_w, [1.0, -2.0, 1.5], atol=1e-12)
            np.testing.assert_allclose(s.v_w, 0.0, atol=1e-12)
            np.testing.assert_allclose(s.q_wb, [1.0, 0.0, 0.0, 0.0], atol=1e-12)

    def test_circle_speed_and_centripetal(self):
        traj = make_trajectory("circle", 10.0, {"radius": 2.0, "period": 10.0, "center": [0, 0, 1.2]})
        t = np.linspace(0.0, 10.0, 101)
        v = traj.velocity(t)
        speed = np.linalg.norm(v, axis=1)
        np.testing.assert_allclose(speed, 2.0 * np.pi * 2.0 / 10.0, rtol=1e-12)
        # acceleration points at the center with magnitude w^2 r
        a = traj.acceleration(t)
        p = traj.position(t) - np.array([0, 0, 1.2])
        w = 2.0 * np.pi / 10.0
        np.testing.assert_allclose(a, -w * w * p, atol=1e-12)

    def test_polyline_hits_waypoints_with_rest_ends(self):
        wps = [[0, 0, 1], [1.5, 0.5, 1.4], [3.0, -1.0, 0.9]]
        traj = make_trajectory("polyline", 6.0, {"waypoints": wps})
        np.testing.assert_allclose(traj.position(0.0)[0], wps[0], atol=1e-12)
        np.testing.assert_allclose(traj.position(3.0)[0], wps[1], atol=1e-9)
        np.testing.assert_allclose(traj.position(6.0)[0], wps[2], atol=1e-12)
        np.testing.assert_allclose(traj.velocity(0.0)[0], 0.0, atol=1e-12)
        np.testing.assert_allclose(traj.velocity(6.0)[0], 0.0, atol=1e-9)

    def test_rejects_unknown_kind_and_params(self):
        with pytest.raises(ValueError):
            make_trajectory("figure9", 5.0)
        with pytest.raises(ValueError):
            make_trajectory("circle", 5.0, {"radius": 2.0, "wobble": 1.0})

    def test_thrust_floor_and_tilt_guards(self):
        with pytest.raises(InfeasibleTrajectoryError):
            attitude_from_thrust(np.array([[0.0, 0.0, 0.1]]), np.zeros(1))
        with pytest.raises(InfeasibleTrajectoryError):
            attitude_from_thrust(np.array([[9.79, 0.0, 0.3]]), np.zeros(1))

    def test_aggressive_vertical_bob_is_infeasible(self):
        # peak downward acceleration approaches free fall, demanded thrust collapses
        with pytest.raises(InfeasibleTrajectoryError):
            generate_trajectory(
                "lemniscate", 4.0,
                {"x_amplitude": 0.5, "y_amplitude": 0.3, "z_amplitude": 1.05, "period": 2.0},
            )


class TestForces:
    def test_rope_pull_magnitude(self):
        profile = ForceProfile(
            kind="elastic_rope", anchor=[0.0, 0.0, 0.0], stiffness=2.0, rest_length=1.0
        )
        f = profile_force_world(profile, np.array([0.0]), np.array([[0.0, 0.0, 2.0]]))
        np.testing.assert_allclose(f[0], [0.0, 0.0, -2.0], atol=1e-12)
        # slack inside the rest length
        f = profile_force_world(profile, np.array([0.0]), np.array([[0.0, 0.0, 0.5]]))
        np.testing.assert_allclose(f[0], 0.0, atol=1e-12)

    def test_wind_gust_window_and_plateau(self):
        profile = ForceProfile(
            kind="wind_gust", direction=[0.0, 1.0, 0.0], magnitude=1.5,
            start=2.0, stop=5.0, ramp=0.25,
        )
        t = np.array([0.0, 1.9, 3.5, 4.9, 5.3])
        p = np.zeros((5, 3))
        f = profile_force_world(profile, t, p)
        np.testing.assert_allclose(f[0], 0.0, atol=1e-12)
        np.testing.assert_allclose(f[1], 0.0, atol=1e-12)
        np.testing.assert_allclose(f[2], [0.0, 1.5, 0.0], atol=1e-12)
        assert 0.0 < f[3, 1] < 1.5
        np.testing.assert_allclose(f[4], 0.0, atol=1e-12)

    def test_apply_profile_keeps_path_but_tilts_body(self):
        truth = generate_trajectory("hover", 0.5)
        profile = ForceProfile(kind="constant_payload", payload=[1.0, 0.0, 0.0])
        tilted = apply_force_profile(truth, profile)
        for before, after in zip(truth, tilted):
            np.testing.assert_allclose(after.p_w, before.p_w, atol=1e-12)
            np.testing.assert_allclose(after.v_w, before.v_w, atol=1e-12)
        # thrust leans against the push, force seen in body frame
        s = tilted[10]
        R = quat_to_rot(s.q_wb)
        np.testing.assert_allclose(R @ s.f_ext_b, [1.0, 0.0, 0.0], atol=1e-9)
        assert abs(s.q_wb[0]) < 1.0 - 1e-6


class TestSensorModel:
    def test_hover_accel_and_thrust_read_gravity_magnitude(self):
        log = simulate_flight("hover", 0.5, noise=quiet_noise())
        for s in log.imu[::40]:
            np.testing.assert_allclose(s.accel, [0.0, 0.0, 9.79], atol=1e-9)
            np.testing.assert_allclose(s.gyro, 0.0, atol=1e-9)
        for s in log.rotor[::10]:
            assert abs(reconstructed_thrust(log, s) - 9.79) < 1e-9

    def test_hanging_payload_raises_thrust_demand(self):
        profile = ForceProfile(kind="constant_payload", payload=[0.0, 0.0, -2.0])
        log = simulate_flight("hover", 0.5, profile=profile, noise=quiet_noise())
        assert abs(reconstructed_thrust(log, log.rotor[5]) - 11.79) < 1e-9
        np.testing.assert_allclose(log.imu[20].accel, [0.0, 0.0, 9.79], atol=1e-9)
        np.testing.assert_allclose(log.truth[20].f_ext_b, [0.0, 0.0, -2.0], atol=1e-9)

    def test_force_identity_exact_without_noise(self):
        # accel - bias - thrust == body-frame external force, sample by sample
        profile = ForceProfile(
            kind="elastic_rope", anchor=[0.0, 0.0, 0.0], stiffness=1.0, rest_length=1.0
        )
        log = simulate_flight(
            "circle", 2.0, {"radius": 2.0, "period": 10.0}, profile=profile,
            noise=quiet_noise(),
        )
        imu_by_t = {s.t: i for i, s in enumerate(log.imu)}
        for rs in log.rotor[::7]:
            i = imu_by_t[rs.t]
            t_hat = np.array([0.0, 0.0, reconstructed_thrust(log, rs)])
            f_rec = log.imu[i].accel - log.truth[i].b_a - t_hat
            np.testing.assert_allclose(f_rec, log.truth[i].f_ext_b, atol=1e-9)

    def test_gyro_integrates_back_to_truth(self):
        errs = []
        for hz in (200.0, 400.0):
            log = simulate_flight(
                "circle", 3.3, {"radius": 2.0, "period": 10.0, "yaw_rate": 0.3},
                noise=quiet_noise(imu_hz=hz, rmu_hz=hz / 4.0),
            )
            q = log.truth[0].q_wb.copy()
            dt = 1.0 / hz
            for s in log.imu[:-1]:
                q = quat_integrate(q, s.gyro, dt)
            errs.append(rot_error_angle(quat_to_rot(q), quat_to_rot(log.truth[-1].q_wb)))
        assert errs[1] < np.radians(0.2)
        assert errs[0] / errs[1] > 1.5  # halving dt shrinks the drift

    def test_bias_walks_and_init_bias(self):
        noise = quiet_noise(sigma_ba=1e-3, sigma_bg=1e-4)
        log = simulate_flight(
            "hover", 1.0, noise=noise, init_ba=[0.05, -0.02, 0.01], init_bg=[0.001, 0.002, -0.001]
        )
        np.testing.assert_allclose(log.truth[0].b_a, [0.05, -0.02, 0.01], atol=1e-15)
        np.testing.assert_allclose(log.truth[0].b_g, [0.001, 0.002, -0.001], atol=1e-15)
        ba = np.array([s.b_a for s in log.truth])
        assert np.std(ba, axis=0).max() > 0.0
        # measured accel carries the walked bias
        i = 123
        R = quat_to_rot(log.truth[i].q_wb)
        sf = R.T @ (log.truth[i].a_w - GRAVITY_W)
        np.testing.assert_allclose(log.imu[i].accel, sf + log.truth[i].b_a, atol=1e-12)

    def test_every_frame_sees_enough_landmarks(self):
        log = simulate_flight("lemniscate", 3.0, noise=quiet_noise())
        counts = {}
        for obs in log.cam:
            counts[obs.t] = counts.get(obs.t, 0) + 1
        assert len(counts) > 0
        assert min(counts.values()) >= 20

    def test_camera_and_rotor_share_imu_timestamps(self):
        log = simulate_flight("circle", 1.0, noise=quiet_noise())
        imu_t = {s.t for s in log.imu}
        assert all(s.t in imu_t for s in log.rotor)
        assert all(o.t in imu_t for o in log.cam)

    def test_same_seed_reproduces_every_stream(self):
        noise = NoiseConfig(seed=7)
        a = simulate_flight("circle", 1.0, noise=noise)
        b = simulate_flight("circle", 1.0, noise=noise)
        assert all(np.array_equal(x.accel, y.accel) for x, y in zip(a.imu, b.imu))
        assert all(np.array_equal(x.omega, y.omega) for x, y in zip(a.rotor, b.rotor))
        assert len(a.cam) == len(b.cam)
        assert all(np.array_equal(x.uv, y.uv) for x, y in zip(a.cam, b.cam))
        c = simulate_flight("circle", 1.0, noise=NoiseConfig(seed=8))
        assert not np.array_equal(a.imu[0].accel, c.imu[0].accel)

    def test_rejects_bad_setup(self):
        truth = generate_trajectory("hover", 0.1)
        with pytest.raises(ValueError):
            synthesize_sensors(truth, 0.0, [1e-6] * 4)
        with pytest.raises(ValueError):
            synthesize_sensors(truth, 1.0, [1e-6] * 3)
        truth[3].t += 1e-3  # knock a sample off the tick grid
        with pytest.raises(ValueError):
            synthesize_sensors(truth, 1.0, [1e-6] * 4)


class TestDatasetIO:
    def make_log(self):
        return simulate_flight(
            "circle", 0.6, {"radius": 2.0, "period": 10.0},
            profile=ForceProfile(kind="constant_payload", payload=[0.3, 0.0, -1.0]),
            noise=NoiseConfig(seed=3),
        )

    def test_round_trip(self, tmp_path):
        log = self.make_log()
        write_log(log, tmp_path / "flight")
        back = read_log(tmp_path / "flight")
        assert back.mass == log.mass
        np.testing.assert_allclose(back.thrust_coeffs, log.thrust_coeffs, rtol=0)
        np.testing.assert_allclose(back.gravity, log.gravity, rtol=0)
        assert back.noise.to_dict() == log.noise.to_dict()
        assert back.landmarks is None
        assert len(back.imu) == len(log.imu)
        for x, y in zip(back.imu, log.imu):
            assert x.t == y.t  # same %.9g string parses to the same float
            np.testing.assert_allclose(x.accel, y.accel, rtol=1e-8, atol=1e-12)
        for x, y in zip(back.truth, log.truth):
            np.testing.assert_allclose(x.q_wb, y.q_wb, rtol=0, atol=1e-8)
            np.testing.assert_allclose(x.f_ext_b, y.f_ext_b, rtol=1e-6, atol=1e-9)
        ids_a = [o.landmark_id for o in back.cam]
        ids_b = [o.landmark_id for o in log.cam]
        assert ids_a == ids_b

    def test_write_is_deterministic(self, tmp_path):
        log = self.make_log()
        write_log(log, tmp_path / "a")
        write_log(log, tmp_path / "b")
        for name in ("imu.csv", "rotor.csv", "cam.csv", "truth.csv", "meta.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_parse_and_validation_errors(self, tmp_path):
        log = self.make_log()
        root = write_log(log, tmp_path / "flight")

        imu = root / "imu.csv"
        body = imu.read_text().splitlines()

        imu.write_text("\n".join(["time,ax,ay,az,gx,gy,gz"] + body[1:]) + "\n")
        with pytest.raises(DatasetParseError, match=r"imu\.csv:1"):
            read_log(root)

        imu.write_text("\n".join(body[:5] + [body[5] + ",0.1"] + body[6:]) + "\n")
        with pytest.raises(DatasetParseError, match=r"imu\.csv:6"):
            read_log(root)

        bad = body[5].split(",")
        bad[2] = "fast"
        imu.write_text("\n".join(body[:5] + [",".join(bad)] + body[6:]) + "\n")
        with pytest.raises(DatasetParseError, match="non-numeric"):
            read_log(root)

        imu.write_text("\n".join(body[:5] + [body[3]] + body[6:]) + "\n")
        with pytest.raises(DatasetValidationError, match="strictly increasing"):
            read_log(root)

        imu.write_text("\n".join(body) + "\n")
        truth = root / "truth.csv"
        rows = truth.read_text().splitlines()
        cols = rows[1].split(",")
        cols[7] = "2.0"  # breaks unit quaternion
        truth.write_text("\n".join([rows[0], ",".join(cols)] + rows[2:]) + "\n")
        with pytest.raises(DatasetValidationError, match="unit length"):
            read_log(root)
