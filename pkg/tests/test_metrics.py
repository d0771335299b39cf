import numpy as np
import pytest

from dynavio.geometry import quat_from_rotvec, quat_mult, quat_to_rot, rot_error_angle
from dynavio.metrics import (evaluate_arrays, force_rmse, match_timestamps,
                             rotation_rmse_deg, translation_rmse)


def _traj(n=50, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n) / 30.0
    p = rng.standard_normal((n, 3))
    q = np.array([quat_from_rotvec(0.3 * rng.standard_normal(3)) for _ in range(n)])
    f = rng.standard_normal((n, 3))
    return t, p, q, f


class TestMatching:
    def test_nearest_within_tolerance(self):
        t_ref = np.arange(100) / 100.0
        t_est = np.array([0.0501, 0.3702, 0.9904])
        ia, ib = match_timestamps(t_est, t_ref)
        assert list(ia) == [0, 1, 2]
        assert list(ib) == [5, 37, 99]

    def test_pairs_outside_tolerance_dropped(self):
        t_ref = np.array([0.0, 1.0])
        t_est = np.array([0.0004, 0.498, 1.0008])
        ia, _ = match_timestamps(t_est, t_ref)
        assert list(ia) == [0, 2]

    def test_downsampled_estimate_matches_dense_truth(self):
        t_ref = np.arange(400) / 400.0
        t_est = np.arange(12) / 30.0
        ia, ib = match_timestamps(t_est, t_ref)
        assert ia.size == 12
        assert np.all(np.abs(t_ref[ib] - t_est) <= 1e-3 + 1e-12)


class TestScalarMetrics:
    def test_identical_trajectories_give_zero(self):
        t, p, q, f = _traj()
        assert translation_rmse(p, p) == 0.0
        assert rotation_rmse_deg(q, q) == 0.0
        out = force_rmse(f, f)
        assert out["norm"] == 0.0 and out["x"] == 0.0

    def test_constant_z_offset_is_exact(self):
        t, p, q, f = _traj()
        shifted = p + np.array([0.0, 0.0, 0.1])
        assert translation_rmse(shifted, p) == pytest.approx(0.1, abs=1e-12)

    def test_zero_estimate_vs_constant_force(self):
        f_true = np.tile([0.0, 0.0, 2.0], (40, 1))
        out = force_rmse(np.zeros((40, 3)), f_true)
        assert out["norm"] == pytest.approx(2.0, abs=1e-12)
        assert out["z"] == pytest.approx(2.0, abs=1e-12)
        assert out["x"] == 0.0 and out["y"] == 0.0

    def test_fixed_rotation_offset_recovered_in_degrees(self):
        t, p, q, f = _traj()
        dq = quat_from_rotvec(np.radians(5.0) * np.array([0.0, 1.0, 0.0]) )
        rotated = np.array([quat_mult(qi, dq) for qi in q])
        assert rotation_rmse_deg(rotated, q) == pytest.approx(5.0, abs=1e-9)

    def test_rotation_metric_agrees_with_matrix_geodesic(self):
        rng = np.random.default_rng(3)
        qa = quat_from_rotvec(rng.standard_normal(3))
        qb = quat_from_rotvec(rng.standard_normal(3))
        ang = rot_error_angle(quat_to_rot(qa), quat_to_rot(qb))
        got = rotation_rmse_deg(qa[None], qb[None])
        assert got == pytest.approx(np.degrees(ang), rel=1e-9)

    def test_nan_force_rows_are_ignored(self):
        f_est = np.array([[np.nan] * 3, [0.0, 0.0, 1.0], [0.0, 0.0, 3.0]])
        f_true = np.tile([0.0, 0.0, 2.0], (3, 1))
        out = force_rmse(f_est, f_true)
        assert out["norm"] == pytest.approx(1.0, abs=1e-12)

    def test_all_nan_force_reports_nan(self):
        out = force_rmse(np.full((4, 3), np.nan), np.zeros((4, 3)))
        assert np.isnan(out["norm"]) and np.isnan(out["x"])


class TestEvaluate:
    def test_perfect_estimate_all_zero(self):
        t, p, q, f = _traj()
        rep = evaluate_arrays((t, p, q, f), (t, p, q, f))
        assert rep["translation_rmse_m"] == 0.0
        assert rep["rotation_rmse_deg"] == 0.0
        assert rep["force_rmse_mps2"]["norm"] == 0.0
        assert rep["n_pairs"] == t.size

    def test_reordering_pairs_leaves_rmse_unchanged(self):
        t, p, q, f = _traj()
        perm = np.random.default_rng(1).permutation(t.size)
        shifted = p + np.array([0.0, 0.0, 0.1])
        a = evaluate_arrays((t, shifted, q, f), (t, p, q, f))
        b = evaluate_arrays((t[perm], shifted[perm], q[perm], f[perm]),
                            (t, p, q, f))
        assert a["translation_rmse_m"] == pytest.approx(
            b["translation_rmse_m"], abs=1e-15)
        assert a["rotation_rmse_deg"] == pytest.approx(
            b["rotation_rmse_deg"], abs=1e-12)

    def test_mass_converts_force_to_newtons(self):
        t, p, q, f = _traj()
        rep = evaluate_arrays((t, p, q, np.zeros_like(f)),
                              (t, p, q, np.tile([0.0, 0.0, 2.0], (t.size, 1))),
                              mass=1.5)
        assert rep["force_rmse_n"]["norm"] == pytest.approx(3.0, abs=1e-12)

    def test_disjoint_timestamps_raise(self):
        t, p, q, f = _traj()
        with pytest.raises(ValueError):
            evaluate_arrays((t + 100.0, p, q, f), (t, p, q, f))
