"""Factor residual/Jacobian checks.

Every analytic Jacobian is compared against central finite differences of
the residual under manifold perturbations.  Marginalization is checked
against brute-force minimization of a toy quadratic.
"""

import warnings

import numpy as np
import pytest

from dynavio.factors import (
    STATE_DIM,
    DynamicsFactor,
    InertialFactor,
    MargPriorFactor,
    NavState,
    PosePriorFactor,
    boxminus,
    huber_weight,
    inv_psd,
    prior_from_information,
    schur_marginalize,
    visual_linearize,
)
from dynavio.geometry import quat_from_rotvec, quat_normalize
from dynavio.preintegration import DynPreintegration, ImuPreintegration

SIGMAS = dict(sigma_thrust=0.05, sigma_a=0.02, sigma_gyro=0.002, sigma_ba=1e-4, sigma_bg=1e-5)


def random_state(rng):
    return NavState(
        p=rng.normal(0, 2.0, 3),
        v=rng.normal(0, 1.0, 3),
        q=quat_normalize(rng.normal(0, 1.0, 4)),
        ba=rng.normal(0, 0.05, 3),
        bg=rng.normal(0, 0.01, 3),
        f_ext=rng.normal(0, 1.0, 3),
    )


def make_dyn_block(rng, lin_ba, lin_bg, n=40, dt=0.0025):
    pre = DynPreintegration(lin_ba=lin_ba, lin_bg=lin_bg, **SIGMAS)
    for _ in range(n):
        pre.add(rng.normal([0, 0, 9.8], 0.5), rng.normal(0, 0.4, 3), 9.8 + rng.normal(0, 0.3), dt)
    return pre.finalize(t0=0.0)


def make_imu_block(rng, lin_ba, lin_bg, n=40, dt=0.0025):
    pre = ImuPreintegration(
        lin_ba=lin_ba, lin_bg=lin_bg,
        sigma_a=0.02, sigma_gyro=0.002, sigma_ba=1e-4, sigma_bg=1e-5,
    )
    for _ in range(n):
        pre.add(rng.normal([0, 0, 9.8], 0.5), rng.normal(0, 0.4, 3), dt)
    return pre.finalize(t0=0.0)


def fd_two_state(residual_fn, xk, xk1, Jk, Jk1, h=1e-6, atol=2e-5):
    for which, J in ((0, Jk), (1, Jk1)):
        J_num = np.empty_like(J)
        for i in range(STATE_DIM):
            d = np.zeros(STATE_DIM)
            d[i] = h
            states_p = [xk, xk1]
            states_m = [xk, xk1]
            states_p[which] = states_p[which].boxplus(d)
            states_m[which] = states_m[which].boxplus(-d)
            J_num[:, i] = (residual_fn(*states_p) - residual_fn(*states_m)) / (2 * h)
        np.testing.assert_allclose(J, J_num, atol=atol)


class TestStateAlgebra:
    def test_boxplus_boxminus_round_trip(self):
        rng = np.random.default_rng(0)
        x = random_state(rng)
        d = rng.normal(0, 0.1, STATE_DIM)
        np.testing.assert_allclose(boxminus(x.boxplus(d), x), d, atol=1e-9)

    def test_boxplus_zero_is_identity(self):
        x = random_state(np.random.default_rng(1))
        y = x.boxplus(np.zeros(STATE_DIM))
        np.testing.assert_allclose(y.q, x.q, atol=1e-15)
        np.testing.assert_allclose(y.p, x.p, atol=1e-15)


class TestDynamicsFactor:
    @pytest.mark.parametrize("force_index", ["k", "k1"])
    def test_jacobians_match_finite_differences(self, force_index):
        rng = np.random.default_rng(42)
        for _ in range(5):
            lin_ba, lin_bg = rng.normal(0, 0.02, 3), rng.normal(0, 0.005, 3)
            blk = make_dyn_block(rng, lin_ba, lin_bg)
            fac = DynamicsFactor(blk, force_index=force_index)
            xk, xk1 = random_state(rng), random_state(rng)
            r, Jk, Jk1, W = fac.linearize(xk, xk1)
            fd_two_state(lambda a, b: fac.linearize(a, b)[0], xk, xk1, Jk, Jk1)

    def test_vimo_variant_pulls_force_to_zero(self):
        rng = np.random.default_rng(3)
        blk = make_dyn_block(rng, np.zeros(3), np.zeros(3))
        fac = DynamicsFactor(blk, vimo=True, sigma_vimo=0.01)
        xk, xk1 = random_state(rng), random_state(rng)
        r, Jk, Jk1, W = fac.linearize(xk, xk1)
        np.testing.assert_allclose(r[6:9], xk.f_ext, atol=1e-12)
        np.testing.assert_allclose(W[6:9, 6:9], np.eye(3) / 0.01**2, atol=1e-6)
        fd_two_state(lambda a, b: fac.linearize(a, b)[0], xk, xk1, Jk, Jk1)

    def test_zero_residual_at_consistent_states(self):
        # hover: thrust cancels gravity, no force, stationary body
        pre = DynPreintegration(lin_ba=np.zeros(3), lin_bg=np.zeros(3), **SIGMAS)
        n, dt = 100, 0.0025
        for _ in range(n):
            pre.add(np.array([0.0, 0.0, 9.79]), np.zeros(3), 9.79, dt)
        blk = pre.finalize(t0=0.0)
        x = NavState(
            p=np.array([1.0, 2.0, 1.5]), v=np.zeros(3), q=np.array([1.0, 0, 0, 0]),
            ba=np.zeros(3), bg=np.zeros(3), f_ext=np.zeros(3),
        )
        r, *_ = DynamicsFactor(blk).linearize(x, x)
        assert np.abs(r).max() < 1e-10


class TestInertialFactor:
    def test_jacobians_match_finite_differences(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            lin_ba, lin_bg = rng.normal(0, 0.02, 3), rng.normal(0, 0.005, 3)
            blk = make_imu_block(rng, lin_ba, lin_bg)
            fac = InertialFactor(blk)
            xk, xk1 = random_state(rng), random_state(rng)
            r, Jk, Jk1, W = fac.linearize(xk, xk1)
            fd_two_state(lambda a, b: fac.linearize(a, b)[0], xk, xk1, Jk, Jk1)

    def test_zero_residual_on_true_free_motion(self):
        # constant specific force, no rotation: closed-form ballistic flight
        pre = ImuPreintegration(
            lin_ba=np.zeros(3), lin_bg=np.zeros(3),
            sigma_a=0.02, sigma_gyro=0.002, sigma_ba=1e-4, sigma_bg=1e-5,
        )
        n, dt = 200, 0.0025
        a_spec = np.array([0.0, 0.0, 9.79])
        for _ in range(n):
            pre.add(a_spec, np.zeros(3), dt)
        blk = pre.finalize(t0=0.0)
        g = np.array([0.0, 0.0, -9.79])
        T = n * dt
        xk = NavState(
            p=np.zeros(3), v=np.array([0.5, -0.2, 0.1]), q=np.array([1.0, 0, 0, 0]),
            ba=np.zeros(3), bg=np.zeros(3), f_ext=np.zeros(3),
        )
        xk1 = NavState(
            p=xk.v * T + 0.5 * (g + a_spec) * T**2, v=xk.v + (g + a_spec) * T,
            q=np.array([1.0, 0, 0, 0]), ba=np.zeros(3), bg=np.zeros(3), f_ext=np.zeros(3),
        )
        r, *_ = InertialFactor(blk).linearize(xk, xk1)
        assert np.abs(r).max() < 1e-9


class TestGaugeInvariance:
    def test_translation_and_yaw_leave_residuals_unchanged(self):
        rng = np.random.default_rng(11)
        blk_d = make_dyn_block(rng, np.zeros(3), np.zeros(3))
        blk_i = make_imu_block(rng, np.zeros(3), np.zeros(3))
        xk, xk1 = random_state(rng), random_state(rng)
        fd, fi = DynamicsFactor(blk_d), InertialFactor(blk_i)
        r0d = fd.linearize(xk, xk1)[0]
        r0i = fi.linearize(xk, xk1)[0]

        shift = np.array([5.0, -3.0, 2.0])
        qz = quat_from_rotvec([0.0, 0.0, 1.3])
        from dynavio.geometry import quat_mult, quat_rotate

        def moved(x):
            return NavState(
                p=quat_rotate(qz, x.p) + shift, v=quat_rotate(qz, x.v),
                q=quat_normalize(quat_mult(qz, x.q)), ba=x.ba, bg=x.bg, f_ext=x.f_ext,
            )

        r1d = fd.linearize(moved(xk), moved(xk1))[0]
        r1i = fi.linearize(moved(xk), moved(xk1))[0]
        np.testing.assert_allclose(r1d, r0d, atol=1e-9)
        np.testing.assert_allclose(r1i, r0i, atol=1e-9)


class TestVisualFactor:
    def setup_geometry(self, rng, n=6):
        p_a = rng.normal(0, 1.0, (n, 3))
        q_a = quat_normalize(rng.normal(0, 1.0, (n, 4)))
        p_j = p_a + rng.normal(0, 0.5, (n, 3))
        q_j = quat_normalize(q_a + rng.normal(0, 0.05, (n, 4)))
        u_h = np.concatenate([rng.uniform(-0.5, 0.5, (n, 2)), np.ones((n, 1))], axis=1)
        inv_depth = rng.uniform(0.2, 1.0, n)
        obs = rng.uniform(-0.5, 0.5, (n, 2))
        return p_a, q_a, p_j, q_j, u_h, inv_depth, obs

    def test_reprojection_jacobians_match_finite_differences(self):
        rng = np.random.default_rng(19)
        args = self.setup_geometry(rng)
        out = visual_linearize(*args)
        assert out["mask"].all()
        p_a, q_a, p_j, q_j, u_h, lam, obs = args
        h = 1e-7

        def res(pa, qa, pj, qj, lm):
            return visual_linearize(pa, qa, pj, qj, u_h, lm, obs)["r"]

        for name, J in (("J_pa", out["J_pa"]), ("J_pj", out["J_pj"])):
            target = p_a if name == "J_pa" else p_j
            for i in range(3):
                d = np.zeros(3)
                d[i] = h
                rp = res(p_a + d if name == "J_pa" else p_a, q_a,
                         p_j + d if name == "J_pj" else p_j, q_j, lam)
                rm = res(p_a - d if name == "J_pa" else p_a, q_a,
                         p_j - d if name == "J_pj" else p_j, q_j, lam)
                np.testing.assert_allclose(J[:, :, i], (rp - rm) / (2 * h), atol=1e-5)

        for name, J, qs in (("J_tha", out["J_tha"], q_a), ("J_thj", out["J_thj"], q_j)):
            for i in range(3):
                d = np.zeros(3)
                d[i] = h
                dq = quat_from_rotvec(d)
                from dynavio.geometry import quat_mult
                qp = quat_normalize(quat_mult(qs, dq))
                qm = quat_normalize(quat_mult(qs, quat_from_rotvec(-d)))
                rp = res(p_a, qp if name == "J_tha" else q_a, p_j, qp if name == "J_thj" else q_j, lam)
                rm = res(p_a, qm if name == "J_tha" else q_a, p_j, qm if name == "J_thj" else q_j, lam)
                np.testing.assert_allclose(J[:, :, i], (rp - rm) / (2 * h), atol=1e-5)

        rp = res(p_a, q_a, p_j, q_j, lam + h)
        rm = res(p_a, q_a, p_j, q_j, lam - h)
        np.testing.assert_allclose(out["J_lam"], (rp - rm) / (2 * h), atol=1e-5)

    def test_point_behind_camera_is_masked(self):
        p_a = np.zeros((1, 3))
        q_a = np.array([[1.0, 0, 0, 0]])
        p_j = np.array([[0.0, 0.0, 10.0]])  # far past the landmark along the axis
        out = visual_linearize(
            p_a, q_a, p_j, q_a, np.array([[0.0, 0.0, 1.0]]), np.array([0.5]),
            np.zeros((1, 2)),
        )
        assert not out["mask"][0]

    def test_perfect_observation_zero_residual(self):
        # landmark 4 m ahead of the anchor, second camera offset sideways
        lm_w = np.array([0.3, -0.2, 4.0])
        p_a = np.zeros((1, 3))
        q_a = np.array([[1.0, 0, 0, 0]])
        p_j = np.array([[0.5, 0.2, 0.0]])
        q_j = quat_normalize(np.array([[0.99, 0.02, -0.03, 0.01]]))
        from dynavio.geometry import quat_conj, quat_rotate

        u_h = (lm_w / lm_w[2])[None, :]
        lam = np.array([1.0 / lm_w[2]])
        pc_j = quat_rotate(quat_conj(q_j[0]), lm_w - p_j[0])
        obs = (pc_j[:2] / pc_j[2])[None, :]
        out = visual_linearize(p_a, q_a, p_j, q_j, u_h, lam, obs)
        np.testing.assert_allclose(out["r"][0], 0.0, atol=1e-12)


class TestPriors:
    def test_pose_prior_jacobian(self):
        rng = np.random.default_rng(23)
        x0 = random_state(rng)
        fac = PosePriorFactor(x0.p.copy(), x0.q.copy(), sigma_p=1e-3, sigma_theta=1e-3)
        x = x0.boxplus(rng.normal(0, 0.05, STATE_DIM))
        r, J, W = fac.linearize(x)
        h = 1e-6
        J_num = np.zeros((6, STATE_DIM))
        for i in range(STATE_DIM):
            d = np.zeros(STATE_DIM)
            d[i] = h
            J_num[:, i] = (fac.linearize(x.boxplus(d))[0] - fac.linearize(x.boxplus(-d))[0]) / (2 * h)
        np.testing.assert_allclose(J, J_num, atol=1e-6)
        r0, *_ = fac.linearize(x0)
        np.testing.assert_allclose(r0, 0.0, atol=1e-12)

    def test_marginal_prior_jacobian_and_value(self):
        rng = np.random.default_rng(29)
        lin = [random_state(rng), random_state(rng)]
        m = 10
        J0 = rng.normal(0, 1.0, (m, 2 * STATE_DIM))
        r0 = rng.normal(0, 0.1, m)
        fac = MargPriorFactor(keys=[4, 5], lin_states=lin, J=J0, r0=r0)
        states = [lin[0].boxplus(rng.normal(0, 0.02, STATE_DIM)),
                  lin[1].boxplus(rng.normal(0, 0.02, STATE_DIM))]
        r, blocks = fac.linearize(states)
        h = 1e-6
        for which in (0, 1):
            J_num = np.zeros((m, STATE_DIM))
            for i in range(STATE_DIM):
                d = np.zeros(STATE_DIM)
                d[i] = h
                sp = list(states)
                sm = list(states)
                sp[which] = sp[which].boxplus(d)
                sm[which] = sm[which].boxplus(-d)
                J_num[:, i] = (fac.linearize(sp)[0] - fac.linearize(sm)[0]) / (2 * h)
            np.testing.assert_allclose(blocks[which], J_num, atol=2e-5)
        # at the linearization point the residual is exactly r0
        r_at_lin, _ = fac.linearize(lin)
        np.testing.assert_allclose(r_at_lin, r0, atol=1e-12)


class TestRobustAndLinearAlgebra:
    def test_huber_weight_profile(self):
        assert huber_weight(0.5, 1.0) == 1.0
        assert huber_weight(1.0, 1.0) == 1.0
        assert huber_weight(4.0, 1.0) == pytest.approx(0.25)

    def test_inv_psd_recovers_inverse_and_warns_when_degenerate(self):
        rng = np.random.default_rng(31)
        A = rng.normal(0, 1.0, (6, 6))
        M = A @ A.T + 0.1 * np.eye(6)
        np.testing.assert_allclose(inv_psd(M) @ M, np.eye(6), atol=1e-9)
        sing = np.zeros((3, 3))
        sing[0, 0] = 1.0
        with warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always")
            out = inv_psd(sing)
        assert np.isfinite(out).all()
        assert any("regulariz" in str(w.message) for w in rec)

    def test_schur_marginalization_preserves_minimum(self):
        # minimizing the full quadratic over dropped vars must equal the
        # reduced quadratic, up to a constant, for every kept point
        rng = np.random.default_rng(37)
        A = rng.normal(0, 1.0, (9, 9))
        H = A @ A.T + 0.5 * np.eye(9)
        b = rng.normal(0, 1.0, 9)
        drop, keep = np.arange(3), np.arange(3, 9)
        H_r, b_r = schur_marginalize(H, b, drop, keep)

        def full_cost(x_keep, x_drop):
            x = np.concatenate([x_drop, x_keep])
            return 0.5 * x @ H @ x + b @ x

        def reduced_cost(x_keep):
            return 0.5 * x_keep @ H_r @ x_keep + b_r @ x_keep

        offsets = []
        for _ in range(4):
            xk = rng.normal(0, 1.0, 6)
            Hmm = H[np.ix_(drop, drop)]
            rhs = -(b[drop] + H[np.ix_(drop, keep)] @ xk)
            xd = np.linalg.solve(Hmm, rhs)
            offsets.append(full_cost(xk, xd) - reduced_cost(xk))
        assert np.ptp(offsets) < 1e-8

    def test_prior_factorization_round_trip(self):
        rng = np.random.default_rng(41)
        A = rng.normal(0, 1.0, (6, 6))
        H = A @ A.T
        g = rng.normal(0, 1.0, 6)
        J, r0 = prior_from_information(H, g)
        np.testing.assert_allclose(J.T @ J, H, atol=1e-9)
        np.testing.assert_allclose(J.T @ r0, g, atol=1e-9)

    def test_prior_factorization_drops_null_directions(self):
        # rank-deficient information (gauge freedom) must not explode
        v = np.array([1.0, 2.0, 3.0])
        H = np.outer(v, v)
        g = v * 0.5
        J, r0 = prior_from_information(H, g)
        assert J.shape[0] == 1
        np.testing.assert_allclose(J.T @ J, H, atol=1e-9)
