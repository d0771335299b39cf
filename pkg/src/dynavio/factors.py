"""Residuals and exact Jacobians for the sliding-window problem.

Per-keyframe tangent layout (18): [dp, dtheta, dv, dba, dbg, df].  All
attitude perturbations are applied on the right, q <- q * Exp(dtheta),
matching the preintegration error convention.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import (
    GRAVITY_W,
    quat_conj,
    quat_from_rotvec,
    quat_left,
    quat_log,
    quat_mult,
    quat_normalize,
    quat_right,
    quat_to_rot,
    skew,
    so3_jr,
    so3_jr_inv,
)

STATE_DIM = 18
P_SLC = slice(0, 3)
TH_SLC = slice(3, 6)
V_SLC = slice(6, 9)
BA_SLC = slice(9, 12)
BG_SLC = slice(12, 15)
F_SLC = slice(15, 18)

VISUAL_Z_MIN = 0.05
_H_EMBED = np.vstack([np.zeros(3), np.eye(3)])  # vector -> pure quaternion slot


@dataclass(eq=False)
class NavState:
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    ba: np.ndarray
    bg: np.ndarray
    f_ext: np.ndarray

    def boxplus(self, delta) -> "NavState":
        delta = np.asarray(delta, dtype=float)
        return NavState(
            p=self.p + delta[P_SLC],
            v=self.v + delta[V_SLC],
            q=quat_normalize(quat_mult(self.q, quat_from_rotvec(delta[TH_SLC]))),
            ba=self.ba + delta[BA_SLC],
            bg=self.bg + delta[BG_SLC],
            f_ext=self.f_ext + delta[F_SLC],
        )

    def copy(self) -> "NavState":
        return NavState(
            p=self.p.copy(), v=self.v.copy(), q=self.q.copy(),
            ba=self.ba.copy(), bg=self.bg.copy(), f_ext=self.f_ext.copy(),
        )


def boxminus(x: NavState, ref: NavState) -> np.ndarray:
    out = np.empty(STATE_DIM)
    out[P_SLC] = x.p - ref.p
    out[TH_SLC] = quat_log(quat_mult(quat_conj(ref.q), x.q))
    out[V_SLC] = x.v - ref.v
    out[BA_SLC] = x.ba - ref.ba
    out[BG_SLC] = x.bg - ref.bg
    out[F_SLC] = x.f_ext - ref.f_ext
    return out


def huber_weight(s: float, delta: float) -> float:
    """IRLS weight of the Huber loss at whitened residual norm s."""
    return 1.0 if s <= delta else delta / s


def inv_psd(M: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric PSD matrix, regularized if degenerate."""
    M = 0.5 * (M + M.T)
    try:
        np.linalg.cholesky(M)
        out = np.linalg.inv(M)
    except np.linalg.LinAlgError:
        warnings.warn(
            "matrix is not positive definite, inverse regularized", RuntimeWarning
        )
        w, V = np.linalg.eigh(M)
        floor = max(abs(w).max(), 1.0) * 1e-12
        out = (V / np.clip(w, floor, None)) @ V.T
    return 0.5 * (out + out.T)


def _relative_kinematics(xk: NavState, xk1: NavState, span: float):
    A = quat_to_rot(xk.q).T
    u_p = xk1.p - xk.p - xk.v * span - 0.5 * GRAVITY_W * span**2
    u_v = xk1.v - xk.v - GRAVITY_W * span
    return A, u_p, u_v


class DynamicsFactor:
    """Thrust-kinematics consistency between consecutive keyframes.

    Rows: position-level (3), velocity-level (3), force (3), accel-bias
    walk (3).  force_index picks which keyframe owns the interval force.
    vimo=True swaps the force-measurement row for a zero-force prior with
    sigma_vimo, reproducing a force-as-noise baseline.
    """

    def __init__(self, block, force_index: str = "k", vimo: bool = False,
                 sigma_vimo: float = 0.01):
        if force_index not in ("k", "k1"):
            raise ValueError("force_index must be 'k' or 'k1'")
        self.block = block
        self.force_index = force_index
        self.vimo = vimo
        if vimo:
            W = np.zeros((12, 12))
            idx = np.r_[0:6, 9:12]
            W[np.ix_(idx, idx)] = inv_psd(block.p9())
            W[6:9, 6:9] = np.eye(3) / sigma_vimo**2
            self.W = W
        else:
            self.W = inv_psd(block.p12())

    def linearize(self, xk: NavState, xk1: NavState):
        blk = self.block
        span = blk.dt
        A, u_p, u_v = _relative_kinematics(xk, xk1, span)
        f_state = xk.f_ext if self.force_index == "k" else xk1.f_ext
        a_c, b_c, f_c = blk.corrected_terms(xk.ba, xk.bg)

        r = np.empty(12)
        r[0:3] = A @ u_p - 0.5 * span**2 * f_state - a_c
        r[3:6] = A @ u_v - span * f_state - b_c
        r[6:9] = f_state if self.vimo else f_state - f_c
        r[9:12] = xk1.ba - xk.ba

        Jk = np.zeros((12, STATE_DIM))
        Jk1 = np.zeros((12, STATE_DIM))
        Jf = Jk if self.force_index == "k" else Jk1

        Jk[0:3, P_SLC] = -A
        Jk1[0:3, P_SLC] = A
        Jk[0:3, TH_SLC] = skew(A @ u_p)
        Jk[0:3, V_SLC] = -span * A
        Jk[0:3, BA_SLC] = -blk.J[0:3, 12:15]
        Jk[0:3, BG_SLC] = -blk.J[0:3, 15:18]
        Jf[0:3, F_SLC] = -0.5 * span**2 * np.eye(3)

        Jk[3:6, TH_SLC] = skew(A @ u_v)
        Jk[3:6, V_SLC] = -A
        Jk1[3:6, V_SLC] = A
        Jk[3:6, BA_SLC] = -blk.J[3:6, 12:15]
        Jk[3:6, BG_SLC] = -blk.J[3:6, 15:18]
        Jf[3:6, F_SLC] = -span * np.eye(3)

        Jf[6:9, F_SLC] = np.eye(3)
        if not self.vimo:
            Jk[6:9, BA_SLC] = -blk.J[6:9, 12:15]
            Jk[6:9, BG_SLC] = -blk.J[6:9, 15:18]

        Jk[9:12, BA_SLC] = -np.eye(3)
        Jk1[9:12, BA_SLC] = np.eye(3)
        return r, Jk, Jk1, self.W


class InertialFactor:
    """Accelerometer/gyro preintegration consistency (pose, velocity,
    attitude, bias walks)."""

    def __init__(self, block):
        self.block = block
        self.W = inv_psd(block.P)

    def linearize(self, xk: NavState, xk1: NavState):
        blk = self.block
        span = blk.dt
        A, u_p, u_v = _relative_kinematics(xk, xk1, span)
        a_c, b_c, g_c = blk.corrected_terms(xk.ba, xk.bg)

        B = quat_mult(quat_conj(xk.q), xk1.q)
        Aq = quat_mult(quat_conj(g_c), B)
        sgn = 1.0 if Aq[0] >= 0.0 else -1.0

        r = np.empty(15)
        r[0:3] = A @ u_p - a_c
        r[3:6] = A @ u_v - b_c
        r[6:9] = 2.0 * sgn * Aq[1:4]
        r[9:12] = xk1.ba - xk.ba
        r[12:15] = xk1.bg - xk.bg

        Jk = np.zeros((15, STATE_DIM))
        Jk1 = np.zeros((15, STATE_DIM))

        Jk[0:3, P_SLC] = -A
        Jk1[0:3, P_SLC] = A
        Jk[0:3, TH_SLC] = skew(A @ u_p)
        Jk[0:3, V_SLC] = -span * A
        Jk[0:3, BA_SLC] = -blk.J[0:3, 9:12]
        Jk[0:3, BG_SLC] = -blk.J[0:3, 12:15]

        Jk[3:6, TH_SLC] = skew(A @ u_v)
        Jk[3:6, V_SLC] = -A
        Jk1[3:6, V_SLC] = A
        Jk[3:6, BA_SLC] = -blk.J[3:6, 9:12]
        Jk[3:6, BG_SLC] = -blk.J[3:6, 12:15]

        # attitude row through the quaternion product matrices
        Jk1[6:9, TH_SLC] = sgn * (quat_left(Aq) @ _H_EMBED)[1:4]
        Jk[6:9, TH_SLC] = -sgn * (quat_left(quat_conj(g_c)) @ quat_right(B) @ _H_EMBED)[1:4]
        j_theta_bg = blk.J[6:9, 12:15]
        phi0 = j_theta_bg @ (xk.bg - blk.lin_bg)
        Jk[6:9, BG_SLC] = -sgn * (quat_right(Aq) @ _H_EMBED)[1:4] @ so3_jr(phi0) @ j_theta_bg

        Jk[9:12, BA_SLC] = -np.eye(3)
        Jk1[9:12, BA_SLC] = np.eye(3)
        Jk[12:15, BG_SLC] = -np.eye(3)
        Jk1[12:15, BG_SLC] = np.eye(3)
        return r, Jk, Jk1, self.W


def visual_linearize(p_a, q_a, p_j, q_j, u_h, inv_depth, obs):
    """Batched anchored-inverse-depth reprojection residuals.

    Landmark sits at depth 1/inv_depth along anchor ray u_h (homogeneous,
    z=1); observed from frame j as normalized coordinates obs.  Rows whose
    predicted point falls behind frame j's image plane are masked out with
    zeroed residual/Jacobians.
    """
    p_a = np.atleast_2d(np.asarray(p_a, dtype=float))
    p_j = np.atleast_2d(np.asarray(p_j, dtype=float))
    q_a = np.atleast_2d(np.asarray(q_a, dtype=float))
    q_j = np.atleast_2d(np.asarray(q_j, dtype=float))
    u_h = np.atleast_2d(np.asarray(u_h, dtype=float))
    inv_depth = np.atleast_1d(np.asarray(inv_depth, dtype=float))
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    n = p_a.shape[0]

    Ra = quat_to_rot(q_a)
    Rj = quat_to_rot(q_j)
    RjT = Rj.transpose(0, 2, 1)
    ray = u_h / inv_depth[:, None]
    world = p_a + np.einsum("nij,nj->ni", Ra, ray)
    p_c = np.einsum("nij,nj->ni", RjT, world - p_j)

    z = p_c[:, 2]
    mask = z > VISUAL_Z_MIN
    zs = np.where(mask, z, 1.0)

    proj = p_c[:, :2] / zs[:, None]
    r = proj - obs

    # d(projection)/d(point in frame j)
    D = np.zeros((n, 2, 3))
    D[:, 0, 0] = 1.0 / zs
    D[:, 1, 1] = 1.0 / zs
    D[:, 0, 2] = -p_c[:, 0] / zs**2
    D[:, 1, 2] = -p_c[:, 1] / zs**2

    RjT_Ra = np.einsum("nij,njk->nik", RjT, Ra)
    d_pa = RjT
    d_pj = -RjT
    d_tha = -np.einsum("nij,njk->nik", RjT_Ra, _skew_batch(ray))
    d_thj = _skew_batch(p_c)
    d_lam = -np.einsum("nij,nj->ni", RjT_Ra, u_h) / inv_depth[:, None] ** 2

    out = {
        "r": np.where(mask[:, None], r, 0.0),
        "mask": mask,
        "p_c": p_c,
        "J_pa": _mask3(np.einsum("nij,njk->nik", D, d_pa), mask),
        "J_pj": _mask3(np.einsum("nij,njk->nik", D, d_pj), mask),
        "J_tha": _mask3(np.einsum("nij,njk->nik", D, d_tha), mask),
        "J_thj": _mask3(np.einsum("nij,njk->nik", D, d_thj), mask),
        "J_lam": np.where(mask[:, None], np.einsum("nij,nj->ni", D, d_lam), 0.0),
    }
    return out


def _skew_batch(v):
    n = v.shape[0]
    S = np.zeros((n, 3, 3))
    S[:, 0, 1] = -v[:, 2]
    S[:, 0, 2] = v[:, 1]
    S[:, 1, 0] = v[:, 2]
    S[:, 1, 2] = -v[:, 0]
    S[:, 2, 0] = -v[:, 1]
    S[:, 2, 1] = v[:, 0]
    return S


def _mask3(J, mask):
    return np.where(mask[:, None, None], J, 0.0)


class PosePriorFactor:
    """Tight anchor on one keyframe's position and attitude."""

    def __init__(self, p0, q0, sigma_p: float = 1e-3, sigma_theta: float = 1e-3):
        self.p0 = np.asarray(p0, dtype=float).copy()
        self.q0 = np.asarray(q0, dtype=float).copy()
        self.W = np.diag([1.0 / sigma_p**2] * 3 + [1.0 / sigma_theta**2] * 3)

    def linearize(self, x: NavState):
        r = np.empty(6)
        r[0:3] = x.p - self.p0
        dth = quat_log(quat_mult(quat_conj(self.q0), x.q))
        r[3:6] = dth
        J = np.zeros((6, STATE_DIM))
        J[0:3, P_SLC] = np.eye(3)
        J[3:6, TH_SLC] = so3_jr_inv(dth)
        return r, J, self.W


@dataclass(eq=False)
class MargPriorFactor:
    """Linearized prior left behind by marginalization.

    Residual r = r0 + J * boxminus(x, lin), already whitened (unit weight).
    """

    keys: list
    lin_states: list
    J: np.ndarray
    r0: np.ndarray

    def linearize(self, states: list):
        r = self.r0.copy()
        blocks = []
        for i, (x, lin) in enumerate(zip(states, self.lin_states)):
            delta = boxminus(x, lin)
            Ji = self.J[:, i * STATE_DIM:(i + 1) * STATE_DIM]
            r = r + Ji @ delta
            Jc = Ji.copy()
            Jc[:, TH_SLC] = Ji[:, TH_SLC] @ so3_jr_inv(delta[TH_SLC])
            blocks.append(Jc)
        return r, blocks


def schur_marginalize(H, b, drop_idx, keep_idx):
    """Reduce a quadratic 0.5 x'Hx + b'x onto the kept variables."""
    drop_idx = np.asarray(drop_idx)
    keep_idx = np.asarray(keep_idx)
    Hmm = H[np.ix_(drop_idx, drop_idx)]
    Hmk = H[np.ix_(drop_idx, keep_idx)]
    Hmm = 0.5 * (Hmm + Hmm.T)
    w, V = np.linalg.eigh(Hmm)
    floor = 1e-10 * max(w.max(), 1.0)
    if w.min() < floor:
        warnings.warn(
            "marginalized block is near singular, flooring its spectrum", RuntimeWarning
        )
    Hmm_inv = (V / np.clip(w, floor, None)) @ V.T
    H_r = H[np.ix_(keep_idx, keep_idx)] - Hmk.T @ Hmm_inv @ Hmk
    b_r = b[keep_idx] - Hmk.T @ Hmm_inv @ b[drop_idx]
    return 0.5 * (H_r + H_r.T), b_r


def prior_from_information(H, g):
    """Factor H = J'J, g = J'r0 into a unit-weight linear prior.

    Near-null eigendirections (gauge freedom) are dropped rather than
    inverted, so the returned prior constrains only what the information
    matrix actually constrains.
    """
    H = 0.5 * (H + H.T)
    w, V = np.linalg.eigh(H)
    keep = w > 1e-10 * max(w.max(), 1.0)
    Vk = V[:, keep]
    sw = np.sqrt(w[keep])
    J = (Vk * sw).T
    r0 = (Vk / sw).T @ g
    return J, r0
