"""Sliding-window fixed-lag smoother fusing vision, IMU, and rotor thrust.

States live on an 18-dim manifold per keyframe (pose, velocity, IMU biases,
external force); landmarks are inverse depths anchored at their first
observing keyframe.  The window is optimized by damped Gauss-Newton and the
oldest keyframe is folded into a dense linearized prior when the window is
full.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .factors import (
    F_SLC,
    STATE_DIM,
    DynamicsFactor,
    InertialFactor,
    MargPriorFactor,
    NavState,
    PosePriorFactor,
    prior_from_information,
    schur_marginalize,
    visual_linearize,
)
from .geometry import (
    GRAVITY_W,
    quat_from_rotvec,
    quat_mult,
    quat_normalize,
    quat_to_rot,
)
from .preintegration import (
    DynBlock,
    ImuBlock,
    fuse_streams,
    preintegrate_dyn,
    preintegrate_imu,
)

# Weighting floors so zero-noise logs still yield finite information.  The
# accel/gyro/thrust floors also absorb the first-order integration error of
# the preintegrated means, which would otherwise sit many sigma out on
# noiseless data and drag the optimum away from the truth.
SIGMA_FLOORS = {
    "sigma_a": 5e-3,
    "sigma_gyro": 5e-4,
    "sigma_thrust": 5e-3,
    "sigma_ba": 1e-6,
    "sigma_bg": 1e-7,
    "sigma_px": 1e-4,
}
DYN_SIGMA_KEYS = ("sigma_thrust", "sigma_a", "sigma_gyro", "sigma_ba", "sigma_bg")
IMU_SIGMA_KEYS = ("sigma_a", "sigma_gyro", "sigma_ba", "sigma_bg")

DEPTH_MIN = 0.1
DEPTH_MAX = 80.0
DEPTH_FALLBACK = 4.0
INV_DEPTH_MIN = 1e-4
# Weak pull of each inverse depth toward the value it was initialized with.
# Negligible against real parallax information, but it keeps depths that the
# motion cannot observe (a hovering camera) from wandering off to infinity,
# which would silently disconnect vision from the translation states.
INV_DEPTH_PRIOR_SIGMA = 1.0
# weak pull keeping force columns full rank when dynamics factors are off
VIO_FORCE_INFO = 1e-6


def effective_sigmas(noise) -> dict:
    """Estimator-side sigmas: measured noise levels with floors applied."""
    return {k: max(float(getattr(noise, k)), v) for k, v in SIGMA_FLOORS.items()}


@dataclass
class SolverConfig:
    window_size: int = 10
    max_iterations: int = 15
    damping_init: float = 1e-4
    cost_tolerance: float = 1e-9  # relative accepted-step decrease
    huber_delta: float = 2.5
    vimo_mode: bool = False
    vio_only: bool = False
    force_index: str = "k"
    sigma_vimo: float = 0.01
    init_sigma_p: float = 0.0
    init_sigma_theta: float = 0.0
    init_sigma_v: float = 0.0
    init_sigma_ba: float = 0.0
    init_sigma_bg: float = 0.0
    init_seed: int = 0

    def __post_init__(self):
        if self.window_size < 2:
            raise ValueError("window_size must be at least 2")
        if self.force_index not in ("k", "k1"):
            raise ValueError("force_index must be 'k' or 'k1'")
        if self.vimo_mode and self.vio_only:
            raise ValueError("vimo_mode and vio_only are mutually exclusive")

    def mode_name(self) -> str:
        if self.vio_only:
            return "vio_only"
        if self.vimo_mode:
            return "vimo"
        return "proposed"


@dataclass(eq=False)
class FeatureState:
    """Inverse-depth landmark anchored at its first observing keyframe."""

    anchor: int
    u_h: np.ndarray                     # homogeneous anchor ray [u, v, 1]
    inv_depth: float = 0.0              # > 0 once triangulated
    lam_init: float = 0.0               # value inv_depth started from
    obs: dict = field(default_factory=dict)  # keyframe key -> (uv, sigma)


# Two rays must subtend at least this angle before their intersection is
# trusted.  Below it, apparent baselines are dominated by pose-guess error
# (a hovering camera "sees" centimetres of parallax that are pure noise)
# and the triangulated depth would lock the map onto that noise.
MIN_PARALLAX_SIN2 = np.sin(np.radians(0.5)) ** 2


def triangulate_midpoint(p_a, R_a, uv_a, p_j, R_j, uv_j):
    """Depth along the anchor ray from two bearing observations.

    Returns the anchor-frame z of the midpoint of the closest approach
    between the two rays, or None when the rays subtend too little
    parallax or the point falls outside a sane depth range.
    """
    da = R_a @ np.array([uv_a[0], uv_a[1], 1.0])
    dj = R_j @ np.array([uv_j[0], uv_j[1], 1.0])
    da = da / np.linalg.norm(da)
    dj = dj / np.linalg.norm(dj)
    b = np.asarray(p_j, dtype=float) - np.asarray(p_a, dtype=float)
    dd = float(da @ dj)
    denom = 1.0 - dd * dd
    if denom < MIN_PARALLAX_SIN2:
        return None
    s = (da @ b - dd * (dj @ b)) / denom
    t = (dd * (da @ b) - dj @ b) / denom
    mid = 0.5 * (p_a + s * da + p_j + t * dj)
    z = float((R_a.T @ (mid - p_a))[2])
    if z < DEPTH_MIN or z > DEPTH_MAX:
        return None
    return z


class _VisualIndex:
    """Flattened (feature, observer) rows for one window composition."""

    def __init__(self, ids, a_idx, j_idx, m_idx, u_h, obs, w, lam0, lam_init):
        self.ids = ids
        self.a_idx = np.asarray(a_idx, dtype=int)
        self.j_idx = np.asarray(j_idx, dtype=int)
        self.m_idx = np.asarray(m_idx, dtype=int)
        self.u_h = np.asarray(u_h, dtype=float).reshape(-1, 3)
        self.obs = np.asarray(obs, dtype=float).reshape(-1, 2)
        self.w = np.asarray(w, dtype=float)
        self.lam0 = np.asarray(lam0, dtype=float)
        self.lam_init = np.asarray(lam_init, dtype=float)
        self.n = self.a_idx.size


class SlidingWindow:
    def __init__(self, config: SolverConfig):
        self.config = config
        self.states: list[NavState] = []
        self.times: list[float] = []
        self.keys: list[int] = []
        self.dyn_blocks: list = []
        self.imu_blocks: list = []
        self.dyn_factors: list = []
        self.imu_factors: list = []
        self.features: dict[int, FeatureState] = {}
        self.prior: MargPriorFactor | None = None
        self.pose_prior: tuple | None = None  # (key, PosePriorFactor)
        self.force_owned: set[int] = set()
        self._next_key = 0

    # ------------------------------------------------------------------
    # window construction

    def anchor_first(self, sigma_p: float = 1e-3, sigma_theta: float = 1e-3):
        """Pin the first state's pose to fix the gauge."""
        if not self.states:
            raise ValueError("cannot anchor an empty window")
        x = self.states[0]
        self.pose_prior = (self.keys[0], PosePriorFactor(x.p, x.q, sigma_p, sigma_theta))
        return self

    def add_keyframe(self, t, guess: NavState, dyn_block=None, imu_block=None,
                     observations=()):
        t = float(t)
        if self.times and t <= self.times[-1] + 1e-12:
            raise ValueError("keyframe timestamp duplicates or precedes the window")
        if self.states:
            if not isinstance(dyn_block, DynBlock) or not isinstance(imu_block, ImuBlock):
                raise ValueError("interval blocks must be finalized preintegrations")
            for blk in (dyn_block, imu_block):
                if abs(blk.t0 - self.times[-1]) > 1e-6 or abs(blk.t1 - t) > 1e-6:
                    raise ValueError("block span does not match the keyframe interval")
        elif dyn_block is not None or imu_block is not None:
            raise ValueError("first keyframe takes no interval blocks")

        key = self._next_key
        self._next_key += 1
        self.states.append(guess.copy())
        self.times.append(t)
        self.keys.append(key)
        if len(self.states) > 1:
            self.dyn_blocks.append(dyn_block)
            self.imu_blocks.append(imu_block)
            cfg = self.config
            if cfg.vio_only:
                self.dyn_factors.append(None)
            else:
                self.dyn_factors.append(DynamicsFactor(
                    dyn_block, force_index=cfg.force_index,
                    vimo=cfg.vimo_mode, sigma_vimo=cfg.sigma_vimo))
                owner = self.keys[-2] if cfg.force_index == "k" else key
                self.force_owned.add(owner)
            self.imu_factors.append(InertialFactor(imu_block))

        for ob in observations:
            fid = int(ob.landmark_id)
            feat = self.features.get(fid)
            if feat is None:
                feat = FeatureState(anchor=key,
                                    u_h=np.array([ob.uv[0], ob.uv[1], 1.0]))
                self.features[fid] = feat
            feat.obs[key] = (np.asarray(ob.uv, dtype=float).copy(),
                             float(ob.pixel_sigma))
            if feat.inv_depth == 0.0 and len(feat.obs) >= 2:
                # retry against the newest frame while the baseline grows;
                # if parallax never comes, activate at a nominal depth and
                # let the inverse-depth regularizer hold it there
                self._triangulate(feat, key)
                if feat.inv_depth == 0.0 and len(feat.obs) >= 5:
                    feat.inv_depth = 1.0 / DEPTH_FALLBACK
                    feat.lam_init = feat.inv_depth
        return self

    def _triangulate(self, feat: FeatureState, new_key: int):
        idx = {k: i for i, k in enumerate(self.keys)}
        xa = self.states[idx[feat.anchor]]
        xj = self.states[idx[new_key]]
        z = triangulate_midpoint(xa.p, quat_to_rot(xa.q), feat.u_h[:2],
                                 xj.p, quat_to_rot(xj.q), feat.obs[new_key][0])
        if z is not None:
            feat.inv_depth = 1.0 / z
            feat.lam_init = feat.inv_depth

    # ------------------------------------------------------------------
    # assembly

    def _visual_index(self, only_ids=None) -> _VisualIndex:
        key_to_idx = {k: i for i, k in enumerate(self.keys)}
        if only_ids is None:
            cand = [fid for fid in sorted(self.features)
                    if self.features[fid].inv_depth > 0.0
                    and len(self.features[fid].obs) >= 2]
        else:
            cand = list(only_ids)
        ids, lam0, lam_init = [], [], []
        a_idx, j_idx, m_idx, u_h, obs, w = [], [], [], [], [], []
        px_floor = SIGMA_FLOORS["sigma_px"]
        for fid in cand:
            feat = self.features[fid]
            a = key_to_idx.get(feat.anchor)
            if a is None:
                continue
            before = len(a_idx)
            for key in sorted(feat.obs):
                if key == feat.anchor or key not in key_to_idx:
                    continue
                uv, sigma = feat.obs[key]
                a_idx.append(a)
                j_idx.append(key_to_idx[key])
                m_idx.append(len(ids))
                u_h.append(feat.u_h)
                obs.append(uv)
                w.append(1.0 / max(sigma, px_floor))
            if len(a_idx) == before:
                continue
            ids.append(fid)
            lam0.append(feat.inv_depth)
            lam_init.append(feat.lam_init)
        return _VisualIndex(ids, a_idx, j_idx, m_idx, u_h, obs, w, lam0, lam_init)

    def _factor_terms(self, states, intervals, include_prior, include_pose):
        """Yield (r, W, [(state_idx, J), ...]); W None means identity."""
        for i in intervals:
            if self.dyn_factors[i] is not None:
                r, Jk, Jk1, W = self.dyn_factors[i].linearize(states[i], states[i + 1])
                yield r, W, [(i, Jk), (i + 1, Jk1)]
            if self.imu_factors[i] is not None:
                r, Jk, Jk1, W = self.imu_factors[i].linearize(states[i], states[i + 1])
                yield r, W, [(i, Jk), (i + 1, Jk1)]
        if include_pose and self.pose_prior is not None:
            key, fac = self.pose_prior
            if key in self.keys:
                i = self.keys.index(key)
                r, J, W = fac.linearize(states[i])
                yield r, W, [(i, J)]
        if include_prior and self.prior is not None:
            idxs = [self.keys.index(k) for k in self.prior.keys]
            r, blocks = self.prior.linearize([states[i] for i in idxs])
            yield r, None, list(zip(idxs, blocks))

    def _linear_system(self, states, lam, vis, intervals=None,
                       include_prior=True, include_pose=True, weak_states=None):
        nk = len(states)
        dim = STATE_DIM * nk + lam.size
        H = np.zeros((dim, dim))
        grad = np.zeros(dim)
        if intervals is None:
            intervals = range(nk - 1)
        for r, W, pieces in self._factor_terms(states, intervals,
                                               include_prior, include_pose):
            Wr = r if W is None else W @ r
            for i, Ji in pieces:
                sl_i = slice(STATE_DIM * i, STATE_DIM * (i + 1))
                grad[sl_i] += Ji.T @ Wr
                for j, Jj in pieces:
                    sl_j = slice(STATE_DIM * j, STATE_DIM * (j + 1))
                    H[sl_i, sl_j] += Ji.T @ (Jj if W is None else W @ Jj)
        if self.config.vio_only:
            if weak_states is None:
                weak_states = range(nk)
            for i in weak_states:
                cols = np.arange(STATE_DIM * i + F_SLC.start,
                                 STATE_DIM * i + F_SLC.stop)
                H[cols, cols] += VIO_FORCE_INFO
                grad[cols] += VIO_FORCE_INFO * states[i].f_ext
        self._visual_accumulate(H, grad, states, lam, vis, nk)
        if lam.size:
            w2 = 1.0 / INV_DEPTH_PRIOR_SIGMA**2
            cols = STATE_DIM * nk + np.arange(lam.size)
            H[cols, cols] += w2
            grad[cols] += w2 * (lam - vis.lam_init)
        return H, grad

    def _visual_eval(self, states, lam, vis):
        P = np.stack([s.p for s in states])
        Q = np.stack([s.q for s in states])
        return visual_linearize(P[vis.a_idx], Q[vis.a_idx],
                                P[vis.j_idx], Q[vis.j_idx],
                                vis.u_h, lam[vis.m_idx], vis.obs)

    def _visual_accumulate(self, H, grad, states, lam, vis, nk):
        if vis.n == 0:
            return
        out = self._visual_eval(states, lam, vis)
        r = out["r"]
        s = np.linalg.norm(r, axis=1) * vis.w
        delta = self.config.huber_delta
        wh = np.where(s <= delta, 1.0, delta / np.maximum(s, 1e-30))
        scale = vis.w * np.sqrt(wh)
        Jrow = np.concatenate([out["J_pa"], out["J_tha"], out["J_pj"],
                               out["J_thj"], out["J_lam"][:, :, None]], axis=2)
        Jrow = Jrow * scale[:, None, None]
        rw = r * scale[:, None]
        six = np.arange(6)
        cols = np.concatenate([
            STATE_DIM * vis.a_idx[:, None] + six,
            STATE_DIM * vis.j_idx[:, None] + six,
            (STATE_DIM * nk + vis.m_idx)[:, None],
        ], axis=1)
        Hc = np.einsum("nri,nrj->nij", Jrow, Jrow)
        gc = np.einsum("nri,nr->ni", Jrow, rw)
        dim = H.shape[0]
        flat = (cols[:, :, None] * dim + cols[:, None, :]).ravel()
        np.add.at(H.reshape(-1), flat, Hc.ravel())
        np.add.at(grad, cols.ravel(), gc.ravel())

    def _total_cost(self, states, lam, vis):
        nk = len(states)
        cost = 0.0
        for r, W, pieces in self._factor_terms(states, range(nk - 1), True, True):
            cost += 0.5 * float(r @ (r if W is None else W @ r))
        if self.config.vio_only:
            for x in states:
                cost += 0.5 * VIO_FORCE_INFO * float(x.f_ext @ x.f_ext)
        if vis.n:
            out = self._visual_eval(states, lam, vis)
            s = np.linalg.norm(out["r"], axis=1) * vis.w
            delta = self.config.huber_delta
            rho = np.where(s <= delta, 0.5 * s**2, delta * (s - 0.5 * delta))
            cost += float(np.sum(rho))
        if lam.size:
            w2 = 1.0 / INV_DEPTH_PRIOR_SIGMA**2
            cost += 0.5 * w2 * float(np.sum((lam - vis.lam_init) ** 2))
        return cost

    # ------------------------------------------------------------------
    # solve

    def optimize(self) -> dict:
        cfg = self.config
        if len(self.states) < 2:
            raise ValueError("optimize needs at least two keyframes")
        states = [s.copy() for s in self.states]
        vis = self._visual_index()
        lam = vis.lam0.copy()
        nk = len(states)

        cost = self._total_cost(states, lam, vis)
        costs = [cost]
        mu = cfg.damping_init
        converged = False
        diverged = not np.isfinite(cost)
        iters = 0
        while iters < cfg.max_iterations and not diverged:
            iters += 1
            H, grad = self._linear_system(states, lam, vis)
            D = np.maximum(np.diag(H), 1e-6)
            accepted = False
            for _ in range(16):
                try:
                    dx = np.linalg.solve(H + mu * np.diag(D), -grad)
                except np.linalg.LinAlgError:
                    mu = min(mu * 10.0, 1e16)
                    continue
                trial_states = [states[i].boxplus(dx[STATE_DIM * i:STATE_DIM * (i + 1)])
                                for i in range(nk)]
                trial_lam = np.maximum(lam + dx[STATE_DIM * nk:], INV_DEPTH_MIN)
                new_cost = self._total_cost(trial_states, trial_lam, vis)
                if np.isfinite(new_cost) and new_cost <= cost:
                    accepted = True
                    break
                mu = mu * 10.0
                if mu > 1e16:
                    break
            if not accepted:
                break
            decrease = cost - new_cost
            states, lam, cost = trial_states, trial_lam, new_cost
            costs.append(cost)
            mu = max(mu / 10.0, 1e-12)
            if not np.isfinite(cost):
                diverged = True
                break
            if decrease <= cfg.cost_tolerance * max(costs[-2], 1e-12):
                converged = True
                break

        self.states = states
        for m, fid in enumerate(vis.ids):
            self.features[fid].inv_depth = float(lam[m])
        return {"iterations": iters, "costs": costs,
                "converged": converged, "diverged": diverged}

    # ------------------------------------------------------------------
    # marginalization

    def marginalize(self):
        """Fold the oldest keyframe and its anchored features into the prior."""
        if len(self.states) < 2:
            raise ValueError("marginalize needs at least two keyframes")
        key0 = self.keys[0]
        states = self.states
        nk = len(states)
        anchored = sorted(fid for fid, f in self.features.items()
                          if f.anchor == key0 and f.inv_depth > 0.0
                          and len(f.obs) >= 2)
        pose_on_0 = self.pose_prior is not None and self.pose_prior[0] == key0
        touching = (self.dyn_factors[0] is not None
                    or self.imu_factors[0] is not None
                    or pose_on_0 or bool(anchored)
                    or (self.prior is not None and key0 in self.prior.keys))
        if touching:
            vis = self._visual_index(only_ids=anchored)
            lam = vis.lam0
            H, grad = self._linear_system(
                states, lam, vis, intervals=[0],
                include_prior=True, include_pose=pose_on_0, weak_states=[0])
            dim = H.shape[0]
            drop = np.r_[0:STATE_DIM, STATE_DIM * nk:dim]
            keep = np.r_[STATE_DIM:STATE_DIM * nk]
            Hr, gr = schur_marginalize(H, grad, drop, keep)
            J, r0 = prior_from_information(Hr, gr)
            self.prior = MargPriorFactor(keys=list(self.keys[1:]),
                                         lin_states=[s.copy() for s in states[1:]],
                                         J=J, r0=r0)
        if pose_on_0:
            self.pose_prior = None
        for fid in [fid for fid, f in self.features.items() if f.anchor == key0]:
            del self.features[fid]
        for feat in self.features.values():
            feat.obs.pop(key0, None)
        del self.states[0]
        del self.times[0]
        del self.keys[0]
        del self.dyn_blocks[0]
        del self.imu_blocks[0]
        del self.dyn_factors[0]
        del self.imu_factors[0]
        self.force_owned.discard(key0)
        return self


# ----------------------------------------------------------------------
# batch driver


@dataclass(eq=False)
class BatchResult:
    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    ba: np.ndarray
    bg: np.ndarray
    f: np.ndarray
    report: dict


def _group_frames(cam):
    frames = {}
    for ob in cam:
        frames.setdefault(float(ob.t), []).append(ob)
    return sorted(frames.items())


def _initial_state(log, t0, cfg: SolverConfig) -> NavState:
    ts = np.array([s.t for s in log.truth])
    s = log.truth[int(np.argmin(np.abs(ts - t0)))]
    rng = np.random.default_rng(cfg.init_seed)
    x = NavState(p=s.p_w.copy(), v=s.v_w.copy(), q=s.q_wb.copy(),
                 ba=s.b_a.copy(), bg=s.b_g.copy(), f_ext=np.zeros(3))
    x.p = x.p + cfg.init_sigma_p * rng.standard_normal(3)
    x.q = quat_normalize(quat_mult(
        x.q, quat_from_rotvec(cfg.init_sigma_theta * rng.standard_normal(3))))
    x.v = x.v + cfg.init_sigma_v * rng.standard_normal(3)
    x.ba = x.ba + cfg.init_sigma_ba * rng.standard_normal(3)
    x.bg = x.bg + cfg.init_sigma_bg * rng.standard_normal(3)
    return x


def _finite_state(x: NavState) -> bool:
    return all(np.all(np.isfinite(a)) for a in (x.p, x.v, x.q, x.ba, x.bg, x.f_ext))


def run_batch(log, config: SolverConfig | None = None) -> BatchResult:
    """Process a complete log keyframe-by-keyframe at camera rate."""
    cfg = config if config is not None else SolverConfig()
    tic = time.perf_counter()
    report = {"mode": cfg.mode_name(), "diverged": False, "keyframes": 0,
              "iterations": [], "final_cost": [], "timing": {}}
    frames = _group_frames(log.cam)
    if not frames:
        report["timing"]["total_s"] = time.perf_counter() - tic
        empty3 = np.zeros((0, 3))
        return BatchResult(t=np.zeros(0), p=empty3, v=empty3,
                           q=np.zeros((0, 4)), ba=empty3, bg=empty3,
                           f=empty3, report=report)

    fused = fuse_streams(log.imu, log.rotor, log.mass, log.thrust_coeffs)
    sig = effective_sigmas(log.noise)
    dyn_kw = {k: sig[k] for k in DYN_SIGMA_KEYS}
    imu_kw = {k: sig[k] for k in IMU_SIGMA_KEYS}

    win = SlidingWindow(cfg)
    t0, obs0 = frames[0]
    win.add_keyframe(t0, _initial_state(log, t0, cfg), None, None, obs0)
    win.anchor_first()

    rows = []  # (t, state, force_valid)
    diverged = False
    for t, obs in frames[1:]:
        prev = win.states[-1]
        t_prev = win.times[-1]
        dyn = preintegrate_dyn(fused, t_prev, t, prev.ba, prev.bg, **dyn_kw)
        imu = preintegrate_imu(fused, t_prev, t, prev.ba, prev.bg, **imu_kw)
        a_c, b_c, g_c = imu.corrected_terms(prev.ba, prev.bg)
        R = quat_to_rot(prev.q)
        dt = t - t_prev
        guess = NavState(
            p=prev.p + prev.v * dt + 0.5 * GRAVITY_W * dt**2 + R @ a_c,
            v=prev.v + GRAVITY_W * dt + R @ b_c,
            q=quat_normalize(quat_mult(prev.q, g_c)),
            ba=prev.ba.copy(), bg=prev.bg.copy(),
            f_ext=dyn.favg.copy())
        win.add_keyframe(t, guess, dyn, imu, obs)
        # Bootstrap: while the window is still filling, feature baselines are
        # tiny and depth is close to unobservable, so solving would let the
        # structure slide along a near-flat valley.  Propagate only, and start
        # optimizing once the window holds full parallax.
        if len(win.states) < cfg.window_size:
            continue
        rep = win.optimize()
        report["iterations"].append(rep["iterations"])
        report["final_cost"].append(rep["costs"][-1])
        if rep["diverged"] or not all(_finite_state(s) for s in win.states):
            diverged = True
            break
        if len(win.states) == cfg.window_size + 1:
            rows.append((win.times[0], win.states[0].copy(),
                         win.keys[0] in win.force_owned))
            win.marginalize()
    if not diverged and not report["iterations"] and len(win.states) >= 2:
        # log shorter than the window: solve once before flushing
        rep = win.optimize()
        report["iterations"].append(rep["iterations"])
        report["final_cost"].append(rep["costs"][-1])
        diverged = rep["diverged"] or not all(_finite_state(s) for s in win.states)
    if not diverged:
        for i in range(len(win.states)):
            rows.append((win.times[i], win.states[i].copy(),
                         win.keys[i] in win.force_owned))

    report["diverged"] = diverged
    report["keyframes"] = len(rows)
    n = len(rows)
    out = BatchResult(
        t=np.array([r[0] for r in rows]),
        p=np.array([r[1].p for r in rows]).reshape(n, 3),
        v=np.array([r[1].v for r in rows]).reshape(n, 3),
        q=np.array([r[1].q for r in rows]).reshape(n, 4),
        ba=np.array([r[1].ba for r in rows]).reshape(n, 3),
        bg=np.array([r[1].bg for r in rows]).reshape(n, 3),
        f=np.array([r[1].f_ext if r[2] else np.full(3, np.nan) for r in rows]).reshape(n, 3),
        report=report)
    report["timing"]["total_s"] = time.perf_counter() - tic
    return out
