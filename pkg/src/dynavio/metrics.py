"""Error metrics comparing estimated trajectories against ground truth.

Pairs are formed by nearest-timestamp association (default tolerance 1 ms);
metrics are computed on the paired rows only.  Force estimates may carry
NaN rows (modes that do not estimate force, final keyframes without an
owning interval); those rows are excluded from the force statistics.
"""

import numpy as np

MATCH_TOLERANCE_S = 1e-3


def match_timestamps(t_est, t_ref, tol: float = MATCH_TOLERANCE_S):
    """Indices (i_est, i_ref) pairing each estimate row with the nearest
    reference row within `tol` seconds."""
    t_est = np.asarray(t_est, dtype=float)
    t_ref = np.asarray(t_ref, dtype=float)
    order = np.argsort(t_ref)
    ts = t_ref[order]
    pos = np.searchsorted(ts, t_est)
    pos = np.clip(pos, 1, ts.size - 1) if ts.size > 1 else np.zeros_like(pos)
    left = ts[pos - 1] if ts.size > 1 else ts[pos]
    right = ts[pos]
    use_right = np.abs(right - t_est) < np.abs(t_est - left)
    nearest = np.where(use_right, pos, pos - 1) if ts.size > 1 else pos
    keep = np.abs(ts[nearest] - t_est) <= tol
    return np.nonzero(keep)[0], order[nearest[keep]]


def translation_rmse(p_est, p_ref) -> float:
    d = np.asarray(p_est, dtype=float) - np.asarray(p_ref, dtype=float)
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def rotation_rmse_deg(q_est, q_ref) -> float:
    """Root-mean-square geodesic attitude error in degrees.

    Quaternions are unit, scalar-first.  The relative rotation qa * qb^-1
    is formed componentwise and its angle taken as 2*atan2(|vec|, |w|),
    which stays exact for identical inputs where acos of a dot product
    would round.
    """
    qa = np.asarray(q_est, dtype=float).reshape(-1, 4)
    qb = np.asarray(q_ref, dtype=float).reshape(-1, 4)
    w = np.sum(qa * qb, axis=1)
    va, vb = qa[:, 1:], qb[:, 1:]
    vec = (qb[:, :1] * va - qa[:, :1] * vb - np.cross(va, vb))
    ang = 2.0 * np.arctan2(np.linalg.norm(vec, axis=1), np.abs(w))
    return float(np.degrees(np.sqrt(np.mean(ang * ang))))


def force_rmse(f_est, f_ref) -> dict:
    """Per-axis and norm force RMSE over rows whose estimate is finite."""
    fe = np.asarray(f_est, dtype=float).reshape(-1, 3)
    fr = np.asarray(f_ref, dtype=float).reshape(-1, 3)
    ok = np.all(np.isfinite(fe), axis=1)
    if not np.any(ok):
        nan = float("nan")
        return {"norm": nan, "x": nan, "y": nan, "z": nan}
    fe, fr = fe[ok], fr[ok]
    axis = np.sqrt(np.mean((fe - fr) ** 2, axis=0))
    dn = np.linalg.norm(fe, axis=1) - np.linalg.norm(fr, axis=1)
    return {"norm": float(np.sqrt(np.mean(dn * dn))),
            "x": float(axis[0]), "y": float(axis[1]), "z": float(axis[2])}


def evaluate_arrays(estimate, truth, mass: float | None = None,
                    tol: float = MATCH_TOLERANCE_S) -> dict:
    """Full metrics report from (t, p, q, f) array tuples.

    Raises ValueError when no timestamps pair up within the tolerance.
    """
    te, pe, qe, fe = (np.asarray(a) for a in estimate)
    tr, pr, qr, fr = (np.asarray(a) for a in truth)
    ie, ir = match_timestamps(te, tr, tol)
    if ie.size == 0:
        raise ValueError("no overlapping timestamps within tolerance")
    report = {
        "translation_rmse_m": translation_rmse(pe[ie], pr[ir]),
        "rotation_rmse_deg": rotation_rmse_deg(qe[ie], qr[ir]),
        "force_rmse_mps2": force_rmse(fe[ie], fr[ir]),
        "n_pairs": int(ie.size),
    }
    if mass is not None:
        report["force_rmse_n"] = {k: v * mass
                                  for k, v in report["force_rmse_mps2"].items()}
    return report
