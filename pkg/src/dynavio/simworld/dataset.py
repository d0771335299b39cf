"""Flight log serialization: four CSV streams plus meta.json.

Numbers are written with %.9g so a given log always produces byte-identical
files.  Readers validate headers and field counts (DatasetParseError, with
file:line) and timestamp ordering (DatasetValidationError).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .types import (
    GroundTruthSample,
    ImuSample,
    LandmarkObservation,
    NoiseConfig,
    RotorSpeedSample,
    SensorLog,
)

IMU_HEADER = "t,ax,ay,az,gx,gy,gz"
ROTOR_HEADER = "t,w1,w2,w3,w4"
CAM_HEADER = "t,landmark_id,u,v,sigma"
STATE_HEADER = (
    "t,px,py,pz,vx,vy,vz,qw,qx,qy,qz,bax,bay,baz,bgx,bgy,bgz,fx,fy,fz"
)


class DatasetError(Exception):
    pass


class DatasetParseError(DatasetError):
    """Malformed file contents: bad header, field count, or number."""


class DatasetValidationError(DatasetError):
    """Well-formed file whose contents violate stream invariants."""


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _write_rows(path: Path, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _read_rows(path: Path, header: str) -> np.ndarray:
    ncol = header.count(",") + 1
    out = []
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        if first != header:
            raise DatasetParseError(f"{path}:1: bad header {first!r}, expected {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            toks = line.split(",")
            if len(toks) != ncol:
                raise DatasetParseError(
                    f"{path}:{lineno}: expected {ncol} fields, got {len(toks)}"
                )
            try:
                out.append([float(tok) for tok in toks])
            except ValueError:
                raise DatasetParseError(f"{path}:{lineno}: non-numeric field") from None
    return np.asarray(out, dtype=float).reshape(-1, ncol)


def _check_increasing(t: np.ndarray, path, strict: bool = True) -> None:
    if t.size == 0:
        return
    if not np.all(np.isfinite(t)):
        raise DatasetValidationError(f"{path}: non-finite timestamp")
    d = np.diff(t)
    if strict and np.any(d <= 0.0):
        raise DatasetValidationError(f"{path}: timestamps must be strictly increasing")
    if not strict and np.any(d < 0.0):
        raise DatasetValidationError(f"{path}: timestamps must be non-decreasing")


def write_log(log: SensorLog, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    _write_rows(
        out / "imu.csv", IMU_HEADER,
        (
            [_fmt(s.t)] + [_fmt(x) for x in s.accel] + [_fmt(x) for x in s.gyro]
            for s in log.imu
        ),
    )
    _write_rows(
        out / "rotor.csv", ROTOR_HEADER,
        ([_fmt(s.t)] + [_fmt(x) for x in s.omega] for s in log.rotor),
    )
    _write_rows(
        out / "cam.csv", CAM_HEADER,
        (
            [_fmt(s.t), str(int(s.landmark_id)), _fmt(s.uv[0]), _fmt(s.uv[1]), _fmt(s.pixel_sigma)]
            for s in log.cam
        ),
    )
    _write_rows(
        out / "truth.csv", STATE_HEADER,
        (
            [_fmt(s.t)]
            + [_fmt(x) for x in s.p_w] + [_fmt(x) for x in s.v_w]
            + [_fmt(x) for x in s.q_wb] + [_fmt(x) for x in s.b_a]
            + [_fmt(x) for x in s.b_g] + [_fmt(x) for x in s.f_ext_b]
            for s in log.truth
        ),
    )
    meta = {
        "mass": log.mass,
        "thrust_coeffs": [float(c) for c in log.thrust_coeffs],
        "gravity": [float(g) for g in log.gravity],
        "noise": log.noise.to_dict(),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def read_log(in_dir) -> SensorLog:
    src = Path(in_dir)
    meta_path = src / "meta.json"
    try:
        meta = json.loads(meta_path.read_text())
    except FileNotFoundError:
        raise DatasetParseError(f"{meta_path}: missing") from None
    except json.JSONDecodeError as e:
        raise DatasetParseError(f"{meta_path}: {e}") from None
    for key in ("mass", "thrust_coeffs", "gravity", "noise"):
        if key not in meta:
            raise DatasetParseError(f"{meta_path}: missing key {key!r}")

    imu_rows = _read_rows(src / "imu.csv", IMU_HEADER)
    rotor_rows = _read_rows(src / "rotor.csv", ROTOR_HEADER)
    cam_rows = _read_rows(src / "cam.csv", CAM_HEADER)
    truth_rows = _read_rows(src / "truth.csv", STATE_HEADER)

    _check_increasing(imu_rows[:, 0], src / "imu.csv")
    _check_increasing(rotor_rows[:, 0], src / "rotor.csv")
    _check_increasing(cam_rows[:, 0], src / "cam.csv", strict=False)
    _check_increasing(truth_rows[:, 0], src / "truth.csv")
    if np.any(rotor_rows[:, 1:] < 0.0):
        raise DatasetValidationError(f"{src / 'rotor.csv'}: negative rotor speed")
    ids = cam_rows[:, 1]
    if np.any(ids != np.round(ids)) or np.any(ids < 0):
        raise DatasetValidationError(f"{src / 'cam.csv'}: landmark ids must be non-negative integers")
    qn = np.linalg.norm(truth_rows[:, 7:11], axis=1)
    if truth_rows.shape[0] and np.max(np.abs(qn - 1.0)) > 1e-6:
        raise DatasetValidationError(f"{src / 'truth.csv'}: quaternion rows are not unit length")

    imu = [ImuSample(t=r[0], accel=r[1:4], gyro=r[4:7]) for r in imu_rows]
    rotor = [RotorSpeedSample(t=r[0], omega=r[1:5]) for r in rotor_rows]
    cam = [
        LandmarkObservation(t=r[0], landmark_id=int(r[1]), uv=r[2:4], pixel_sigma=r[4])
        for r in cam_rows
    ]
    truth = [
        GroundTruthSample(
            t=r[0], p_w=r[1:4], v_w=r[4:7], q_wb=r[7:11],
            b_a=r[11:14], b_g=r[14:17], f_ext_b=r[17:20],
        )
        for r in truth_rows
    ]
    return SensorLog(
        imu=imu, rotor=rotor, cam=cam, truth=truth,
        mass=float(meta["mass"]),
        thrust_coeffs=np.asarray(meta["thrust_coeffs"], dtype=float),
        gravity=np.asarray(meta["gravity"], dtype=float),
        noise=NoiseConfig.from_dict(meta["noise"]),
    )


def write_estimate(path, t, p, v, q, ba, bg, f) -> Path:
    """Write estimator output rows; force entries may be NaN on the last row."""
    path = Path(path)
    t = np.asarray(t, dtype=float)
    blocks = [np.asarray(b, dtype=float) for b in (p, v, q, ba, bg, f)]
    n = t.size
    widths = (3, 3, 4, 3, 3, 3)
    for b, w in zip(blocks, widths):
        if b.shape != (n, w):
            raise ValueError("estimate blocks must share row count with t")
    table = np.concatenate([t[:, None]] + blocks, axis=1)
    _write_rows(path, STATE_HEADER, ([_fmt(x) for x in row] for row in table))
    return path


def read_estimate(path) -> dict:
    rows = _read_rows(Path(path), STATE_HEADER)
    _check_increasing(rows[:, 0], path)
    return {
        "t": rows[:, 0], "p": rows[:, 1:4], "v": rows[:, 4:7], "q": rows[:, 7:11],
        "ba": rows[:, 11:14], "bg": rows[:, 14:17], "f": rows[:, 17:20],
    }
