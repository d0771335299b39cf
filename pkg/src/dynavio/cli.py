"""Command-line experiments: simulate | identify | run | eval | compare.

Experiments are described by INI-style config files, flat key = value pairs
grouped into [experiment], [scenario], [noise], and [solver] sections.  Every
key can also be passed as a --key value flag, which wins over the file, so a
config diff is a complete record of what changed between two runs.

Exit codes: 0 success, 1 usage or input error, 2 estimator divergence.
The DYNAVIO_LOG environment variable sets log verbosity (debug .. error).
"""

from __future__ import annotations

import argparse
import configparser
import copy
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .estimator import SolverConfig, run_batch
from .identify import identify_from_log
from .metrics import evaluate_arrays
from .simworld import (
    DEFAULT_MASS,
    DEFAULT_THRUST_COEFFS,
    DatasetError,
    ForceProfile,
    NoiseConfig,
    read_estimate,
    read_log,
    simulate_flight,
    write_estimate,
    write_log,
)

log = logging.getLogger("dynavio.cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DIVERGED = 2

DATASET_FILES = ("imu.csv", "rotor.csv", "cam.csv", "truth.csv", "meta.json")


class UsageError(Exception):
    """Bad arguments or config; maps to exit code 1."""


def _vec(n: int):
    def parse(text: str):
        vals = [float(x) for x in text.split(",") if x.strip()]
        if len(vals) != n:
            raise ValueError(f"expected {n} comma-separated numbers, got {len(vals)}")
        return vals

    return parse


_vec3 = _vec(3)


def _waypoints(text: str):
    pts = [_vec3(part) for part in text.split(";") if part.strip()]
    if len(pts) < 2:
        raise ValueError("need at least two x,y,z triples separated by ';'")
    return pts


# (default, parser) per key; None default means "leave it to the library".
_SCHEMA = {
    "experiment": {
        "mode": ("proposed", str),
        "seed": (0, int),
        "output": ("out", str),
    },
    "scenario": {
        "trajectory": ("circle", str),
        "duration": (20.0, float),
        "mass": (DEFAULT_MASS, float),
        "thrust_coeffs": (list(DEFAULT_THRUST_COEFFS), _vec(4)),
        "force": ("zero", str),
        "payload": ([0.0, 0.0, 0.0], _vec3),
        "anchor": ([0.0, 0.0, 0.0], _vec3),
        "stiffness": (0.0, float),
        "rest_length": (0.0, float),
        "direction": ([1.0, 0.0, 0.0], _vec3),
        "magnitude": (0.0, float),
        "start": (0.0, float),
        "stop": (0.0, float),
        "ramp": (0.25, float),
        "center": (None, _vec3),
        "radius": (None, float),
        "period": (None, float),
        "z_amplitude": (None, float),
        "z_period": (None, float),
        "x_amplitude": (None, float),
        "y_amplitude": (None, float),
        "yaw0": (None, float),
        "yaw_rate": (None, float),
        "waypoints": (None, _waypoints),
    },
    "noise": {
        "sigma_a": (0.02, float),
        "sigma_gyro": (0.002, float),
        "sigma_thrust": (0.05, float),
        "sigma_ba": (1e-4, float),
        "sigma_bg": (1e-5, float),
        "sigma_px": (0.002, float),
        "imu_hz": (400.0, float),
        "rmu_hz": (100.0, float),
        "cam_hz": (30.0, float),
    },
    "solver": {
        "window_size": (10, int),
        "max_iterations": (15, int),
        "damping_init": (1e-4, float),
        "cost_tolerance": (1e-9, float),
        "huber_delta": (2.5, float),
        "sigma_vimo": (0.01, float),
        "force_index": ("k", str),
        "init_sigma_p": (0.0, float),
        "init_sigma_theta": (0.0, float),
        "init_sigma_v": (0.0, float),
        "init_sigma_ba": (0.0, float),
        "init_sigma_bg": (0.0, float),
        "init_seed": (0, int),
    },
}

_TRAJ_PARAM_KEYS = ("center", "radius", "period", "z_amplitude", "z_period",
                    "x_amplitude", "y_amplitude", "yaw0", "yaw_rate", "waypoints")

_KEY_SECTION = {key: sec for sec, keys in _SCHEMA.items() for key in keys}
assert len(_KEY_SECTION) == sum(len(k) for k in _SCHEMA.values()), "config keys must be unique"

MODES = ("proposed", "vimo", "vio_only")


def _parse_value(sec: str, key: str, raw: str):
    try:
        return _SCHEMA[sec][key][1](raw)
    except ValueError as e:
        raise UsageError(f"bad value for {key!r}: {e}") from None


def load_config(path, overrides: dict) -> dict:
    """Defaults, then the config file, then --key value overrides."""
    cfg = {sec: {k: copy.deepcopy(v[0]) for k, v in keys.items()}
           for sec, keys in _SCHEMA.items()}
    if path is not None:
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise UsageError(f"config file not found: {path}")
        for sec in parser.sections():
            if sec not in _SCHEMA:
                raise UsageError(f"unknown config section [{sec}]")
            for key, raw in parser.items(sec):
                if key not in _SCHEMA[sec]:
                    raise UsageError(f"unknown config key {key!r} in [{sec}]")
                cfg[sec][key] = _parse_value(sec, key, raw)
    for key, raw in overrides.items():
        sec = _KEY_SECTION[key]
        cfg[sec][key] = _parse_value(sec, key, raw)

    mode = cfg["experiment"]["mode"].lower()
    if mode == "vimo_mode":
        mode = "vimo"
    if mode not in MODES:
        raise UsageError(f"mode must be one of {MODES}, got {mode!r}")
    cfg["experiment"]["mode"] = mode
    if cfg["scenario"]["force"] not in ForceProfile.KINDS:
        raise UsageError(f"force must be one of {ForceProfile.KINDS}, "
                         f"got {cfg['scenario']['force']!r}")
    return cfg


def _build_noise(cfg: dict) -> NoiseConfig:
    return NoiseConfig(**cfg["noise"], seed=cfg["experiment"]["seed"])


def _build_profile(cfg: dict) -> ForceProfile:
    s = cfg["scenario"]
    return ForceProfile(
        kind=s["force"], payload=s["payload"], anchor=s["anchor"],
        stiffness=s["stiffness"], rest_length=s["rest_length"],
        direction=s["direction"], magnitude=s["magnitude"],
        start=s["start"], stop=s["stop"], ramp=s["ramp"],
    )


def _traj_params(cfg: dict) -> dict:
    return {k: cfg["scenario"][k] for k in _TRAJ_PARAM_KEYS
            if cfg["scenario"][k] is not None}


def _build_solver(cfg: dict) -> SolverConfig:
    mode = cfg["experiment"]["mode"]
    try:
        return SolverConfig(**cfg["solver"],
                            vimo_mode=(mode == "vimo"),
                            vio_only=(mode == "vio_only"))
    except ValueError as e:
        raise UsageError(str(e)) from None


def _require_dataset(path) -> Path:
    ds = Path(path)
    missing = [name for name in DATASET_FILES if not (ds / name).is_file()]
    if missing:
        raise UsageError(f"dataset {ds} is missing: {', '.join(missing)}")
    return ds


def _jsonable(x):
    """JSON-safe copy: numpy scalars unboxed, non-finite floats -> null."""
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)) or isinstance(x, np.ndarray):
        return [_jsonable(v) for v in (x.tolist() if isinstance(x, np.ndarray) else x)]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if math.isfinite(v) else None
    if isinstance(x, Path):
        return str(x)
    return x


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def _overrides(args) -> dict:
    out = {}
    for key in _KEY_SECTION:
        raw = getattr(args, f"opt_{key}", None)
        if raw is not None:
            out[key] = raw
    return out


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    s = cfg["scenario"]
    flight = simulate_flight(
        s["trajectory"], s["duration"], _traj_params(cfg),
        profile=_build_profile(cfg), noise=_build_noise(cfg),
        mass=s["mass"], thrust_coeffs=np.asarray(s["thrust_coeffs"]),
    )
    out = write_log(flight, cfg["experiment"]["output"])
    log.info("simulated %s for %.1f s, seed %d", s["trajectory"], s["duration"],
             cfg["experiment"]["seed"])
    print(f"wrote dataset ({len(flight.imu)} imu, {len(flight.cam)} camera samples) to {out}")
    return EXIT_OK


def cmd_identify(args) -> int:
    ds = _require_dataset(args.dataset)
    result = identify_from_log(read_log(ds), forgetting=args.forgetting)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, result)
    tau = ", ".join(f"{c:.6e}" for c in result["tau"])
    print(f"tau = [{tau}]  residual_rms = {result['residual_rms']:.3e}  "
          f"n_samples = {result['n_samples']}")
    return EXIT_OK


def _run_once(flight, cfg: dict, out_dir: Path):
    """Shared by run and compare: solve, write estimate.csv + report.json."""
    solver = _build_solver(cfg)
    result = run_batch(flight, solver)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_estimate(out_dir / "estimate.csv", result.t, result.p, result.v,
                   result.q, result.ba, result.bg, result.f)
    report = dict(result.report)
    report["solver"] = asdict(solver)
    _write_json(out_dir / "report.json", report)
    return result


def cmd_run(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    ds = _require_dataset(args.dataset)
    out = Path(cfg["experiment"]["output"])
    result = _run_once(read_log(ds), cfg, out)
    rep = result.report
    if rep["diverged"]:
        print(f"error: estimator diverged after {rep['keyframes']} keyframes",
              file=sys.stderr)
        return EXIT_DIVERGED
    final = rep["final_cost"][-1] if rep["final_cost"] else float("nan")
    print(f"{rep['mode']}: {result.t.size} keyframes, final cost {final:.3e}, "
          f"wrote {out / 'estimate.csv'}")
    return EXIT_OK


def _read_truth(path):
    """Accept either a dataset directory or a bare truth-format CSV."""
    p = Path(path)
    mass = None
    if p.is_dir():
        meta = p / "meta.json"
        if meta.is_file():
            mass = float(json.loads(meta.read_text())["mass"])
        p = p / "truth.csv"
    return read_estimate(p), mass


def _eval_pair(est: dict, tru: dict, mass):
    return evaluate_arrays((est["t"], est["p"], est["q"], est["f"]),
                           (tru["t"], tru["p"], tru["q"], tru["f"]), mass=mass)


def cmd_eval(args) -> int:
    est_path = Path(args.estimate)
    est = read_estimate(est_path)
    tru, mass = _read_truth(args.truth)
    try:
        report = _eval_pair(est, tru, mass)
    except ValueError as e:
        raise UsageError(str(e)) from None

    # pick up divergence flag and runtime when the run report sits alongside
    report["diverged"] = None
    report["runtime_s"] = None
    sibling = est_path.parent / "report.json"
    if sibling.is_file():
        run_rep = json.loads(sibling.read_text())
        report["diverged"] = run_rep.get("diverged")
        report["runtime_s"] = run_rep.get("timing", {}).get("total_s")

    out = Path(args.out) if args.out else est_path.parent / "metrics.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, report)
    fr = report["force_rmse_mps2"]
    print(f"translation_rmse_m:  {report['translation_rmse_m']:.6g}")
    print(f"rotation_rmse_deg:   {report['rotation_rmse_deg']:.6g}")
    print(f"force_rmse_mps2:     norm {fr['norm']:.6g}  "
          f"xyz ({fr['x']:.6g}, {fr['y']:.6g}, {fr['z']:.6g})")
    print(f"n_pairs: {report['n_pairs']}  ->  {out}")
    return EXIT_OK


_TABLE_FIELDS = ("name", "mode", "status", "translation_rmse_m",
                 "rotation_rmse_deg", "force_rmse_norm_mps2", "diverged",
                 "runtime_s", "error")


def _cell(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, float):
        return f"{v:.6g}" if math.isfinite(v) else ""
    return str(v)


def cmd_compare(args) -> int:
    if len(args.configs) < 2:
        raise UsageError(f"compare needs at least 2 configs, got {len(args.configs)}")
    ds = _require_dataset(args.dataset)
    flight = read_log(ds)
    truth, mass = _read_truth(ds)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for i, cpath in enumerate(args.configs):
        row = dict.fromkeys(_TABLE_FIELDS, "")
        row["name"] = Path(cpath).stem
        row["status"] = "ok"
        try:
            cfg = load_config(cpath, {})
            row["mode"] = cfg["experiment"]["mode"]
            result = _run_once(flight, cfg, out / f"{i:02d}_{row['name']}")
            row["diverged"] = result.report["diverged"]
            row["runtime_s"] = result.report["timing"]["total_s"]
            if result.report["diverged"]:
                row["status"] = "failed"
                row["error"] = "estimator diverged"
            else:
                est = read_estimate(out / f"{i:02d}_{row['name']}" / "estimate.csv")
                metrics = _eval_pair(est, truth, mass)
                row["translation_rmse_m"] = metrics["translation_rmse_m"]
                row["rotation_rmse_deg"] = metrics["rotation_rmse_deg"]
                row["force_rmse_norm_mps2"] = metrics["force_rmse_mps2"]["norm"]
        except Exception as e:
            log.warning("config %s failed: %s", cpath, e)
            row["status"] = "failed"
            row["error"] = str(e).splitlines()[0]
        rows.append(row)

    with open(out / "comparison.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_TABLE_FIELDS)
        for row in rows:
            writer.writerow([_cell(row[k]) for k in _TABLE_FIELDS])

    header = "| " + " | ".join(_TABLE_FIELDS) + " |"
    rule = "|" + "|".join(["---"] * len(_TABLE_FIELDS)) + "|"
    lines = [header, rule]
    for row in rows:
        lines.append("| " + " | ".join(_cell(row[k]) or "-" for k in _TABLE_FIELDS) + " |")
    table = "\n".join(lines)
    (out / "comparison.md").write_text(table + "\n")
    print(table)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad args; 2 is reserved for divergence
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    for sec, keys in _SCHEMA.items():
        group = p.add_argument_group(f"[{sec}] overrides")
        for key in keys:
            group.add_argument(f"--{key}", dest=f"opt_{key}", metavar="V",
                               help=f"override [{sec}] {key}")


def _build_parser() -> _Parser:
    p = _Parser(prog="dynavio",
                description="Simulated visual-inertial-dynamics estimation experiments.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    sim = sub.add_parser("simulate", help="synthesize a sensor dataset")
    sim.add_argument("--config", help="experiment config file (INI)")
    _add_config_flags(sim)
    sim.set_defaults(func=cmd_simulate)

    ident = sub.add_parser("identify", help="estimate rotor thrust coefficients")
    ident.add_argument("--dataset", required=True, help="dataset directory")
    ident.add_argument("--out", default="coeffs.json", help="output JSON path")
    ident.add_argument("--forgetting", type=float, default=0.999,
                       help="RLS forgetting factor in (0.9, 1]")
    ident.set_defaults(func=cmd_identify)

    run = sub.add_parser("run", help="run the estimator over a dataset")
    run.add_argument("--dataset", required=True, help="dataset directory")
    run.add_argument("--config", help="experiment config file (INI)")
    _add_config_flags(run)
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="score an estimate against ground truth")
    ev.add_argument("--estimate", required=True, help="estimate.csv path")
    ev.add_argument("--truth", required=True,
                    help="dataset directory or truth-format CSV")
    ev.add_argument("--out", help="metrics JSON path (default: next to estimate)")
    ev.set_defaults(func=cmd_eval)

    cmp_ = sub.add_parser("compare", help="run several configs on one dataset")
    cmp_.add_argument("--dataset", required=True, help="dataset directory")
    cmp_.add_argument("configs", nargs="+", help="two or more config files")
    cmp_.add_argument("--output", default="compare", help="comparison output directory")
    cmp_.set_defaults(func=cmd_compare)
    return p


def _setup_logging() -> None:
    name = os.environ.get("DYNAVIO_LOG", "warning").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("dynavio").setLevel(level)


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, ValueError, OSError) as e:
        # covers unreadable inputs, infeasible trajectories, unwritable outputs
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
