"""Command-line entry points: simulate, run, evaluate, baseline, pipeline.

Exit codes: 0 success, 1 malformed input or usage, 2 estimator failure,
3 I/O error (including an evaluation with no associated timestamps).
"""
from __future__ import annotations

import argparse
import io
import sys
from pathlib import Path

import numpy as np

from .baselines import MODES, deadreckon
from .dataset import atomic_write, frame_labels, read_dataset, read_tum, write_dataset, write_tum
from .errors import (BadScenario, ConfigError, DatasetFormatError, FusionError, TooFewPairs)
from .estimator.config import EstimatorConfig, load_config
from .estimator.pipeline import DIAGNOSTIC_COLUMNS, run_dataset
from .evaluation import detection_scores, evaluate
from .simulation.scenario import WHEEL_ANOMALIES, load_scenario
from .simulation.synth import simulate

EXIT_INPUT, EXIT_ESTIMATOR, EXIT_IO = 1, 2, 3


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which is reserved for estimator failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ helpers

def format_log(rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(DIAGNOSTIC_COLUMNS) + "\n")
    for row in rows:
        vals = []
        for col in DIAGNOSTIC_COLUMNS:
            v = row[col]
            if isinstance(v, (bool, np.bool_)):
                v = int(v)
            vals.append(f"{v:.9g}" if isinstance(v, float) else str(v))
        buf.write(",".join(vals) + "\n")
    return buf.getvalue()


def read_log(path) -> list[dict]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from exc
    if not lines or lines[0].split(",") != list(DIAGNOSTIC_COLUMNS):
        raise CliError(EXIT_INPUT, f"{path}: not a diagnostics log")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(DIAGNOSTIC_COLUMNS):
            raise CliError(EXIT_INPUT, f"{path}: malformed row {ln!r}")
        row = {}
        for col, text in zip(DIAGNOSTIC_COLUMNS, parts):
            try:
                row[col] = float(text)
            except ValueError:
                row[col] = text
        rows.append(row)
    return rows


def log_summary(rows, labels=None, frame_times=None):
    """Init time, mean per-frame factor counts and wheel detection scores."""
    init_time = float("nan")
    if rows:
        t0 = rows[0]["t"]
        done = [r["t"] for r in rows if r["initialized"]]
        if done:
            init_time = done[0] - t0
    counts = ("n_imu", "n_wheel", "n_visual", "n_pseudorange", "n_doppler", "n_prior")
    active = [r for r in rows if r["initialized"]]
    means = {c: float(np.mean([r[c] for r in active])) if active else 0.0 for c in counts}
    detection = {}
    if labels is not None and frame_times is not None and active:
        index = {round(float(t), 6): i for i, t in enumerate(frame_times)}
        idx = [index.get(round(r["t"], 6)) for r in active]
        keep = [k for k, i in enumerate(idx) if i is not None]
        idx = np.array([idx[k] for k in keep], dtype=int)
        pred = np.array([active[k]["wheel_anomaly"] for k in keep], bool)
        union = np.zeros(len(idx), bool)
        for kind in WHEEL_ANOMALIES:
            truth = np.asarray(labels[kind], bool)[idx]
            union |= truth
            if truth.any():
                detection[kind.value] = detection_scores(pred, truth)
        detection["wheel"] = detection_scores(pred, union)
    return init_time, means, detection


def _read_dataset(path):
    try:
        return read_dataset(path)
    except DatasetFormatError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc


def _load_config(path) -> EstimatorConfig:
    if path is None:
        return EstimatorConfig()
    try:
        return load_config(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config {path}: {exc}") from exc


def _run(ds, cfg):
    try:
        return run_dataset(ds, cfg)
    except FusionError as exc:
        raise CliError(EXIT_ESTIMATOR, f"estimator failed: {exc}") from exc


def _write(fn, *args):
    try:
        fn(*args)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write output: {exc}") from exc


# ------------------------------------------------------------------ commands

def cmd_simulate(args):
    try:
        sc = load_scenario(args.scenario).with_seed(args.seed)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read scenario {args.scenario}: {exc}") from exc
    ds, _ = simulate(sc)
    _write(write_dataset, args.out, ds)
    print(f"wrote {len(ds.frames)} frames to {args.out}")


def cmd_run(args):
    ds = _read_dataset(args.dataset)
    cfg = _load_config(args.config)
    traj, est = _run(ds, cfg)
    _write(write_tum, args.out, traj)
    if args.log:
        _write(atomic_write, args.log, format_log(est.diagnostics))
    method = est.init_result.method.value if est.init_result else "none"
    print(f"wrote {len(traj)} poses to {args.out} (init: {method})")


def _evaluate(est_path, gt_path, mode, delta, log_path=None, dataset=None):
    est = read_tum(est_path)
    gt = read_tum(gt_path)
    rows = read_log(log_path) if log_path else []
    labels = times = None
    if dataset is not None:
        times = [f.t for f in dataset.frames]
        labels = frame_labels(times, dataset.anomalies)
    init_time, means, detection = log_summary(rows, labels, times)
    try:
        report = evaluate(est, gt, mode, delta, init_time)
    except TooFewPairs as exc:
        raise CliError(EXIT_IO, f"evaluation failed: {exc}") from exc
    if rows:
        report.factor_means = means
        report.detection = detection
    return report


def cmd_evaluate(args):
    try:
        ds = _read_dataset(args.dataset) if args.dataset else None
        report = _evaluate(args.est, args.gt, args.mode, args.delta, args.log, ds)
    except DatasetFormatError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    out = args.metrics or Path(args.est).with_name("metrics.csv")
    _write(atomic_write, out, report.to_csv())
    sys.stdout.write(report.to_csv())


def cmd_baseline(args):
    ds = _read_dataset(args.dataset)
    _write(write_tum, args.out, deadreckon(ds, args.mode))
    print(f"wrote {args.mode} baseline to {args.out}")


def cmd_pipeline(args):
    try:
        sc = load_scenario(args.scenario).with_seed(args.seed)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read scenario {args.scenario}: {exc}") from exc
    cfg = _load_config(args.config)
    out = Path(args.out)
    data_dir = out / "dataset"
    ds, _ = simulate(sc)
    _write(write_dataset, data_dir, ds)
    ds = _read_dataset(data_dir)
    traj, est = _run(ds, cfg)
    _write(write_tum, out / "traj.tum", traj)
    _write(atomic_write, out / "factors.csv", format_log(est.diagnostics))
    for mode in MODES:
        _write(write_tum, out / f"baseline_{mode}.tum", deadreckon(ds, mode))
    mode = "yaw-only" if sc.gnss else "se3"
    try:
        report = _evaluate(out / "traj.tum", data_dir / "groundtruth.tum", mode, args.delta,
                           out / "factors.csv", ds)
    except DatasetFormatError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    _write(atomic_write, out / "metrics.csv", report.to_csv())
    sys.stdout.write(report.to_csv())


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fusionslam", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="synthesize a dataset directory")
    s.add_argument("--scenario", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("run", help="run the estimator on a dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--log", default=None, help="per-frame diagnostics CSV")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("evaluate", help="ATE/RPE against ground truth")
    s.add_argument("--est", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--mode", choices=("se3", "yaw-only"), default="se3")
    s.add_argument("--delta", type=float, default=1.0)
    s.add_argument("--log", default=None, help="diagnostics CSV from run")
    s.add_argument("--dataset", default=None, help="dataset directory for anomaly labels")
    s.add_argument("--metrics", default=None, help="metrics CSV path (default: next to --est)")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("baseline", help="dead-reckoning trajectory")
    s.add_argument("--dataset", required=True)
    s.add_argument("--mode", choices=MODES, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("pipeline", help="simulate, run, baselines and evaluate")
    s.add_argument("--scenario", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--out", default="pipeline_out")
    s.add_argument("--delta", type=float, default=1.0)
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except DatasetFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (BadScenario, ConfigError, FusionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
