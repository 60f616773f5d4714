"""Command-line entry point.

    poisonfilter run --config experiment.json [--out-dir DIR]
    poisonfilter demo-fig1 [--out-dir DIR]
    poisonfilter gradcheck [--instances 20]
    poisonfilter oracle-check [--instances 100]

On failure a single JSON line {"error": ..., "message": ...} goes to stderr
and the exit code is nonzero: 1 for a failed check, 2 for bad input, 3 for
any other error.

The loaders only read local files. Spambase is the UCI "spambase.data" table
(https://archive.ics.uci.edu/dataset/94/spambase); MNIST is the IDX
distribution (http://yann.lecun.com/exdb/mnist/), optionally gzip-compressed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from ._kernels import BACKEND
from .checks import gradcheck, oracle_check
from .dataset import DatasetError
from .harness import (
    ConfigError,
    ExperimentConfig,
    TrajectoryConfig,
    emit_report,
    run_experiment,
    run_trajectory_demo,
    write_attack_trace,
    write_sidecar,
)

EXIT_CHECK_FAILED = 1
EXIT_BAD_INPUT = 2
EXIT_ERROR = 3


class CheckFailed(Exception):
    pass


def _error_line(kind: str, message: str, **extra) -> str:
    return json.dumps({"error": kind, "message": message, **extra}, sort_keys=True)


def _emit(obj):
    print(json.dumps(obj, sort_keys=True, default=float))


def cmd_run(args) -> int:
    config = ExperimentConfig.load(args.config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = args.name or Path(args.config).stem
    report = run_experiment(config)
    report_path = emit_report(report, out_dir / f"{stem}.report.csv")
    sidecar_path = write_sidecar(config, out_dir / f"{stem}.config.json", report)
    _emit({"report": str(report_path), "sidecar": str(sidecar_path), "rows": len(report.rows),
           "failures": len(report.failures)})
    if report.failures and not report.rows:
        raise CheckFailed("every repetition failed: " + "; ".join(report.failures))
    return 0


def cmd_demo_fig1(args) -> int:
    cfg = TrajectoryConfig(seed=args.seed, n_val_per_class=args.n_val_per_class,
                           max_outer_iters=args.max_outer_iters)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    res = run_trajectory_demo(cfg, out_dir / "fig1_trace.csv", out_dir / "fig1_boundaries.json")
    write_attack_trace(res.attack, out_dir / "fig1_attack_trace.csv")
    (out_dir / "fig1_config.json").write_text(json.dumps({"config": vars(cfg)}, indent=2, default=list) + "\n")
    x = res.attack.poison.points[0]
    _emit({
        "final_point": x.tolist(),
        "clean_validation_mse": res.clean_mse,
        "poisoned_validation_mse": res.poisoned_mse,
        "trace_rows": len(res.rows),
        "converged": res.attack.converged,
        "out_dir": str(out_dir),
    })
    return 0


def cmd_gradcheck(args) -> int:
    errors = gradcheck(args.instances, args.seed)
    worst = max(errors)
    _emit({"instances": len(errors), "max_rel_error": worst, "tolerance": args.tol,
           "pass": worst <= args.tol})
    if worst > args.tol:
        raise CheckFailed(f"gradient relative error {worst:.3e} exceeds {args.tol:g}")
    return 0


def cmd_oracle_check(args) -> int:
    rep = oracle_check(args.instances, args.seed, args.ocsvm_instances)
    worst = rep.worst()
    bad = [k for k, v in worst.items() if v > (args.ocsvm_tol if k == "ocsvm" else args.tol)]
    _emit({"instances": rep.instances, "max_abs_deviation": worst, "pass": not bad})
    if bad:
        raise CheckFailed("oracle mismatch for " + ", ".join(bad))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="poisonfilter", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND})")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment described by a JSON config")
    p.add_argument("--config", required=True, help="JSON file with ExperimentConfig fields")
    p.add_argument("--out-dir", default=".", help="directory for the report CSV and sidecar JSON")
    p.add_argument("--name", help="output file stem (default: the config file stem)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("demo-fig1", help="single-point attack on 2-D Gaussians; writes trace and boundaries")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-val-per-class", type=int, default=5000)
    p.add_argument("--max-outer-iters", type=int, default=100)
    p.set_defaults(func=cmd_demo_fig1)

    p = sub.add_parser("gradcheck", help="attack gradient versus retraining finite differences")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-2)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("oracle-check", help="outlier scorers versus brute-force oracles")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--ocsvm-instances", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--ocsvm-tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_oracle_check)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        if exc.code not in (0, None):
            print(_error_line("usage", "invalid command line"), file=sys.stderr)
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CheckFailed as exc:
        print(_error_line("check_failed", str(exc), command=args.command), file=sys.stderr)
        return EXIT_CHECK_FAILED
    except (ConfigError, DatasetError, FileNotFoundError, json.JSONDecodeError, TypeError, ValueError) as exc:
        print(_error_line(type(exc).__name__, str(exc), command=args.command), file=sys.stderr)
        return EXIT_BAD_INPUT
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable line
        print(_error_line(type(exc).__name__, str(exc), command=args.command), file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
