"""Command line: ``run <config>``, ``validate <config>``, ``list-experiments``.

Outputs go under $ROUGHBSDE_OUTPUT_ROOT (default ./runs).  Exit status is 0
on success, 1 when an experiment's audit fails and 2 on config errors.
Errors are appended as JSON lines to errors.jsonl in the output root.
"""

import argparse
import json
import os
import platform
import sys
import time
import traceback

import numpy as np

from . import _kernels
from .config import EXPERIMENTS, ConfigError, load
from .experiments import RUNNERS

OUTPUT_ROOT_ENV = "ROUGHBSDE_OUTPUT_ROOT"
EXIT_OK, EXIT_AUDIT, EXIT_CONFIG = 0, 1, 2


def output_root():
    return os.environ.get(OUTPUT_ROOT_ENV, "runs")


def log_error(kind, message, **extra):
    root = output_root()
    os.makedirs(root, exist_ok=True)
    record = {"time": time.strftime("%Y-%m-%dT%H:%M:%S"), "kind": kind, "message": message}
    record.update(extra)
    with open(os.path.join(root, "errors.jsonl"), "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record) + "\n")


def _versions():
    import scipy

    from importlib.metadata import PackageNotFoundError, version

    out = {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}
    for pkg in ("numba", "artifact"):
        try:
            out[pkg] = version(pkg)
        except PackageNotFoundError:
            out[pkg] = None
    out["kernel_backend"] = _kernels.backend_name()
    return out


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def cmd_list(_args):
    for name, entry in EXPERIMENTS.items():
        print(f"{name:28s} {entry['description']}")
    return EXIT_OK


def cmd_validate(args):
    try:
        cfg = load(args.config)
    except ConfigError as exc:
        log_error("config", str(exc), config=args.config)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{args.config}: valid {cfg.experiment} config (sha256 {cfg.sha256()[:12]})")
    return EXIT_OK


def cmd_run(args):
    try:
        cfg = load(args.config)
    except ConfigError as exc:
        log_error("config", str(exc), config=args.config)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = os.path.join(output_root(), cfg.directory)
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfg.dumps())
    start = time.perf_counter()
    try:
        summary = RUNNERS[cfg.experiment](cfg, outdir)
    except Exception as exc:  # noqa: BLE001 - every failure is logged and mapped to an exit code
        log_error(
            "audit", f"{type(exc).__name__}: {exc}", config=args.config, experiment=cfg.experiment,
            traceback=traceback.format_exc(limit=5),
        )
        print(f"{cfg.experiment}: FAIL ({type(exc).__name__}: {exc})", file=sys.stderr)
        return EXIT_AUDIT
    wall = time.perf_counter() - start
    summary = _jsonable(summary)
    with open(os.path.join(outdir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    manifest = {
        "experiment": cfg.experiment,
        "config_sha256": cfg.sha256(),
        "seed": cfg.seed,
        "versions": _versions(),
        "wall_time_seconds": wall,
        "passed": bool(summary["passed"]),
    }
    with open(os.path.join(outdir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    status = "PASS" if summary["passed"] else "FAIL"
    details = ", ".join(f"{k}={v}" for k, v in summary.items() if k != "passed")
    print(f"{cfg.experiment}: {status} ({details})")
    if not summary["passed"]:
        log_error("audit", "audit failed", config=args.config, experiment=cfg.experiment, summary=summary)
        return EXIT_AUDIT
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="roughbsde", description="rough BSDE experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config")
    run.set_defaults(func=cmd_run)
    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config")
    val.set_defaults(func=cmd_validate)
    lst = sub.add_parser("list-experiments", help="list known experiments")
    lst.set_defaults(func=cmd_list)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
