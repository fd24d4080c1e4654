"""``verify``: run verification suites and write a JSON report."""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from .config import SUITES, resolve_config
from .errors import ConfigError
from .report import emit_report
from .suites import run_suite

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_INTERNAL = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="verify", description=__doc__)
    ap.add_argument("--suite", action="append", choices=SUITES + ("all",),
                    help="suite to run (repeatable; default: all)")
    ap.add_argument("--p", type=int)
    ap.add_argument("--q", type=int)
    ap.add_argument("--alpha", type=float)
    ap.add_argument("--seed", type=int, help="default 42, or $GRUSHIN_LAB_SEED")
    ap.add_argument("--points", type=int, help="points per check (default 200)")
    ap.add_argument("--tol-scale", type=float, dest="tol_scale", help="multiplies every upper tolerance")
    ap.add_argument("--out", default="report.json", help="JSON report path")
    ap.add_argument("--csv-dir", dest="csv_dir", help="directory for CSV tables and a CSV copy of the report")
    ap.add_argument("--jobs", type=int, help="worker processes (default: number of processors)")
    ap.add_argument("--config", help="TOML or JSON config file; flags override its values")
    ap.add_argument("--no-runtime", action="store_true",
                    help="write runtime_seconds as null so identical runs give identical files")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {"p": args.p, "q": args.q, "alpha": args.alpha, "seed": args.seed, "points": args.points,
             "tol_scale": args.tol_scale, "suites": args.suite, "jobs": args.jobs, "csv_dir": args.csv_dir}
    try:
        cfg = resolve_config(flags, args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.jobs is None:
        cfg.jobs = os.cpu_count() or 1
    start = time.perf_counter()
    try:
        report = run_suite(cfg)
    except Exception as exc:  # noqa: BLE001 - reported as an internal error
        logging.getLogger(__name__).exception("internal error")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    report.runtime_seconds = None if args.no_runtime else round(time.perf_counter() - start, 3)
    # jobs does not change results; keep it out of the report so it stays reproducible
    report.config["jobs"] = None
    emit_report(report, args.out)
    if cfg.csv_dir:
        emit_report(report, Path(cfg.csv_dir) / "records.csv", fmt="csv")
    for r in report.records:
        res = "-" if r.residual is None else f"{r.residual:.3e}"
        tol = "" if r.tolerance is None else f" {r.comparator} {r.tolerance:.1e}"
        print(f"{r.status:4s} {r.suite}/{r.check_id}: {res}{tol} {r.reason}".rstrip())
    s = report.summary
    print(f"summary: {s['pass']} pass, {s['fail']} fail, {s['skip']} skip -> {args.out}")
    return EXIT_OK if report.ok else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
