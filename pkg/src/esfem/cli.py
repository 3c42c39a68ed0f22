"""Command line entry point: ``esfem run | verify | eoc``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import diagnostics, experiments
from .errors import ErrorReport
from .exceptions import ConfigError, SolverDiverged

EXIT_OK = 0
EXIT_DIVERGED = 2
EXIT_CONFIG = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="esfem", description="Evolving surface finite element experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("--config", required=True, help="path to the JSON config")

    verify = sub.add_parser("verify", help="run the geometric diagnostics suite")
    verify.add_argument("--output-dir", default=".", help="where to write diagnostics.csv")
    verify.add_argument("--max-level", type=int, default=6, help="finest refinement level (default 6)")

    eoc = sub.add_parser("eoc", help="recompute and print EOCs of an errors.csv")
    eoc.add_argument("--input", required=True, help="errors.csv to read")
    return parser


def _run(args) -> int:
    cfg = experiments.load_config(args.config)
    result = experiments.run(cfg)
    if cfg.example == 1:
        for mode, report in result.items():
            print(f"[{mode}]")
            print(report.format_table())
    elif cfg.example == 2:
        for mode, series in result.items():
            print(f"[{mode}] min angle t={series[0].time:g}: {series[0].min_angle:.6f}  "
                  f"t={series[-1].time:g}: {series[-1].min_angle:.6f}")
    elif cfg.example == 3:
        for mode, runs in result.items():
            for r in runs:
                print(f"[{mode}] level {r.level}: {r.mesh.n_vertices} vertices, "
                      f"min angle at end {r.quality[-1].min_angle:.6f}")
    else:
        rel = {v: d[-1] / result.norm_const[-1] for v, d in result.diffs.items()}
        for v, r in rel.items():
            print(f"variant {v}: relative L2 difference at t={result.times[-1]:g} is {r:.3e}")
    print(f"outputs written to {cfg.output_dir}")
    return EXIT_OK


def _verify(args) -> int:
    os.makedirs(args.output_dir, exist_ok=True)
    rows = diagnostics.run_suite(levels=range(2, args.max_level + 1))
    path = os.path.join(args.output_dir, "diagnostics.csv")
    diagnostics.write_diagnostics_csv(path, rows)
    for check, param, value, order in rows:
        o = "" if order is None else f"  order {order:.3f}"
        print(f"{check:20s} {param!s:>6} {value:.6e}{o}")
    print(f"wrote {path}")
    return EXIT_OK


def _eoc(args) -> int:
    try:
        report = ErrorReport.from_csv(args.input)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read {args.input}: {exc}") from None
    rebuilt = ErrorReport.from_rows([(r.h, r.linf_l2, r.l2_h1) for r in report.rows])
    print(rebuilt.format_table())
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _run, "verify": _verify, "eoc": _eoc}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverDiverged as exc:
        print(f"solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
