"""`bench` command line tool.

    bench run <study-file> [--out PREFIX] [--set section.key=value ...] [--no-figures]
    bench list-methods
    bench verify <study-file> [--set section.key=value ...]

Exit codes: 0 success, 1 configuration error (including bad usage),
2 I/O error, 3 study-fatal numerical failure or failed verification.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..steppers import METHODS
from .config import ConfigError, load_study, parse_overrides
from .csvout import emit_csv, emit_orders_csv
from .runner import StudyFatalError, evaluate_assertions, run_study

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_FATAL = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse would sys.exit(2); keep 2 reserved for I/O errors
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="bench", description="Stiff-integrator benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a study and write CSV output plus figures")
    run.add_argument("study", help="path to a .study file")
    run.add_argument("--out", help="output path prefix (overrides [output] prefix)")
    run.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override a study value; repeatable",
    )
    run.add_argument(
        "--no-figures", action="store_true", help="skip PNG rendering, emit CSV only"
    )

    sub.add_parser("list-methods", help="print the available method names")

    verify = sub.add_parser("verify", help="run a study and check its [verify] assertions")
    verify.add_argument("study", help="path to a .study file")
    verify.add_argument(
        "--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a study value"
    )
    return parser


def _summarize(report, out) -> None:
    by_method = []
    for row in report.rows:
        if row.method not in by_method:
            by_method.append(row.method)
    for method in by_method:
        diverged_h = [row.h for row in report.rows if row.method == method and row.diverged]
        fit = report.orders.get(method)
        if fit is None:
            note = "no order fit (fewer than 3 usable points)"
        elif fit.flat:
            note = f"exact/flat over {fit.points_used} points"
        else:
            note = f"fitted order {fit.fitted_order:.3f} over {fit.points_used} points"
        if diverged_h:
            note += f"; diverged at h = {sorted(diverged_h, reverse=True)}"
        print(f"{method}: {note}", file=out)


def main(argv=None) -> int:
    out = sys.stdout
    err = sys.stderr
    try:
        args = _build_parser().parse_args(argv)
    except _UsageError as exc:
        print(f"bench: error: {exc}", file=err)
        return EXIT_CONFIG

    if args.command == "list-methods":
        for name in METHODS:
            print(name, file=out)
        return EXIT_OK

    try:
        overrides = parse_overrides(args.set)
        cfg = load_study(args.study, overrides)
    except ConfigError as exc:
        print(f"bench: config error: {exc}", file=err)
        return EXIT_CONFIG

    if args.command == "run" and args.out:
        cfg.out_prefix = args.out

    try:
        report = run_study(cfg)
    except StudyFatalError as exc:
        print(f"bench: fatal: {exc}", file=err)
        return EXIT_FATAL
    except OSError as exc:
        # reference cache writes can fail on bad cache locations
        print(f"bench: i/o error: {exc}", file=err)
        return EXIT_IO

    if args.command == "verify":
        checks = evaluate_assertions(cfg, report)
        if not checks:
            print("no [verify] assertions in study; nothing to check", file=out)
            return EXIT_OK
        failed = 0
        for assertion, ok, detail in checks:
            status = "PASS" if ok else "FAIL"
            failed += 0 if ok else 1
            print(f"{status} {assertion.label()}  [{detail}]", file=out)
        return EXIT_OK if failed == 0 else EXIT_FATAL

    # run: emit artifacts
    try:
        prefix = Path(cfg.out_prefix)
        if prefix.parent != Path("."):
            prefix.parent.mkdir(parents=True, exist_ok=True)
        written = [
            emit_csv(report, f"{cfg.out_prefix}.csv"),
            emit_orders_csv(report, f"{cfg.out_prefix}_orders.csv"),
        ]
        if not args.no_figures:
            from .figures import render_figure

            fig_path = render_figure(report, cfg.out_prefix)
            if fig_path is not None:
                written.append(fig_path)
    except OSError as exc:
        print(f"bench: i/o error: {exc}", file=err)
        return EXIT_IO

    for path in written:
        print(f"wrote {path}", file=out)
    _summarize(report, out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
