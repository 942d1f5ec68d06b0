"""CSV serialization for study reports.

Floats are written with repr() so the shortest round-trip decimal is
emitted and reading the file back reproduces every value bit for bit;
infinities appear as the literal `inf`, booleans as `true`/`false`.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

from .runner import StudyReport, StudyRow

CSV_HEADER = (
    "method",
    "h",
    "error",
    "wall_time_s",
    "steps",
    "matvecs",
    "rhs_evals",
    "newton_iters",
    "krylov_projections",
    "diverged",
)
ORDERS_HEADER = ("method", "fitted_order", "points_used")
FLAT_ORDER_LITERAL = "exact/flat"


def _fmt_float(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(float(value))


def emit_csv(report: StudyReport, path) -> Path:
    """Write one row per (method, h) cell; header always present."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in report.rows:
            writer.writerow(
                [
                    row.method,
                    _fmt_float(row.h),
                    _fmt_float(row.error),
                    _fmt_float(row.wall_time_s),
                    row.steps,
                    row.matvecs,
                    row.rhs_evals,
                    row.newton_iters,
                    row.krylov_projections,
                    "true" if row.diverged else "false",
                ]
            )
    return path


def emit_orders_csv(report: StudyReport, path) -> Path:
    """Write the per-method fitted orders; methods without at least
    three usable points are left out."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ORDERS_HEADER)
        for method in sorted(report.orders):
            fit = report.orders[method]
            order_text = FLAT_ORDER_LITERAL if fit.flat else _fmt_float(fit.fitted_order)
            writer.writerow([method, order_text, fit.points_used])
    return path


def read_report(path) -> "list[StudyRow]":
    """Parse a study CSV back into rows (counters beyond the CSV
    columns default to zero)."""
    path = Path(path)
    rows = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected header {header!r}")
        for rec in reader:
            rows.append(
                StudyRow(
                    method=rec[0],
                    h=float(rec[1]),
                    error=float(rec[2]),
                    wall_time_s=float(rec[3]),
                    steps=int(rec[4]),
                    matvecs=int(rec[5]),
                    rhs_evals=int(rec[6]),
                    newton_iters=int(rec[7]),
                    krylov_projections=int(rec[8]),
                    diverged={"true": True, "false": False}[rec[9]],
                )
            )
    return rows
