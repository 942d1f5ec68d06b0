"""Figure rendering for study reports.

One log-log PNG per study next to the CSV: error vs step size for
convergence studies, error vs wall time for precision studies.
Diverged cells are dropped from the curves.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .runner import StudyReport

_MARKERS = ("o", "s", "^", "v", "D", "p", "*", "x", "+")


def render_figure(report: StudyReport, prefix) -> "Path | None":
    """Render the study's diagram to <prefix>_<kind>.png.

    Returns the written path, or None when no finite points exist.
    """
    precision = report.kind == "precision"
    methods = []
    for row in report.rows:
        if row.method not in methods:
            methods.append(row.method)

    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    plotted = False
    for k, method in enumerate(methods):
        pts = [
            ((row.wall_time_s if precision else row.h), row.error)
            for row in report.rows
            if row.method == method
            and not row.diverged
            and math.isfinite(row.error)
            and row.error > 0.0
            and (not precision or row.wall_time_s > 0.0)
        ]
        if not pts:
            continue
        if precision:
            pts.sort(key=lambda p: p[0])
        xs, ys = zip(*pts)
        ax.loglog(xs, ys, marker=_MARKERS[k % len(_MARKERS)], label=method)
        plotted = True

    if not plotted:
        plt.close(fig)
        return None

    if precision:
        ax.set_xlabel("wall time [s]")
        ax.set_title("error vs time to solution")
    else:
        ax.set_xlabel("step size h")
        ax.set_title("error vs step size")
    ax.set_ylabel("grid-L2 error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()

    out = Path(f"{prefix}_{report.kind}.png")
    fig.savefig(out, dpi=130)
    plt.close(fig)
    return out
