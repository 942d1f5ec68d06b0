"""Study execution: reference solutions, sweeps, order fits, assertions.

Errors are measured in the grid-weighted L2 norm against a reference
trajectory computed on the same spatial grid with the reference method
at a much smaller step, so a sweep isolates time-discretization error.
References are cached on disk keyed by a content hash of everything
that determines them.
"""

from __future__ import annotations

import hashlib
import math
import os
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..numcore import OdeSystem, grid_l2_norm
from ..problems import (
    Diffusion1DParams,
    Diffusion2DParams,
    make_system_1d,
    make_system_2d,
)
from ..steppers import IntegrationFailure, StepperConfig, StepReport, integrate
from .config import StudyConfig, VerifyAssertion

# Order fits over errors at or below this floor say nothing about the
# scheme's rate; such methods are reported as exact/flat instead.
FLAT_ERROR_FLOOR = 1e-8
CACHE_ENV_VAR = "BENCH_CACHE_DIR"
DEFAULT_CACHE_DIR = ".bench-cache"


class StudyFatalError(RuntimeError):
    """The study cannot produce meaningful output (reference diverged)."""


@dataclass
class StudyRow:
    method: str
    h: float
    error: float
    wall_time_s: float
    steps: int
    matvecs: int
    rhs_evals: int
    newton_iters: int
    krylov_projections: int
    diverged: bool
    # kept out of the CSV row; used by verification and tests
    gmres_iters: int = 0
    ortho_dots: int = 0
    normalizations: int = 0
    krylov_vectors: int = 0


@dataclass
class OrderFit:
    fitted_order: float
    points_used: int
    flat: bool = False


@dataclass
class StudyReport:
    kind: str
    rows: list
    orders: dict  # method name -> OrderFit


def make_problem(cfg: StudyConfig) -> "tuple[OdeSystem, float]":
    """System plus the cell volume that weights the error norm."""
    if cfg.problem_type == "diff1d":
        assert isinstance(cfg.problem, Diffusion1DParams)
        return make_system_1d(cfg.problem), cfg.problem.cell_volume
    assert isinstance(cfg.problem, Diffusion2DParams)
    return make_system_2d(cfg.problem), cfg.problem.cell_volume


def _cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV_VAR) or DEFAULT_CACHE_DIR)


def _reference_key(cfg: StudyConfig) -> str:
    p = cfg.problem
    if cfg.problem_type == "diff1d":
        pdesc = (
            f"diff1d;n_elem={p.n_elem};beta1={p.beta1!r};beta2={p.beta2!r};sigma={p.sigma!r}"
        )
    else:
        pdesc = (
            f"diff2d;n_side={p.n_side};kappa={p.kappa!r};eps_perp={p.eps_perp!r};"
            f"beta1={p.beta1!r};beta2={p.beta2!r};sigma={p.sigma!r};"
            f"wires={p.wires!r};strengths={p.strengths!r}"
        )
    blob = (
        f"v1;{pdesc};t_final={cfg.t_final!r};h_ref={cfg.h_ref!r};"
        f"method={cfg.ref_method};krylov_tol={cfg.ref_krylov_tol!r}"
    )
    return hashlib.sha256(blob.encode()).hexdigest()


def reference_solution(cfg: StudyConfig, system: Optional[OdeSystem] = None) -> np.ndarray:
    """Final state at t_final from the reference method at h_ref.

    Cached to `$BENCH_CACHE_DIR` (default ./.bench-cache); a cache hit
    returns the stored vector bit for bit.
    """
    key = _reference_key(cfg)
    cache_file = _cache_dir() / f"ref_{key}.npz"
    if cache_file.exists():
        with np.load(cache_file) as data:
            return np.array(data["y"], dtype=np.float64)

    if system is None:
        system, _ = make_problem(cfg)
    scfg = StepperConfig(
        method=cfg.ref_method,
        h=cfg.h_ref,
        krylov_tol=cfg.ref_krylov_tol,
        newton_tol=min(cfg.newton_tol, 1e-12),
        gmres_tol=min(cfg.gmres_tol, 1e-10),
    )
    y0 = np.zeros(system.dim)
    try:
        result = integrate(system, scfg, 0.0, cfg.t_final, y0)
    except IntegrationFailure as exc:
        raise StudyFatalError(f"reference integration failed: {exc}") from exc
    if result.diverged:
        raise StudyFatalError(
            f"reference solution diverged at t = {result.t_reached!r}; "
            "the study configuration is unusable"
        )

    cache_file.parent.mkdir(parents=True, exist_ok=True)
    tmp = cache_file.with_suffix(".tmp.npz")
    np.savez(tmp, y=result.y)
    tmp.replace(cache_file)
    return result.y


def _run_cell(
    system: OdeSystem,
    cfg: StudyConfig,
    method: str,
    h: float,
    y_ref: np.ndarray,
    cell_volume: float,
    repetitions: int,
) -> StudyRow:
    scfg = StepperConfig(
        method=method,
        h=h,
        krylov_tol=cfg.krylov_tol,
        newton_tol=cfg.newton_tol,
        gmres_tol=cfg.gmres_tol,
    )
    y0 = np.zeros(system.dim)
    times = []
    result = None
    failure: Optional[IntegrationFailure] = None
    for _ in range(repetitions):
        try:
            result = integrate(system, scfg, 0.0, cfg.t_final, y0)
        except IntegrationFailure as exc:
            failure = exc
            break
        times.append(result.report.wall_time)

    if failure is not None:
        rep = failure.partial_report or StepReport()
        return StudyRow(
            method=method,
            h=h,
            error=math.inf,
            wall_time_s=rep.wall_time,
            steps=failure.steps_done,
            matvecs=rep.matvecs,
            rhs_evals=rep.rhs_evals,
            newton_iters=rep.newton_iters,
            krylov_projections=rep.krylov_projections,
            diverged=True,
            gmres_iters=rep.gmres_iters,
            ortho_dots=rep.ortho_dots,
            normalizations=rep.normalizations,
            krylov_vectors=rep.krylov_vectors,
        )

    rep = result.report
    if result.diverged:
        error = math.inf
    else:
        error = grid_l2_norm(result.y - y_ref, cell_volume)
    return StudyRow(
        method=method,
        h=h,
        error=float(error),
        wall_time_s=statistics.median(times),
        steps=result.steps,
        matvecs=rep.matvecs,
        rhs_evals=rep.rhs_evals,
        newton_iters=rep.newton_iters,
        krylov_projections=rep.krylov_projections,
        diverged=bool(result.diverged),
        gmres_iters=rep.gmres_iters,
        ortho_dots=rep.ortho_dots,
        normalizations=rep.normalizations,
        krylov_vectors=rep.krylov_vectors,
    )


def fit_orders(rows) -> dict:
    """Least-squares slope of log error vs log h per method.

    Only methods with at least three usable points get an entry; a
    method whose usable errors all sit at the accuracy floor is marked
    flat instead of being given a meaningless slope.
    """
    orders: dict = {}
    methods = []
    for row in rows:
        if row.method not in methods:
            methods.append(row.method)
    for method in methods:
        pts = [
            (row.h, row.error)
            for row in rows
            if row.method == method
            and not row.diverged
            and math.isfinite(row.error)
            and row.error > 0.0
        ]
        if len(pts) < 3:
            continue
        if all(err <= FLAT_ERROR_FLOOR for _, err in pts):
            orders[method] = OrderFit(fitted_order=0.0, points_used=len(pts), flat=True)
            continue
        hs = np.log([h for h, _ in pts])
        es = np.log([e for _, e in pts])
        slope = float(np.polyfit(hs, es, 1)[0])
        orders[method] = OrderFit(fitted_order=slope, points_used=len(pts))
    return orders


def run_study(cfg: StudyConfig) -> StudyReport:
    """Run the full sweep described by cfg and fit orders.

    Convergence studies run each cell once; precision studies run each
    cell `repetitions` times sequentially and keep the median wall
    time. Rows come out sorted by method name, then h descending.
    """
    system, cell_volume = make_problem(cfg)
    y_ref = reference_solution(cfg, system)
    repetitions = cfg.repetitions if cfg.kind == "precision" else 1

    rows = []
    for method in sorted(cfg.methods):
        for h in sorted(cfg.h_values, reverse=True):
            rows.append(_run_cell(system, cfg, method, h, y_ref, cell_volume, repetitions))
    return StudyReport(kind=cfg.kind, rows=rows, orders=fit_orders(rows))


def run_convergence(cfg: StudyConfig) -> StudyReport:
    if cfg.kind != "convergence":
        raise ValueError("config does not describe a convergence study")
    return run_study(cfg)


def run_precision(cfg: StudyConfig) -> StudyReport:
    if cfg.kind != "precision":
        raise ValueError("config does not describe a precision study")
    return run_study(cfg)


def evaluate_assertion(assertion: VerifyAssertion, report: StudyReport) -> "tuple[bool, str]":
    """Check one [verify] assertion; returns (passed, detail text)."""
    rows = [row for row in report.rows if row.method == assertion.method]
    if not rows:
        return False, f"no rows for method {assertion.method}"

    if assertion.kind == "order":
        fit = report.orders.get(assertion.method)
        if fit is None:
            return False, "fewer than 3 usable points, no order fit"
        if fit.flat:
            return False, "errors sit at the accuracy floor (exact/flat), no rate to check"
        ok = abs(fit.fitted_order - assertion.target) <= assertion.tolerance
        return ok, f"fitted order {fit.fitted_order:.3f} over {fit.points_used} points"

    if assertion.kind == "max_error":
        usable = [row.error for row in rows if not row.diverged]
        if not usable:
            return False, "every row diverged"
        worst = max(usable)
        return worst <= assertion.target, f"max error {worst:.3e}"

    if assertion.kind == "finite":
        bad = [row.h for row in rows if row.diverged]
        if bad:
            return False, f"diverged at h = {bad}"
        return True, "all rows finite"

    # diverged at the largest step
    largest = max(rows, key=lambda row: row.h)
    return largest.diverged, f"h = {largest.h!r} diverged = {str(largest.diverged).lower()}"


def evaluate_assertions(cfg: StudyConfig, report: StudyReport):
    """Yield (assertion, passed, detail) for each [verify] entry."""
    return [(a, *evaluate_assertion(a, report)) for a in cfg.assertions]
