"""Acceptance gate: one test per shipped criterion, each printing a
PASS/FAIL line with its measured values and runtime.

Study reports are built lazily and memoized so each study's cost is paid
inside the first criterion that needs it and reused afterwards.
"""
from __future__ import annotations

import math
import time
from pathlib import Path

import numpy as np

from expode.densephi import expm, phi_combination_dense, phi_k, phi_k_recurrence
from expode.kiops import PhiCombinationTask, kiops_eval
from expode.numcore import grid_l2_norm, jac_vec_fd, l2_norm
from expode.problems import (
    Diffusion1DParams,
    Diffusion2DParams,
    linear_operator_1d,
    make_system_1d,
    make_system_2d,
    node_coordinates_1d,
    node_grid_2d,
    source_gaussian,
)
from expode.steppers import IntegrationFailure, StepperConfig, integrate, make_stepper
from expode.bench.config import load_study
from expode.bench.csvout import emit_csv
from expode.bench.runner import run_study

from _oracles import sym_with_spectrum, smooth_states_1d, smooth_states_2d

STUDIES_DIR = Path(__file__).resolve().parents[1] / "studies"

IMPLICIT_AND_EXPONENTIAL = ("BE", "SDIRK2", "SDIRK3", "EPI2", "EPIRK4")

_REPORT_CACHE: dict = {}


def _study_report(name: str, as_precision: bool = False):
    key = (name, as_precision)
    if key not in _REPORT_CACHE:
        overrides = None
        if as_precision:
            overrides = {"study": {"kind": "precision", "repetitions": "1"}}
        cfg = load_study(STUDIES_DIR / f"{name}.study", overrides)
        _REPORT_CACHE[key] = (cfg, run_study(cfg))
    return _REPORT_CACHE[key]


# --------------------------------------------------------------------------


def test_criterion_1_linear_exactness_1d(criterion_report):
    t0 = time.perf_counter()
    params = Diffusion1DParams(n_elem=50, beta1=5e-3, beta2=0.0)
    system = make_system_1d(params)
    tf = 0.1
    hs = [tf / m for m in (4, 8, 16, 32, 64)]
    a = linear_operator_1d(params)
    src = source_gaussian(node_coordinates_1d(params), params.sigma)
    y_star = phi_combination_dense(tf * a, [np.zeros(params.dim), tf * src])

    errors = {}
    for method in ("EPI2", "EPIRK4", "BE"):
        errors[method] = []
        for h in hs:
            cfg = StepperConfig(method=method, h=h, krylov_tol=1e-10)
            res = integrate(system, cfg, 0.0, tf, np.zeros(params.dim))
            errors[method].append(grid_l2_norm(res.y - y_star, params.cell_volume))

    exp_ok = all(
        err <= 1e-6 for method in ("EPI2", "EPIRK4") for err in errors[method]
    )
    be = errors["BE"]  # hs descend, so BE errors must strictly descend too
    be_ok = all(a_ > b_ for a_, b_ in zip(be, be[1:]))
    elapsed = time.perf_counter() - t0
    ok = exp_ok and be_ok and elapsed <= 10.0
    worst = max(max(errors["EPI2"]), max(errors["EPIRK4"]))
    line = criterion_report(
        1,
        "1D linear exactness of exponential steppers",
        ok,
        f"max exp err {worst:.2e} (<=1e-6), BE monotone {be_ok}, {elapsed:.1f}s",
    )
    assert ok, line


def test_criterion_2_convergence_orders_1d(criterion_report):
    t0 = time.perf_counter()
    _, report = _study_report("conv_1d_coarse")
    windows = {
        "FE": (1.0, 0.2),
        "RK2": (2.0, 0.25),
        "RK3SSP": (3.0, 0.35),
        "RK4": (4.0, 0.5),
        "BE": (1.0, 0.2),
        "SDIRK2": (2.0, 0.25),
        "SDIRK3": (3.0, 0.35),
        "EPI2": (2.0, 0.25),
        "EPIRK4": (4.0, 0.5),
    }
    measured = {}
    bad = []
    for method, (target, width) in windows.items():
        fit = report.orders.get(method)
        if fit is None or fit.flat:
            bad.append(f"{method}: no usable fit")
            continue
        measured[method] = fit.fitted_order
        if abs(fit.fitted_order - target) > width:
            bad.append(f"{method}: {fit.fitted_order:.2f} vs {target}+-{width}")
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed <= 60.0
    summary = ", ".join(f"{m} {measured[m]:.2f}" for m in sorted(measured))
    line = criterion_report(
        2,
        "1D nonlinear convergence orders (9 methods)",
        ok,
        (f"{summary}; " + ("; ".join(bad) + "; " if bad else "") + f"{elapsed:.1f}s"),
    )
    assert ok, line


def test_criterion_3_explicit_instability_on_fine_grid(criterion_report):
    t0 = time.perf_counter()
    params = Diffusion1DParams(n_elem=200, beta1=5e-5, beta2=5e-3)
    system = make_system_1d(params)
    tf, h = 2.0, 0.25
    outcomes = {}
    for method in ("FE", "RK4") + IMPLICIT_AND_EXPONENTIAL:
        cfg = StepperConfig(method=method, h=h, krylov_tol=1e-10)
        try:
            res = integrate(system, cfg, 0.0, tf, np.zeros(params.dim))
            outcomes[method] = bool(res.diverged or not np.all(np.isfinite(res.y)))
        except IntegrationFailure:
            outcomes[method] = True
    explicit_ok = outcomes["FE"] and outcomes["RK4"]
    stable_ok = not any(outcomes[m] for m in IMPLICIT_AND_EXPONENTIAL)
    elapsed = time.perf_counter() - t0
    ok = explicit_ok and stable_ok and elapsed <= 60.0
    diverged_names = ", ".join(m for m, d in sorted(outcomes.items()) if d)
    line = criterion_report(
        3,
        "n=200 grid: FE/RK4 diverge, stiff solvers finish",
        ok,
        f"diverged={{{diverged_names}}}, {elapsed:.1f}s",
    )
    assert ok, line


def test_criterion_4_convergence_orders_2d(criterion_report):
    t0 = time.perf_counter()
    _, coarse = _study_report("conv_2d_coarse")
    windows = {
        "EPI2": (2.0, 0.3),
        "EPIRK4": (4.0, 0.6),
        "SDIRK2": (2.0, 0.3),
        "SDIRK3": (3.0, 0.4),
    }
    measured = {}
    bad = []
    for method, (target, width) in windows.items():
        fit = coarse.orders.get(method)
        if fit is None or fit.flat:
            bad.append(f"{method}: no usable fit")
            continue
        measured[method] = fit.fitted_order
        if abs(fit.fitted_order - target) > width:
            bad.append(f"{method}: {fit.fitted_order:.2f} vs {target}+-{width}")

    _, fine = _study_report("conv_2d_fine")
    h_max = max(r.h for r in fine.rows)
    top = {r.method: r for r in fine.rows if r.h == h_max}
    explicit_ok = top["FE"].diverged and top["RK4"].diverged
    stable_ok = all(
        not r.diverged and math.isfinite(r.error)
        for r in fine.rows
        if r.method in IMPLICIT_AND_EXPONENTIAL
    )
    elapsed = time.perf_counter() - t0
    ok = not bad and explicit_ok and stable_ok and elapsed <= 300.0
    summary = ", ".join(f"{m} {measured[m]:.2f}" for m in sorted(measured))
    line = criterion_report(
        4,
        "2D anisotropic orders + n=50 stability contrast",
        ok,
        (
            f"{summary}; contrast FE/RK4 diverged={explicit_ok}, "
            f"stiff finite={stable_ok}; "
            + ("; ".join(bad) + "; " if bad else "")
            + f"{elapsed:.1f}s"
        ),
    )
    assert ok, line


def test_criterion_5_kiops_oracle_equivalence(criterion_report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    worst = 0.0
    for trial in range(50):
        n = int(rng.integers(5, 41))
        p = int(rng.integers(0, 5))
        a = sym_with_spectrum(rng, n, -50.0, 0.0)
        vs = [rng.standard_normal(n) for _ in range(p + 1)]
        tol = 1e-6 if trial % 2 == 0 else 1e-10
        w, _ = kiops_eval(PhiCombinationTask(op=lambda v: a @ v, vs=vs, tol=tol))
        expected = phi_combination_dense(a, vs)
        rel = np.linalg.norm(w[-1] - expected) / max(1.0, np.linalg.norm(expected))
        worst = max(worst, rel / (100.0 * tol))
        if rel > 100.0 * tol:
            break
    elapsed = time.perf_counter() - t0
    ok = worst <= 1.0 and elapsed <= 10.0
    line = criterion_report(
        5,
        "50 random Krylov tasks vs dense oracle",
        ok,
        f"worst error/(100*tol) = {worst:.3f}, {elapsed:.1f}s",
    )
    assert ok, line


def test_criterion_6_projection_and_dot_budgets(criterion_report):
    t0 = time.perf_counter()
    cfg_study, report = _study_report("conv_1d_coarse")
    per_step_expected = {"EPI2": 1, "EPIRK4": 2}
    bad = []

    # Row totals from the study itself.
    for row in report.rows:
        want = per_step_expected.get(row.method)
        if want is None or row.diverged:
            continue
        if row.krylov_projections != want * row.steps:
            bad.append(
                f"{row.method} h={row.h}: {row.krylov_projections} projections "
                f"over {row.steps} steps"
            )

    # Per-step checks via an observer on fresh integrations of the same runs.
    system = make_system_1d(cfg_study.problem)
    for method, want in per_step_expected.items():
        for h in cfg_study.h_values:
            def observer(t, y, rep, method=method, want=want, h=h):
                if rep.krylov_projections != want:
                    bad.append(f"{method} h={h} t={t:.3f}: {rep.krylov_projections} projections")
                if rep.ortho_dots > 2 * rep.normalizations:
                    bad.append(f"{method} h={h} t={t:.3f}: ortho dots {rep.ortho_dots}")
                if rep.normalizations > rep.krylov_vectors + rep.krylov_substeps:
                    bad.append(f"{method} h={h} t={t:.3f}: normalizations {rep.normalizations}")

            scfg = StepperConfig(
                method=method,
                h=h,
                krylov_tol=cfg_study.krylov_tol,
                newton_tol=cfg_study.newton_tol,
                gmres_tol=cfg_study.gmres_tol,
            )
            integrate(
                system,
                scfg,
                0.0,
                cfg_study.t_final,
                np.zeros(system.dim),
                observer=observer,
            )
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed <= 60.0
    line = criterion_report(
        6,
        "Krylov projection and dot-product budgets",
        ok,
        ("all steps within budget" if not bad else "; ".join(bad[:3])) + f", {elapsed:.1f}s",
    )
    assert ok, line


def test_criterion_7_precision_reproduction(criterion_report, tmp_path):
    t0 = time.perf_counter()
    _, fine = _study_report("conv_1d_fine")

    def cheapest(method, cost_fn):
        usable = [
            r
            for r in fine.rows
            if r.method == method and not r.diverged and r.error <= 1e-5
        ]
        return min(cost_fn(r) for r in usable) if usable else None

    cost_exp = cheapest("EPIRK4", lambda r: r.matvecs + r.rhs_evals)
    cost_imp = cheapest("SDIRK3", lambda r: r.gmres_iters + r.rhs_evals)
    crossover_ok = cost_exp is not None and cost_imp is not None and cost_exp < cost_imp

    configs = [
        ("prec_1d_coarse", False),
        ("prec_1d_fine", False),
        ("prec_2d_coarse", False),
        ("prec_2d_fine", False),
        ("conv_1d_coarse", True),
        ("conv_1d_fine", True),
        ("conv_2d_coarse", True),
        ("conv_2d_fine", True),
    ]
    bad = []
    for name, flip in configs:
        _, rep = _study_report(name, as_precision=flip)
        emit_csv(rep, tmp_path / f"{name}.csv")
        for row in rep.rows:
            if row.method in IMPLICIT_AND_EXPONENTIAL and row.diverged:
                bad.append(f"{name}: {row.method} diverged at h={row.h}")
    elapsed = time.perf_counter() - t0
    ok = crossover_ok and not bad and elapsed <= 600.0
    line = criterion_report(
        7,
        "cost crossover + eight precision CSVs",
        ok,
        (
            f"EPIRK4 cost {cost_exp} < SDIRK3 cost {cost_imp}: {crossover_ok}; "
            f"{len(configs) - len(bad)}/{len(configs)} clean; "
            + ("; ".join(bad[:3]) + "; " if bad else "")
            + f"{elapsed:.1f}s"
        ),
    )
    assert ok, line


def test_criterion_8_jacobian_correctness(criterion_report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    worst = 0.0

    params1 = Diffusion1DParams(n_elem=50, beta1=5e-5, beta2=5e-3)
    system1 = make_system_1d(params1)
    x = node_coordinates_1d(params1)
    for y in smooth_states_1d(rng, x, 20):
        f = system1.rhs(0.0, y)
        v = rng.standard_normal(params1.dim)
        got = system1.jac_action(y, v, f)
        ref = jac_vec_fd(system1, y, v, f)
        worst = max(worst, l2_norm(got - ref) / max(l2_norm(ref), 1e-30))

    params2 = Diffusion2DParams(n_side=20)
    system2 = make_system_2d(params2)
    xg, yg = node_grid_2d(params2)
    for y in smooth_states_2d(rng, xg, yg, 20):
        f = system2.rhs(0.0, y)
        v = rng.standard_normal(params2.dim)
        got = system2.jac_action(y, v, f)
        ref = jac_vec_fd(system2, y, v, f)
        worst = max(worst, l2_norm(got - ref) / max(l2_norm(ref), 1e-30))

    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-5 and elapsed <= 5.0
    line = criterion_report(
        8,
        "analytic vs finite-difference Jacobian action",
        ok,
        f"worst relative deviation {worst:.2e} (<=1e-5), {elapsed:.1f}s",
    )
    assert ok, line


def test_criterion_9_phi_identities(criterion_report):
    t0 = time.perf_counter()
    bad = []

    for k in range(5):
        dev = np.max(np.abs(phi_k(np.zeros((4, 4)), k) - np.eye(4) / math.factorial(k)))
        if dev > 1e-12:
            bad.append(f"phi_{k}(0) off by {dev:.1e}")

    rng = np.random.default_rng(9)
    a = sym_with_spectrum(rng, 6, -4.0, -0.5)
    for k in range(4):
        ref = phi_k_recurrence(a, k)
        dev = np.linalg.norm(phi_k(a, k) - ref, 2)
        if dev > 1e-10 * np.linalg.norm(ref, 2):
            bad.append(f"recurrence k={k} off by {dev:.1e}")

    b = sym_with_spectrum(rng, 8, -5.0, 5.0)
    b *= 5.0 / np.linalg.norm(b, 2)
    dev = np.linalg.norm(expm(b) @ expm(-b) - np.eye(8), 2)
    if dev > 1e-10:
        bad.append(f"expm inverse off by {dev:.1e}")

    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed <= 2.0
    line = criterion_report(
        9,
        "phi-function and exponential identities",
        ok,
        ("all identities hold" if not bad else "; ".join(bad)) + f", {elapsed:.1f}s",
    )
    assert ok, line
