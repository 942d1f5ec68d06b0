"""Fixed-step time integrators on a shared matrix-free interface.

Three families over the same `OdeSystem` contract:

* explicit Runge-Kutta (FE, RK2, RK3SSP, RK4) from Butcher tableaus,
* diagonally implicit Runge-Kutta (BE, SDIRK2, SDIRK3) with inexact
  Newton stage solves and an unpreconditioned GMRES inner loop,
* exponential propagation (EPI2, EPIRK4) built on the adaptive Krylov
  phi-combination engine in `kiops`.

`make_stepper` binds a system and config to a single-step callable;
`integrate` drives it over a fixed grid and records cost counters.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from .kiops import KiopsStats, PhiCombinationTask, PhiConvergenceError, kiops_eval
from .numcore import Array, NumericError, OdeSystem, as_state, l2_norm, make_jac_operator

# Solution-norm ceiling beyond which a trajectory is declared diverged.
DIVERGENCE_NORM = 1e10

EXPLICIT_METHODS = ("FE", "RK2", "RK3SSP", "RK4")
IMPLICIT_METHODS = ("BE", "SDIRK2", "SDIRK3")
EXPONENTIAL_METHODS = ("EPI2", "EPIRK4")
METHODS = EXPLICIT_METHODS + IMPLICIT_METHODS + EXPONENTIAL_METHODS


class DivergenceError(RuntimeError):
    """A stage or state evaluation produced non-finite values."""


class GmresStagnationError(RuntimeError):
    """GMRES hit its iteration cap (or a singular projected system).

    Carries the last relative residual in `residual`.
    """

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = float(residual)


class NewtonConvergenceError(RuntimeError):
    """Newton iteration failed; `history` holds the residual norms seen."""

    def __init__(self, message: str, history: list):
        super().__init__(message)
        self.history = list(history)


class IntegrationFailure(RuntimeError):
    """A solver inside a step failed; `t` is the step's start time.

    `partial_report` and `steps_done` describe the work spent before
    the failure.
    """

    def __init__(self, t: float, cause: BaseException, partial_report=None, steps_done: int = 0):
        super().__init__(f"step starting at t={t!r} failed: {cause}")
        self.t = float(t)
        self.cause = cause
        self.partial_report = partial_report
        self.steps_done = int(steps_done)


@dataclass
class StepReport:
    """Additive cost counters for one step (or a whole integration).

    `matvecs` counts Jacobian-vector applications wherever they happen
    (Krylov basis growth, GMRES iterations, remainder corrections); a
    finite-difference Jacobian application is one matvec, not an rhs
    eval, so mixed analytic/FD runs stay comparable. `rhs_evals` counts
    direct right-hand-side calls only.
    """

    matvecs: int = 0
    rhs_evals: int = 0
    newton_iters: int = 0
    gmres_iters: int = 0
    krylov_projections: int = 0
    krylov_substeps: int = 0
    ortho_dots: int = 0
    normalizations: int = 0
    krylov_vectors: int = 0
    wall_time: float = 0.0

    def merge(self, other: "StepReport") -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))

    def absorb_kiops(self, stats: KiopsStats) -> None:
        self.matvecs += stats.matvecs
        self.krylov_projections += 1
        self.krylov_substeps += stats.substeps
        self.ortho_dots += stats.ortho_dots
        self.normalizations += stats.normalizations
        self.krylov_vectors += stats.vectors_appended


@dataclass
class StepperConfig:
    """Method choice plus tolerances for the inner solvers."""

    method: str
    h: float
    krylov_tol: float = 1e-10
    krylov_m_init: int = 10
    krylov_m_max: int = 128
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    gmres_tol: float = 1e-9
    gmres_max_iter: int = 200
    use_analytic_jacobian: bool = True

    def __post_init__(self):
        canon = str(self.method).upper()
        if canon not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        self.method = canon
        self.h = float(self.h)
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError("step size h must be positive and finite")
        for name in ("krylov_tol", "newton_tol", "gmres_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("newton_max_iter", "gmres_max_iter", "krylov_m_init", "krylov_m_max"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")


@dataclass(frozen=True)
class ButcherTableau:
    """Runge-Kutta coefficients; `a` rows are padded to full length."""

    name: str
    a: tuple
    b: tuple
    c: tuple
    order: int

    def __post_init__(self):
        s = len(self.b)
        if len(self.c) != s or len(self.a) != s:
            raise ValueError(f"{self.name}: inconsistent tableau sizes")
        if abs(sum(self.b) - 1.0) > 1e-12:
            raise ValueError(f"{self.name}: weights must sum to 1")
        for i, row in enumerate(self.a):
            if len(row) != s:
                raise ValueError(f"{self.name}: row {i} has wrong length")
            if abs(sum(row) - self.c[i]) > 1e-12:
                raise ValueError(f"{self.name}: row {i} sum does not match abscissa")

    @property
    def stages(self) -> int:
        return len(self.b)

    @property
    def explicit(self) -> bool:
        return all(
            self.a[i][j] == 0.0 for i in range(self.stages) for j in range(i, self.stages)
        )

    @property
    def gamma(self) -> float:
        # diagonally implicit with one repeated diagonal entry
        diag = {self.a[i][i] for i in range(self.stages)}
        if len(diag) != 1 or 0.0 in diag:
            raise ValueError(f"{self.name}: not singly diagonally implicit")
        for i in range(self.stages):
            if any(self.a[i][j] != 0.0 for j in range(i + 1, self.stages)):
                raise ValueError(f"{self.name}: upper triangle must vanish")
        return self.a[0][0]


_G2 = 1.0 - 1.0 / math.sqrt(2.0)  # L-stable two-stage choice
_G3 = (3.0 + math.sqrt(3.0)) / 6.0  # A-stable two-stage third order

TABLEAUS = {
    "FE": ButcherTableau("FE", ((0.0,),), (1.0,), (0.0,), 1),
    "RK2": ButcherTableau("RK2", ((0.0, 0.0), (0.5, 0.0)), (0.0, 1.0), (0.0, 0.5), 2),
    "RK3SSP": ButcherTableau(
        "RK3SSP",
        ((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.25, 0.25, 0.0)),
        (1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0),
        (0.0, 1.0, 0.5),
        3,
    ),
    "RK4": ButcherTableau(
        "RK4",
        (
            (0.0, 0.0, 0.0, 0.0),
            (0.5, 0.0, 0.0, 0.0),
            (0.0, 0.5, 0.0, 0.0),
            (0.0, 0.0, 1.0, 0.0),
        ),
        (1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0),
        (0.0, 0.5, 0.5, 1.0),
        4,
    ),
    "BE": ButcherTableau("BE", ((1.0,),), (1.0,), (1.0,), 1),
    "SDIRK2": ButcherTableau(
        "SDIRK2", ((_G2, 0.0), (1.0 - _G2, _G2)), (1.0 - _G2, _G2), (_G2, 1.0), 2
    ),
    "SDIRK3": ButcherTableau(
        "SDIRK3", ((_G3, 0.0), (1.0 - 2.0 * _G3, _G3)), (0.5, 0.5), (_G3, 1.0 - _G3), 3
    ),
}


def _require_finite(v: Array, what: str) -> None:
    if not np.all(np.isfinite(v)):
        raise DivergenceError(f"non-finite {what}")


def gmres(
    op: Callable[[Array], Array],
    b: Array,
    tol: float = 1e-9,
    max_iter: int = 200,
) -> "tuple[Array, int]":
    """Solve op(x) = b to relative residual `tol`; returns (x, iterations).

    Full-orthogonalization, restart-free, Givens-rotation residual
    tracking. Raises GmresStagnationError at the iteration cap or on a
    singular projected system.
    """
    b = as_state(b)
    n = b.size
    bnorm = l2_norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0
    limit = min(int(max_iter), n)
    v = np.zeros((limit + 1, n))
    hess = np.zeros((limit + 1, limit))
    cs = np.zeros(limit)
    sn = np.zeros(limit)
    g = np.zeros(limit + 1)
    v[0] = b / bnorm
    g[0] = bnorm
    res = 1.0

    for j in range(limit):
        # force a copy: op may hand back its input, and w is mutated below
        w = np.array(op(v[j]), dtype=np.float64)
        _require_finite(w, "GMRES operator output")
        for i in range(j + 1):
            hij = v[i] @ w
            hess[i, j] = hij
            w -= hij * v[i]
        wnorm = l2_norm(w)
        hess[j + 1, j] = wnorm
        for i in range(j):
            tmp = cs[i] * hess[i, j] + sn[i] * hess[i + 1, j]
            hess[i + 1, j] = -sn[i] * hess[i, j] + cs[i] * hess[i + 1, j]
            hess[i, j] = tmp
        rot = math.hypot(hess[j, j], hess[j + 1, j])
        if rot == 0.0:
            raise GmresStagnationError("singular projected system", res)
        cs[j], sn[j] = hess[j, j] / rot, hess[j + 1, j] / rot
        hess[j, j] = rot
        hess[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        res = abs(g[j + 1]) / bnorm
        k = j + 1
        if res <= tol or wnorm == 0.0:
            y = np.linalg.solve(np.triu(hess[:k, :k]), g[:k])
            return v[:k].T @ y, k
        v[j + 1] = w / wnorm

    raise GmresStagnationError(
        f"no convergence in {limit} iterations (relative residual {res:.3e})", res
    )


def newton_krylov_solve(
    residual: Callable[[Array], Array],
    y_guess: Array,
    cfg: StepperConfig,
    jac_op_builder: Optional[Callable[[Array, Array], Callable[[Array], Array]]] = None,
    report: Optional[StepReport] = None,
) -> Array:
    """Inexact Newton with GMRES inner solves.

    Stops once ||G|| <= newton_tol * (1 + ||G(y_guess)||). When no
    `jac_op_builder` is given the Jacobian action is approximated with
    forward differences of `residual`.
    """
    x = as_state(y_guess).copy()
    gval = as_state(residual(x))
    norm0 = l2_norm(gval)
    if not math.isfinite(norm0):
        raise NewtonConvergenceError("non-finite residual at initial guess", [norm0])
    target = cfg.newton_tol * (1.0 + norm0)
    history = [norm0]

    for _ in range(cfg.newton_max_iter):
        if history[-1] <= target:
            return x
        if jac_op_builder is not None:
            jop = jac_op_builder(x, gval)
        else:
            base_x, base_g = x, gval

            def jop(vec: Array, base_x=base_x, base_g=base_g) -> Array:
                vnorm = l2_norm(vec)
                if vnorm == 0.0:
                    return np.zeros_like(vec)
                delta = math.sqrt(np.finfo(np.float64).eps) * max(1.0, l2_norm(base_x)) / vnorm
                return (as_state(residual(base_x + delta * vec)) - base_g) / delta

        try:
            dx, its = gmres(jop, -gval, cfg.gmres_tol, cfg.gmres_max_iter)
        except GmresStagnationError as exc:
            raise NewtonConvergenceError(
                f"linear solve failed inside Newton: {exc}", history
            ) from exc
        if report is not None:
            report.gmres_iters += its
            report.newton_iters += 1
        x = x + dx
        gval = as_state(residual(x))
        gnorm = l2_norm(gval)
        if not math.isfinite(gnorm):
            raise NewtonConvergenceError("Newton iterate produced non-finite residual", history)
        history.append(gnorm)

    if history[-1] <= target:
        return x
    raise NewtonConvergenceError(
        f"no convergence in {cfg.newton_max_iter} Newton iterations", history
    )


def explicit_rk_step(
    system: OdeSystem,
    t: float,
    y: Array,
    h: float,
    tableau: ButcherTableau,
    report: StepReport,
) -> Array:
    ks = []
    for i in range(tableau.stages):
        yi = y
        for j in range(i):
            aij = tableau.a[i][j]
            if aij != 0.0:
                yi = yi + (h * aij) * ks[j]
        fi = as_state(system.rhs(t + tableau.c[i] * h, yi))
        report.rhs_evals += 1
        _require_finite(fi, f"stage {i} of {tableau.name}")
        ks.append(fi)
    y1 = y
    for bi, ki in zip(tableau.b, ks):
        if bi != 0.0:
            y1 = y1 + (h * bi) * ki
    _require_finite(y1, f"{tableau.name} update")
    return y1


def sdirk_step(
    system: OdeSystem,
    t: float,
    y: Array,
    h: float,
    tableau: ButcherTableau,
    cfg: StepperConfig,
    report: StepReport,
) -> Array:
    """One diagonally implicit step; each stage slope solves
    k = f(t_i, y_base + h*gamma*k) by Newton-Krylov."""
    gamma = tableau.gamma
    analytic = cfg.use_analytic_jacobian and system.jac_action is not None
    ks = []
    for i in range(tableau.stages):
        y_base = y
        for j in range(i):
            aij = tableau.a[i][j]
            if aij != 0.0:
                y_base = y_base + (h * aij) * ks[j]
        ti = t + tableau.c[i] * h

        def residual(k: Array, ti=ti, y_base=y_base) -> Array:
            report.rhs_evals += 1
            return k - as_state(system.rhs(ti, y_base + (h * gamma) * k))

        guess = as_state(system.rhs(ti, y_base))
        report.rhs_evals += 1
        _require_finite(guess, "implicit stage guess")

        builder = None
        if analytic:

            def builder(k: Array, gk: Array, y_base=y_base) -> Callable[[Array], Array]:
                u = y_base + (h * gamma) * k
                fu = k - gk  # residual definition gives f(t_i, u) for free

                def apply(vec: Array) -> Array:
                    report.matvecs += 1
                    return vec - (h * gamma) * system.jac_action(u, vec, fu)

                return apply

        k = newton_krylov_solve(residual, guess, cfg, builder, report)
        ks.append(k)

    y1 = y
    for bi, ki in zip(tableau.b, ks):
        if bi != 0.0:
            y1 = y1 + (h * bi) * ki
    _require_finite(y1, f"{tableau.name} update")
    return y1


def epi2_step(
    system: OdeSystem,
    t: float,
    y: Array,
    h: float,
    cfg: StepperConfig,
    report: StepReport,
    m_hints: dict,
) -> Array:
    """Second-order exponential step: y + phi_1(hJ) h f(y).

    Exactly one Krylov projection per step.
    """
    fy = as_state(system.rhs(t, y))
    report.rhs_evals += 1
    _require_finite(fy, "rhs at step start")
    jop = make_jac_operator(system, y, fy, t, use_analytic=cfg.use_analytic_jacobian)

    task = PhiCombinationTask(
        op=lambda v: h * jop(v),
        vs=[np.zeros_like(y), h * fy],
        taus=(1.0,),
        tol=cfg.krylov_tol,
        m_init=m_hints.get("p1", cfg.krylov_m_init),
        m_max=cfg.krylov_m_max,
    )
    (w,), stats = kiops_eval(task)
    report.absorb_kiops(stats)
    m_hints["p1"] = stats.krylov_dims[-1]
    y1 = y + w
    _require_finite(y1, "EPI2 update")
    return y1


# Remainder weights of the fourth-order two-stage exponential scheme.
_E4_P3 = (-1024.0, 1458.0)
_E4_P4 = (27648.0, -34992.0)
_E4_TAUS = (1.0 / 9.0, 1.0 / 8.0, 1.0)


def epirk4_step(
    system: OdeSystem,
    t: float,
    y: Array,
    h: float,
    cfg: StepperConfig,
    report: StepReport,
    m_hints: dict,
) -> Array:
    """Fourth-order two-stage exponential step, two Krylov projections.

    Projection one evaluates w(tau) = tau phi_1(tau hJ) h f(y) at
    tau = 1/9 and 1/8 to form both internal stages at once; projection
    two combines phi_1/phi_3/phi_4 terms with the stage remainders
    R(Y) = f(Y) - f(y) - J (Y - y).
    """
    fy = as_state(system.rhs(t, y))
    report.rhs_evals += 1
    _require_finite(fy, "rhs at step start")
    jop = make_jac_operator(system, y, fy, t, use_analytic=cfg.use_analytic_jacobian)
    hjop = lambda v: h * jop(v)
    zero = np.zeros_like(y)

    stage_task = PhiCombinationTask(
        op=hjop,
        vs=[zero, h * fy],
        taus=_E4_TAUS,
        tol=cfg.krylov_tol,
        m_init=m_hints.get("p1", cfg.krylov_m_init),
        m_max=cfg.krylov_m_max,
    )
    (w_ninth, w_eighth, _), stats1 = kiops_eval(stage_task)
    report.absorb_kiops(stats1)
    m_hints["p1"] = stats1.krylov_dims[-1]

    d1 = w_eighth  # Y1 - y, from tau = 1/8
    d2 = w_ninth  # Y2 - y, from tau = 1/9
    f1 = as_state(system.rhs(t, y + d1))
    f2 = as_state(system.rhs(t, y + d2))
    report.rhs_evals += 2
    _require_finite(f1, "first internal stage rhs")
    _require_finite(f2, "second internal stage rhs")
    r1 = f1 - fy - jop(d1)
    r2 = f2 - fy - jop(d2)
    report.matvecs += 2

    final_task = PhiCombinationTask(
        op=hjop,
        vs=[
            zero,
            h * fy,
            zero,
            h * (_E4_P3[0] * r1 + _E4_P3[1] * r2),
            h * (_E4_P4[0] * r1 + _E4_P4[1] * r2),
        ],
        taus=(1.0,),
        tol=cfg.krylov_tol,
        m_init=m_hints.get("p2", cfg.krylov_m_init),
        m_max=cfg.krylov_m_max,
    )
    (w_full,), stats2 = kiops_eval(final_task)
    report.absorb_kiops(stats2)
    m_hints["p2"] = stats2.krylov_dims[-1]

    y1 = y + w_full
    _require_finite(y1, "EPIRK4 update")
    return y1


def make_stepper(
    system: OdeSystem, cfg: StepperConfig
) -> Callable[[float, Array, float], "tuple[Array, StepReport]"]:
    """Bind system and config to a `(t, y, h) -> (y_next, StepReport)` callable.

    Exponential methods carry their Krylov dimension forward between
    calls as a warm start.
    """
    method = cfg.method
    m_hints: dict = {}

    if method in EXPLICIT_METHODS:
        tab = TABLEAUS[method]

        def step(t: float, y: Array, h: float):
            rep = StepReport()
            return explicit_rk_step(system, t, y, h, tab, rep), rep

    elif method in IMPLICIT_METHODS:
        tab = TABLEAUS[method]

        def step(t: float, y: Array, h: float):
            rep = StepReport()
            return sdirk_step(system, t, y, h, tab, cfg, rep), rep

    elif method == "EPI2":

        def step(t: float, y: Array, h: float):
            rep = StepReport()
            return epi2_step(system, t, y, h, cfg, rep, m_hints), rep

    else:  # EPIRK4

        def step(t: float, y: Array, h: float):
            rep = StepReport()
            return epirk4_step(system, t, y, h, cfg, rep, m_hints), rep

    return step


@dataclass
class IntegrationResult:
    y: Array
    report: StepReport
    steps: int
    diverged: bool
    t_reached: float
    final_step_shortened: bool


def integrate(
    system: OdeSystem,
    cfg: StepperConfig,
    t0: float,
    tf: float,
    y0: Array,
    observer: Optional[Callable[[float, Array, StepReport], None]] = None,
) -> IntegrationResult:
    """March from t0 to tf on a fixed grid of width cfg.h.

    When the span is not a whole multiple of h (to half an ulp of the
    ratio) the last step is shortened to land on tf exactly. Divergence
    (non-finite state or norm above DIVERGENCE_NORM) is recorded in the
    result, not raised; solver breakdowns raise IntegrationFailure.
    """
    y = as_state(y0).copy()
    if y.size != system.dim:
        raise ValueError(f"state has size {y.size}, system expects {system.dim}")
    span = float(tf) - float(t0)
    if span < 0:
        raise ValueError("tf must not precede t0")
    started = time.perf_counter()
    totals = StepReport()
    if span == 0:
        return IntegrationResult(y, totals, 0, False, float(t0), False)

    ratio = span / cfg.h
    nearest = round(ratio)
    if nearest >= 1 and abs(ratio - nearest) <= 0.5 * np.spacing(ratio):
        n_steps, shortened, h_last = int(nearest), False, cfg.h
    else:
        n_whole = int(math.floor(ratio))
        n_steps, shortened, h_last = n_whole + 1, True, span - n_whole * cfg.h

    stepper = make_stepper(system, cfg)
    t = float(t0)
    diverged = False
    steps_done = 0

    for k in range(n_steps):
        last = k == n_steps - 1
        hk = h_last if (shortened and last) else cfg.h
        try:
            y_next, rep = stepper(t, y, hk)
        except DivergenceError:
            diverged = True
            break
        except (NewtonConvergenceError, GmresStagnationError, PhiConvergenceError, NumericError) as exc:
            totals.wall_time = time.perf_counter() - started
            raise IntegrationFailure(t, exc, totals, steps_done) from exc
        totals.merge(rep)
        y = y_next
        steps_done += 1
        t = float(tf) if last else float(t0) + (k + 1) * cfg.h
        if not np.all(np.isfinite(y)) or l2_norm(y) > DIVERGENCE_NORM:
            diverged = True
            break
        if observer is not None:
            observer(t, y, rep)

    totals.wall_time = time.perf_counter() - started
    return IntegrationResult(y, totals, steps_done, diverged, t, shortened)
