"""Adaptive Krylov evaluation of linear combinations of phi functions.

A task asks for w(tau) = sum_i tau^i phi_i(tau*A) @ v_i at one or more points
tau in (0, 1].  Following the augmented-matrix formulation, w(tau) equals the
first n entries of e^(tau*Atilde) [v_0; e_p] with

    Atilde = [[A, B], [0, K]],  B = [v_p | ... | v_1],  K = p x p upshift,

so a single Arnoldi process with incomplete orthogonalization (IOP) serves all
phi orders at once.  The time interval is covered by adaptive substeps; each
substep projects the exponential onto the current Krylov basis and accepts or
rejects on a cheap a-posteriori error estimate.  The basis dimension m adapts
between substeps: two consecutive first-try acceptances shrink m by 10%, each
rejection grows it by a third.

See Gaudreault, Rainwater, Tokman, "KIOPS: a fast adaptive Krylov subspace
solver for exponential integrators" (J. Comput. Phys. 372, 2018) for the
algorithm family.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple

import numpy as np

from . import densephi
from .numcore import Array, NumericError, as_state

# smallest admissible substep before giving up
TAU_MIN = 1e-6
# lower bound for the adaptive Krylov dimension (clamped to the problem size)
M_MIN = 10
# happy-breakdown threshold relative to the start-vector norm
BREAKDOWN_RTOL = 1e-14

_SUBSTEP_BUDGET = 100_000


class PhiConvergenceError(RuntimeError):
    """The substep controller could not reach the requested accuracy."""

    def __init__(self, message: str, stats: "KiopsStats"):
        super().__init__(message)
        self.stats = stats


@dataclass
class KiopsStats:
    """Work counters for one kiops_eval call."""

    matvecs: int = 0
    substeps: int = 0
    rejections: int = 0
    krylov_dims: List[int] = field(default_factory=list)
    ortho_dots: int = 0
    normalizations: int = 0
    vectors_appended: int = 0


@dataclass
class PhiCombinationTask:
    """One phi-combination evaluation request.

    op must be the linear action v -> (h*J) @ v, i.e. the step size is folded
    into the operator.  vs holds [v_0, v_1, ..., v_p]; taus the requested
    output points, ascending with taus[-1] == 1.
    """

    op: Callable[[Array], Array]
    vs: Sequence[Array]
    taus: Sequence[float] = (1.0,)
    tol: float = 1e-10
    m_init: int = 10
    m_max: int = 128
    iop_length: int = 2

    def __post_init__(self):
        vs = [as_state(v) for v in self.vs]
        if not vs:
            raise ValueError("vs must contain at least v_0")
        n = vs[0].size
        for v in vs:
            if v.size != n:
                raise ValueError("all vs entries must share one length")
            if not np.all(np.isfinite(v)):
                raise ValueError("vs entries must be finite")
        self.vs = vs
        taus = tuple(float(t) for t in self.taus)
        if not taus or taus[-1] != 1.0:
            raise ValueError("taus must end at 1.0")
        if any(t <= 0.0 or t > 1.0 for t in taus):
            raise ValueError("taus must lie in (0, 1]")
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ValueError("taus must be strictly ascending")
        self.taus = taus
        if not self.tol > 0.0:
            raise ValueError("tol must be positive")
        if self.m_init < 1 or self.m_max < 1 or self.iop_length < 1:
            raise ValueError("m_init, m_max and iop_length must be >= 1")


class KrylovWorkspace:
    """Arnoldi basis/Hessenberg pair with incomplete orthogonalization.

    Basis vectors are stored as rows of `v` (at most m_cap + 1 of them); `h` is
    the (m_cap+1) x m_cap Hessenberg array.  Work counters survive resets so a
    multi-substep evaluation accumulates totals in one place.
    """

    def __init__(self, n_aug: int, m_cap: int, iop_length: int):
        self.v = np.zeros((m_cap + 1, n_aug))
        self.h = np.zeros((m_cap + 1, m_cap))
        self.m_cap = m_cap
        self.iop_length = iop_length
        self.m = 0
        self.beta = 0.0
        self.happy = False
        self.matvecs = 0
        self.ortho_dots = 0
        self.normalizations = 0
        self.vectors_appended = 0

    def reset(self, v0: Array, beta: float) -> None:
        """Start a fresh basis from the (unnormalized) vector v0 with ||v0|| = beta."""
        self.v[0] = v0 / beta
        self.h[:, :] = 0.0
        self.m = 0
        self.beta = beta
        self.happy = False


def iop_arnoldi_extend(ws: KrylovWorkspace, op: Callable[[Array], Array]) -> bool:
    """Append one Arnoldi column, orthogonalizing against the last iop_length
    basis vectors only.  Returns True on happy breakdown (the new direction is
    numerically contained in the basis; no vector is appended then).
    """
    c = ws.m
    if ws.happy or c >= ws.m_cap:
        return ws.happy
    w = op(ws.v[c])
    ws.matvecs += 1
    ilow = max(0, c - ws.iop_length + 1)
    coeffs = ws.v[ilow:c + 1] @ w
    ws.ortho_dots += c + 1 - ilow
    ws.h[ilow:c + 1, c] = coeffs
    w = w - coeffs @ ws.v[ilow:c + 1]
    nrm = float(np.linalg.norm(w))
    ws.normalizations += 1
    if not math.isfinite(nrm):
        raise NumericError("non-finite Arnoldi vector (operator blew up)")
    ws.m = c + 1
    if nrm <= BREAKDOWN_RTOL * ws.beta:
        ws.happy = True
        return True
    ws.h[c + 1, c] = nrm
    ws.v[c + 1] = w / nrm
    ws.vectors_appended += 1
    return False


def _phi1_augmented_exp(ws: KrylovWorkspace, tau: float) -> np.ndarray:
    """exp(tau * Hhat) where Hhat is the m x m Hessenberg block with an extra
    column e_1 appended (and a zero last row), so column m carries phi_1 data
    used by the error estimate."""
    j = ws.m
    hh = np.zeros((j + 1, j + 1))
    hh[:j, :j] = ws.h[:j, :j]
    hh[0, j] = 1.0
    return densephi.expm(tau * hh)


def krylov_error_estimate(ws: KrylovWorkspace, tau: float,
                          small_exp: np.ndarray) -> float:
    """A-posteriori estimate beta * |h_{m+1,m}| * |F[m-1, m]| of the substep
    error; exactly zero after a happy breakdown."""
    if ws.happy:
        return 0.0
    j = ws.m
    return abs(ws.beta * ws.h[j, j - 1] * small_exp[j - 1, j])


def substep_controller(err_est: float, tol: float, tau_current: float,
                       m_current: int, *, m_min: int = M_MIN, m_max: int = 128,
                       first_try_streak: int = 0,
                       output_gap: float = math.inf,
                       ) -> Tuple[bool, float, int]:
    """Accept/reject one substep and propose the next (tau, m).

    Pure function.  Acceptance is err_est <= tol * tau_current (inclusive).
    The step factor is 0.9 * (tol*tau/err)^(1/4) clamped to [0.2, 5]; a zero
    estimate takes the full growth factor.  first_try_streak counts consecutive
    first-try acceptances including the current attempt when it is one; at two
    or more the Krylov dimension shrinks by 10%.  A rejection grows it by a
    third.  tau_next never overshoots output_gap, the distance to the next
    requested output.
    """
    accept = err_est <= tol * tau_current
    if err_est == 0.0:
        factor = 5.0
    else:
        factor = min(5.0, max(0.2, 0.9 * (tol * tau_current / err_est) ** 0.25))
    tau_next = tau_current * factor
    if accept:
        m_next = m_current
        if first_try_streak >= 2:
            m_next = max(m_min, int(math.floor(0.9 * m_current)))
    else:
        m_next = min(m_max, int(math.ceil(m_current * 4.0 / 3.0)))
    if output_gap < tau_next:
        tau_next = output_gap
    return accept, tau_next, m_next


def _tail_vector(tau_now: float, p: int, mu: float) -> Array:
    """Analytic augmented tail e^(tau_now * K) (mu * e_p): entry k holds
    mu * tau_now^(p-1-k) / (p-1-k)!."""
    t = np.zeros(p)
    t[p - 1] = mu
    for k in range(p - 1):
        i = p - 1 - k
        t[k] = mu * tau_now ** i / math.factorial(i)
    return t


def kiops_eval(task: PhiCombinationTask) -> Tuple[List[Array], KiopsStats]:
    """Evaluate the task, returning one output vector per requested tau plus
    work statistics.  Substeps are clamped to land exactly on every requested
    output point, so outputs are read off directly from accepted substeps.
    """
    vs = task.vs
    n = vs[0].size
    p = len(vs) - 1
    n_aug = n + p
    m_cap = min(task.m_max, n_aug)
    m_lo = min(M_MIN, m_cap)
    m = min(max(task.m_init, m_lo), m_cap)

    stats = KiopsStats()
    ws = KrylovWorkspace(n_aug, m_cap, task.iop_length)

    if p > 0:
        # balance the B block against the unit tail entry (conditioning only)
        norm_u = max(float(np.sum(np.abs(v))) for v in vs[1:])
        if norm_u > 0.0:
            ex = math.ceil(math.log2(norm_u))
            nu, mu = 2.0 ** (-ex), 2.0 ** ex
        else:
            nu, mu = 1.0, 1.0
        b_rows = nu * np.array([vs[p - k] for k in range(p)])
        user_op = task.op

        def aug_op(x: Array) -> Array:
            head = np.asarray(user_op(x[:n]), dtype=np.float64) + x[n:] @ b_rows
            tail = np.zeros(p)
            tail[:p - 1] = x[n + 1:]
            return np.concatenate((head, tail))
    else:
        mu = 1.0
        user_op = task.op

        def aug_op(x: Array) -> Array:
            return np.asarray(user_op(x), dtype=np.float64)

    out: List[Array] = []
    w_head = vs[0].copy()
    tau_now = 0.0
    out_idx = 0
    tau = task.taus[0]
    streak = 0
    attempt_rejections = 0
    need_basis = True

    for _ in range(_SUBSTEP_BUDGET):
        if out_idx >= len(task.taus):
            break
        if need_basis:
            if p > 0:
                v0 = np.concatenate((w_head, _tail_vector(tau_now, p, mu)))
            else:
                v0 = w_head
            beta = float(np.linalg.norm(v0))
            if beta == 0.0:
                # zero state and no forcing: w stays identically zero
                out.extend(np.zeros(n) for _ in range(out_idx, len(task.taus)))
                out_idx = len(task.taus)
                break
            ws.reset(v0, beta)
            need_basis = False
        while ws.m < m and not ws.happy:
            iop_arnoldi_extend(ws, aug_op)

        gap = task.taus[out_idx] - tau_now
        tau_step = min(tau, gap)
        small = _phi1_augmented_exp(ws, tau_step)
        err = krylov_error_estimate(ws, tau_step, small)

        lands_on_output = tau_step >= gap - 1e-12 * max(1.0, gap)
        if lands_on_output:
            if out_idx + 1 < len(task.taus):
                next_gap = task.taus[out_idx + 1] - task.taus[out_idx]
            else:
                next_gap = math.inf
        else:
            next_gap = gap - tau_step
        accept, tau_next, m_next = substep_controller(
            err, task.tol, tau_step, m, m_min=m_lo, m_max=m_cap,
            first_try_streak=streak + 1 if attempt_rejections == 0 else 0,
            output_gap=next_gap)

        if accept:
            j = ws.m
            w_aug = ws.beta * (small[:j, 0] @ ws.v[:j])
            if not np.all(np.isfinite(w_aug)):
                raise NumericError("non-finite Krylov substep result")
            w_head = w_aug[:n]
            tau_now += tau_step
            stats.substeps += 1
            stats.krylov_dims.append(j)
            streak = streak + 1 if attempt_rejections == 0 else 0
            attempt_rejections = 0
            need_basis = True
            if lands_on_output:
                tau_now = task.taus[out_idx]
                out.append(w_head.copy())
                out_idx += 1
        else:
            stats.rejections += 1
            attempt_rejections += 1
            streak = 0
            if tau_next < TAU_MIN:
                _finalize(stats, ws)
                raise PhiConvergenceError(
                    f"substep fell below tau_min={TAU_MIN:g} "
                    f"(err={err:.3e}, tol={task.tol:g})", stats)
        tau = tau_next
        m = m_next
    else:
        _finalize(stats, ws)
        raise PhiConvergenceError("substep budget exhausted", stats)

    _finalize(stats, ws)
    return out, stats


def _finalize(stats: KiopsStats, ws: KrylovWorkspace) -> None:
    stats.matvecs = ws.matvecs
    stats.ortho_dots = ws.ortho_dots
    stats.normalizations = ws.normalizations
    stats.vectors_appended = ws.vectors_appended
