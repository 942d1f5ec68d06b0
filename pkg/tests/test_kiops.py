"""Adaptive Krylov evaluation of phi-function linear combinations."""
from __future__ import annotations

import numpy as np
import pytest

from expode.densephi import expm, phi_combination_dense
from expode.kiops import (
    KrylovWorkspace,
    PhiCombinationTask,
    PhiConvergenceError,
    _phi1_augmented_exp,
    iop_arnoldi_extend,
    kiops_eval,
    krylov_error_estimate,
    substep_controller,
)

from _oracles import sym_with_spectrum


def _matop(a):
    return lambda v: a @ v


# ------------------------------------------------------------- end-to-end


def test_zero_operator_sums_inputs():
    rng = np.random.default_rng(0)
    v0 = rng.standard_normal(6)
    v1 = rng.standard_normal(6)
    w, _ = kiops_eval(PhiCombinationTask(op=lambda v: np.zeros_like(v), vs=[v0, v1]))
    # phi_0(0) v0 + phi_1(0) v1 = v0 + v1.
    assert np.linalg.norm(w[-1] - (v0 + v1)) <= 1e-12


def test_matches_dense_combination():
    rng = np.random.default_rng(1)
    n = 20
    a = sym_with_spectrum(rng, n, -5.0, 0.0)
    vs = [rng.standard_normal(n) for _ in range(5)]  # p = 4
    w, _ = kiops_eval(PhiCombinationTask(op=_matop(a), vs=vs, tol=1e-10))
    expected = phi_combination_dense(a, vs)
    assert np.linalg.norm(w[-1] - expected) <= 1e-8 * max(1.0, np.linalg.norm(expected))


def test_intermediate_taus_give_stage_vectors():
    # One call with ascending taus returns tau*phi_1(tau*A) b for each tau,
    # matching a dense evaluation of the scaled problem.
    rng = np.random.default_rng(2)
    n = 15
    a = sym_with_spectrum(rng, n, -8.0, -0.1)
    b = rng.standard_normal(n)
    taus = (1.0 / 9.0, 1.0 / 8.0, 1.0)
    w, _ = kiops_eval(PhiCombinationTask(op=_matop(a), vs=[np.zeros(n), b], taus=taus, tol=1e-12))
    for row, tau in zip(w, taus):
        expected = phi_combination_dense(tau * a, [np.zeros(n), tau * b])
        assert np.linalg.norm(row - expected) <= 1e-8 * max(1.0, np.linalg.norm(expected))


def test_linearity_in_input_vectors():
    rng = np.random.default_rng(3)
    n = 18
    a = sym_with_spectrum(rng, n, -6.0, 0.0)
    vs = [rng.standard_normal(n) for _ in range(3)]
    for alpha in (1024.0, 3.0):
        w1, _ = kiops_eval(PhiCombinationTask(op=_matop(a), vs=list(vs), tol=1e-12))
        w2, _ = kiops_eval(
            PhiCombinationTask(op=_matop(a), vs=[alpha * v for v in vs], tol=1e-12)
        )
        rel = np.linalg.norm(w2[-1] - alpha * w1[-1]) / np.linalg.norm(w2[-1])
        assert rel <= 1e-10


def test_multi_tau_consistent_with_single_tau():
    rng = np.random.default_rng(4)
    n = 16
    a = sym_with_spectrum(rng, n, -5.0, 0.0)
    vs = [rng.standard_normal(n), rng.standard_normal(n)]
    tol = 1e-10
    w_multi, _ = kiops_eval(PhiCombinationTask(op=_matop(a), vs=list(vs), taus=(0.5, 1.0), tol=tol))
    w_single, _ = kiops_eval(PhiCombinationTask(op=_matop(a), vs=list(vs), taus=(1.0,), tol=tol))
    scale = max(1.0, np.linalg.norm(w_single[-1]))
    assert np.linalg.norm(w_multi[-1] - w_single[-1]) <= 10.0 * tol * scale


def test_convergence_failure_raises_with_stats():
    task = PhiCombinationTask(
        op=lambda v: -1e12 * v, vs=[np.ones(30), np.ones(30)], m_max=3, tol=1e-10
    )
    with pytest.raises(PhiConvergenceError) as excinfo:
        kiops_eval(task)
    assert excinfo.value.stats.rejections > 0


def test_stats_budget_invariants():
    rng = np.random.default_rng(5)
    n = 25
    a = sym_with_spectrum(rng, n, -30.0, 0.0)
    vs = [rng.standard_normal(n) for _ in range(4)]
    _, stats = kiops_eval(PhiCombinationTask(op=_matop(a), vs=vs, tol=1e-10))
    assert stats.matvecs > 0
    assert stats.ortho_dots <= 2 * stats.normalizations
    assert stats.normalizations <= stats.vectors_appended + stats.substeps
    assert len(stats.krylov_dims) == stats.substeps


def test_random_task_accuracy_smoke():
    # Small version of the acceptance sweep: seeded random tasks against the
    # dense oracle at 100x the requested tolerance.
    rng = np.random.default_rng(42)
    for trial in range(10):
        n = int(rng.integers(5, 41))
        p = int(rng.integers(0, 5))
        a = sym_with_spectrum(rng, n, -50.0, 0.0)
        vs = [rng.standard_normal(n) for _ in range(p + 1)]
        tol = 1e-6 if trial % 2 == 0 else 1e-10
        w, _ = kiops_eval(PhiCombinationTask(op=_matop(a), vs=vs, tol=tol))
        expected = phi_combination_dense(a, vs)
        err = np.linalg.norm(w[-1] - expected) / max(1.0, np.linalg.norm(expected))
        assert err <= 100.0 * tol


# ------------------------------------------------------------- validation


def test_task_validation_errors():
    ones = np.ones(4)
    with pytest.raises(ValueError, match="at least v_0"):
        PhiCombinationTask(op=lambda v: v, vs=[])
    with pytest.raises(ValueError, match="share one length"):
        PhiCombinationTask(op=lambda v: v, vs=[np.ones(3), np.ones(4)])
    with pytest.raises(ValueError, match="must be finite"):
        PhiCombinationTask(op=lambda v: v, vs=[np.array([1.0, np.nan])])
    with pytest.raises(ValueError, match="end at 1.0"):
        PhiCombinationTask(op=lambda v: v, vs=[ones], taus=(0.5,))
    with pytest.raises(ValueError, match="lie in"):
        PhiCombinationTask(op=lambda v: v, vs=[ones], taus=(-0.5, 1.0))
    with pytest.raises(ValueError, match="strictly ascending"):
        PhiCombinationTask(op=lambda v: v, vs=[ones], taus=(0.5, 0.5, 1.0))
    with pytest.raises(ValueError, match="tol must be positive"):
        PhiCombinationTask(op=lambda v: v, vs=[ones], tol=0.0)
    with pytest.raises(ValueError):
        PhiCombinationTask(op=lambda v: v, vs=[ones], m_init=0)
    with pytest.raises(ValueError):
        PhiCombinationTask(op=lambda v: v, vs=[ones], m_max=0)
    with pytest.raises(ValueError):
        PhiCombinationTask(op=lambda v: v, vs=[ones], iop_length=0)


# --------------------------------------------------------- Arnoldi process


def test_identity_operator_projects_to_one():
    rng = np.random.default_rng(6)
    v0 = rng.standard_normal(10)
    ws = KrylovWorkspace(10, 5, 2)
    ws.reset(v0, float(np.linalg.norm(v0)))
    happy = iop_arnoldi_extend(ws, lambda v: v)
    assert happy
    assert ws.h[0, 0] == pytest.approx(1.0, abs=1e-14)


def test_invariant_subspace_breaks_down_at_its_dimension():
    a = np.diag([-1.0, -2.0, -3.0, -4.0, -5.0])
    v0 = np.zeros(5)
    v0[0] = 1.0
    v0[1] = 1.0
    ws = KrylovWorkspace(5, 5, 2)
    ws.reset(v0, float(np.linalg.norm(v0)))
    while ws.m < 5 and not ws.happy:
        iop_arnoldi_extend(ws, _matop(a))
    assert ws.happy
    assert ws.m == 2


def test_basis_norms_and_projection_band():
    rng = np.random.default_rng(7)
    n = 50
    a = rng.standard_normal((n, n)) * 0.3
    v0 = rng.standard_normal(n)
    ws = KrylovWorkspace(n, 12, 2)
    ws.reset(v0, float(np.linalg.norm(v0)))
    for _ in range(10):
        if iop_arnoldi_extend(ws, _matop(a)):
            break
    m = ws.m
    for i in range(m):
        assert abs(np.linalg.norm(ws.v[i]) - 1.0) <= 1e-12
    scale = np.linalg.norm(a, 2)
    # With a length-2 orthogonalization window the stored Hessenberg entries
    # agree with the true projections on the band i in [j-1, j+1].
    for j in range(m):
        col = a @ ws.v[j]
        for i in range(max(0, j - 1), min(j + 2, m)):
            assert abs(ws.h[i, j] - ws.v[i] @ col) <= 1e-10 * scale


def test_workspace_counters_persist_across_reset():
    rng = np.random.default_rng(8)
    ws = KrylovWorkspace(10, 5, 2)
    v0 = rng.standard_normal(10)
    ws.reset(v0, float(np.linalg.norm(v0)))
    iop_arnoldi_extend(ws, lambda v: -v)
    count = ws.matvecs
    assert count > 0
    ws.reset(v0, float(np.linalg.norm(v0)))
    assert ws.matvecs == count
    assert ws.m == 0 and not ws.happy


# ----------------------------------------------------------- error estimate


def test_estimate_zero_on_happy_breakdown():
    a = np.diag([-1.0, -2.0, -3.0, -4.0])
    v0 = np.zeros(4)
    v0[0] = 1.0
    v0[1] = 1.0
    ws = KrylovWorkspace(4, 4, 2)
    ws.reset(v0, float(np.linalg.norm(v0)))
    while ws.m < 4 and not ws.happy:
        iop_arnoldi_extend(ws, _matop(a))
    assert ws.happy
    small = _phi1_augmented_exp(ws, 1.0)
    assert krylov_error_estimate(ws, 1.0, small) == 0.0


def test_estimate_negligible_at_full_dimension():
    rng = np.random.default_rng(42)
    n = 6
    a = sym_with_spectrum(rng, n, -3.0, 0.0)
    v0 = rng.standard_normal(n)
    ws = KrylovWorkspace(n, n, 2)
    ws.reset(v0, float(np.linalg.norm(v0)))
    for _ in range(n):
        if iop_arnoldi_extend(ws, _matop(a)):
            break
    small = _phi1_augmented_exp(ws, 1.0)
    assert krylov_error_estimate(ws, 1.0, small) <= 1e-12


def test_estimate_within_factor_100_of_true_error():
    rng = np.random.default_rng(42)
    for _ in range(50):
        n, m = 20, 6
        a = sym_with_spectrum(rng, n, -5.0, 0.0)
        v0 = rng.standard_normal(n)
        beta = float(np.linalg.norm(v0))
        ws = KrylovWorkspace(n, m, 2)
        ws.reset(v0, beta)
        while ws.m < m and not ws.happy:
            iop_arnoldi_extend(ws, _matop(a))
        tau = 1.0
        small = _phi1_augmented_exp(ws, tau)
        est = krylov_error_estimate(ws, tau, small)
        j = ws.m
        w_approx = ws.beta * (small[:j, 0] @ ws.v[:j])
        err_true = float(np.linalg.norm(w_approx - expm(tau * a) @ v0))
        if err_true > 1e-14:
            ratio = est / err_true
            assert 0.01 <= ratio <= 100.0


# -------------------------------------------------------------- controller


def test_controller_zero_error_grows_by_five():
    accept, tau_next, m_next = substep_controller(0.0, 1e-8, 0.1, 12)
    assert accept
    assert tau_next == pytest.approx(0.5)
    assert m_next == 12


def test_controller_accepts_on_inclusive_boundary():
    accept, _, _ = substep_controller(1e-8 * 0.1, 1e-8, 0.1, 12)
    assert accept


def test_controller_rejects_and_shrinks():
    accept, tau_next, m_next = substep_controller(100.0 * 1e-8 * 0.1, 1e-8, 0.1, 12)
    assert not accept
    assert tau_next < 0.1
    assert m_next == 16  # ceil(4 * 12 / 3)


def test_controller_shrinks_dimension_after_streak():
    accept, _, m_next = substep_controller(0.0, 1e-8, 0.1, 20, first_try_streak=2)
    assert accept
    assert m_next == 18  # floor(0.9 * 20)


def test_controller_respects_output_gap():
    _, tau_next, _ = substep_controller(0.0, 1e-8, 1.0, 12, output_gap=2.0)
    assert tau_next == pytest.approx(2.0)


def test_controller_dimension_growth_capped():
    _, _, m_next = substep_controller(1.0, 1e-12, 0.1, 120, m_max=128)
    assert m_next == 128
