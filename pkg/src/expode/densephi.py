"""Dense matrix exponential and phi-function kernels.

phi_k(z) = sum_{n>=0} z^n / (n+k)!, so phi_0 = exp, phi_k(0) = I/k!, and
phi_{k+1}(z) = (phi_k(z) - 1/k!) / z.  These dense routines are the reference
oracle for the Krylov engine and are exact up to the accuracy of the matrix
exponential (Pade scaling-and-squaring).
"""
from __future__ import annotations

import math

import numpy as np
import scipy.linalg

from .numcore import NumericError

# phi orders above this are never needed (the 4th-order integrator uses up to 4)
MAX_PHI_ORDER = 8


def _square(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"square matrix required, got shape {a.shape}")
    return a


def expm(a) -> np.ndarray:
    """Matrix exponential via Pade scaling-and-squaring."""
    a = _square(a)
    out = scipy.linalg.expm(a)
    if not np.all(np.isfinite(out)):
        raise NumericError("matrix exponential overflowed")
    return out


def phi_k(a, k: int) -> np.ndarray:
    """Dense phi_k(a) through one exponential of the (k+1)n block companion form.

    The block matrix with `a` in the top-left corner and identity blocks on the
    superdiagonal has e^M whose top-right n x n block equals phi_k(a).
    """
    a = _square(a)
    if not 0 <= k <= MAX_PHI_ORDER:
        raise ValueError(f"phi order {k} unsupported (max {MAX_PHI_ORDER})")
    if k == 0:
        return expm(a)
    n = a.shape[0]
    m = np.zeros(((k + 1) * n, (k + 1) * n))
    m[:n, :n] = a
    eye = np.eye(n)
    for b in range(k):
        m[b * n:(b + 1) * n, (b + 1) * n:(b + 2) * n] = eye
    return expm(m)[:n, k * n:]


def phi_combination_dense(a, vs) -> np.ndarray:
    """Evaluate sum_i phi_i(a) @ vs[i] for i = 0..p via one augmented exponential.

    The augmented matrix is [[a, B], [0, K]] with B = [v_p | ... | v_1] and K
    the p x p upshift; applying e^(aug) to [v_0; e_p] yields the combination in
    the first n entries.  p = 0 reduces to expm(a) @ v_0 exactly.
    """
    a = _square(a)
    n = a.shape[0]
    vs = [np.asarray(v, dtype=np.float64) for v in vs]
    if not vs:
        raise ValueError("vs must contain at least v_0")
    p = len(vs) - 1
    if p > MAX_PHI_ORDER:
        raise ValueError(f"phi order {p} unsupported (max {MAX_PHI_ORDER})")
    for v in vs:
        if v.shape != (n,):
            raise ValueError("every vs entry must have the matrix dimension")
    if p == 0:
        return expm(a) @ vs[0]
    aug = np.zeros((n + p, n + p))
    aug[:n, :n] = a
    for i in range(p):
        aug[:n, n + i] = vs[p - i]
    for i in range(p - 1):
        aug[n + i, n + i + 1] = 1.0
    start = np.zeros(n + p)
    start[:n] = vs[0]
    start[-1] = 1.0
    return (expm(aug) @ start)[:n]


def phi_k_recurrence(a, k: int) -> np.ndarray:
    """phi_k via the upward recurrence phi_{j+1}(a) = a^{-1} (phi_j(a) - I/j!).

    Independent route used as a cross-check oracle; requires `a` invertible and
    reasonably conditioned.
    """
    a = _square(a)
    out = expm(a)
    eye = np.eye(a.shape[0])
    for j in range(k):
        out = np.linalg.solve(a, out - eye / math.factorial(j))
    return out
