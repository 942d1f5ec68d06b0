"""Shared numerical kernel: state vectors, the ODE system interface, and
matrix-free Jacobian actions.

States are plain 1-D float64 numpy arrays throughout the package.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

Array = np.ndarray

_SQRT_EPS = float(np.sqrt(np.finfo(np.float64).eps))
_TINY = np.finfo(np.float64).tiny


class NumericError(ArithmeticError):
    """A numerical kernel produced non-finite values."""


def as_state(x) -> Array:
    """Coerce input to a 1-D float64 state vector (copies only if needed)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError(f"state vector must be 1-D, got shape {a.shape}")
    return a


def axpy(a: float, x: Array, y: Array) -> Array:
    """Return a*x + y without mutating the inputs."""
    if x.shape != y.shape:
        raise ValueError(f"length mismatch in axpy: {x.shape} vs {y.shape}")
    return a * x + y


def l2_norm(x: Array) -> float:
    return float(np.linalg.norm(x))


def grid_l2_norm(x: Array, cell_volume: float) -> float:
    """Discrete L2 norm: the plain l2 norm scaled by sqrt(cell volume)."""
    if cell_volume <= 0.0:
        raise ValueError("cell_volume must be positive")
    return float(np.sqrt(cell_volume)) * l2_norm(x)


@dataclass(frozen=True)
class OdeSystem:
    """Autonomous-style ODE system y' = rhs(t, y) of fixed dimension.

    jac_action, when given, maps (y, v, f_of_y) -> J(y) @ v; f_of_y is the
    already-computed rhs at y so implementations can reuse it.
    """

    dim: int
    rhs: Callable[[float, Array], Array]
    jac_action: Optional[Callable[[Array, Array, Array], Array]] = None
    name: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("system dimension must be >= 1")


def jac_vec_fd(system: OdeSystem, y: Array, v: Array, f_of_y: Array,
               t: float = 0.0) -> Array:
    """One-sided finite-difference Jacobian action (rhs(y + d*v) - rhs(y)) / d.

    The increment d = sqrt(eps) * max(1, ||y||) / max(||v||, tiny) keeps the
    perturbation O(sqrt(eps)) relative to the state scale.  A zero direction
    returns the zero vector exactly (no rhs evaluation).
    """
    if y.shape != v.shape:
        raise ValueError("y and v must have matching shapes")
    vnorm = l2_norm(v)
    if vnorm == 0.0:
        return np.zeros_like(y)
    delta = _SQRT_EPS * max(1.0, l2_norm(y)) / max(vnorm, _TINY)
    f_pert = system.rhs(t, y + delta * v)
    if not np.all(np.isfinite(f_pert)):
        raise NumericError("rhs returned non-finite values in jac_vec_fd")
    return (f_pert - f_of_y) / delta


def make_jac_operator(system: OdeSystem, y: Array, f_of_y: Array,
                      t: float = 0.0, use_analytic: bool = True,
                      ) -> Callable[[Array], Array]:
    """Return v -> J(y) @ v, analytic when available and requested, FD otherwise."""
    if use_analytic and system.jac_action is not None:
        jac = system.jac_action
        return lambda v: jac(y, v, f_of_y)
    return lambda v: jac_vec_fd(system, y, v, f_of_y, t=t)
