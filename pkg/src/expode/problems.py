"""Nonlinear diffusion test problems on the unit interval and unit square.

Both problems march u_t = div(flux) + s from a zero initial state with
homogeneous Dirichlet boundaries and a narrow Gaussian source, using the
degenerate flux law

    g(u) = beta1 * u + (2/7) * beta2 * sign(u) |u|^(7/2)

whose derivative g'(u) = beta1 + beta2 |u|^(5/2) vanishes at u = 0 when
beta1 does, so stiffness grows as the solution fills in.

The 2D operator is anisotropic: a rank-one tensor built from a unit
vector field (circular field lines around two parallel wires) carries
the nonlinear flux, and a small complementary transverse part carries
plain diffusion. Fluxes live on cell faces; each face uses a two-point
normal gradient with the diagonal tensor entry evaluated at the face
midpoint, while the off-diagonal (mixed) entry pairs each of the two
face-adjacent nodes' tangential differences with that node's own
coefficient. The node pairing keeps the frozen-coefficient operator
exactly symmetric for arbitrarily varying fields, which face-midpoint
mixed coefficients do not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .numcore import Array, OdeSystem

# Distance to a wire below which the field is treated as singular.
WIRE_PROXIMITY = 1e-9
# Face midpoints that land on a singular point get shifted along the
# face normal by this fraction of the grid spacing; grid nodes that do
# (a wire sitting on a node, or an exact cancellation point) are shifted
# diagonally by the same fraction.
FACE_NUDGE = 1e-4

# Default integration windows; every bundled study pins its own t_final.
DEFAULT_TF_1D = 0.1
DEFAULT_TF_2D = 0.05


class SingularFieldError(ValueError):
    """The direction field is undefined at the requested point."""


def g_flux(u, beta1: float, beta2: float):
    """Flux potential; odd in u. Overflow passes through as inf."""
    u = np.asarray(u, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        return beta1 * u + (2.0 / 7.0) * beta2 * np.sign(u) * np.abs(u) ** 3.5


def g_flux_prime(u, beta1: float, beta2: float):
    u = np.asarray(u, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        return beta1 + beta2 * np.abs(u) ** 2.5


def source_gaussian(x, sigma: float = 0.05):
    """Unit-amplitude Gaussian centred at 1/2."""
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-0.5 * ((x - 0.5) / sigma) ** 2)


# ---------------------------------------------------------------------------
# one-dimensional problem


@dataclass(frozen=True)
class Diffusion1DParams:
    n_elem: int = 50
    beta1: float = 5e-5
    beta2: float = 5e-3
    sigma: float = 0.05

    def __post_init__(self):
        if self.n_elem < 4:
            raise ValueError("n_elem must be at least 4")
        if self.beta1 < 0 or self.beta2 < 0 or self.beta1 + self.beta2 <= 0:
            raise ValueError("flux coefficients must be nonnegative and not both zero")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @property
    def dx(self) -> float:
        return 1.0 / self.n_elem

    @property
    def dim(self) -> int:
        return self.n_elem - 1

    @property
    def cell_volume(self) -> float:
        return self.dx


def node_coordinates_1d(params: Diffusion1DParams) -> Array:
    return np.arange(1, params.n_elem) * params.dx


def make_system_1d(params: Diffusion1DParams) -> OdeSystem:
    """Second-difference divergence of g(u) plus the fixed source."""
    inv_dx2 = 1.0 / params.dx**2
    src = source_gaussian(node_coordinates_1d(params), params.sigma)
    b1, b2 = params.beta1, params.beta2
    dim = params.dim

    def rhs(t: float, y: Array) -> Array:
        p = np.zeros(dim + 2)
        p[1:-1] = y
        g = g_flux(p, b1, b2)
        # non-finite values propagate to the divergence check, silently
        with np.errstate(over="ignore", invalid="ignore"):
            return (g[2:] - 2.0 * g[1:-1] + g[:-2]) * inv_dx2 + src

    def jac_action(y: Array, v: Array, f_of_y: Array) -> Array:
        p = np.zeros(dim + 2)
        p[1:-1] = g_flux_prime(y, b1, b2) * v
        return (p[2:] - 2.0 * p[1:-1] + p[:-2]) * inv_dx2

    return OdeSystem(dim=dim, rhs=rhs, jac_action=jac_action, name=f"diffusion1d(n={params.n_elem})")


def linear_operator_1d(params: Diffusion1DParams) -> Array:
    """Dense tridiagonal operator for the beta2 = 0 special case."""
    if params.beta2 != 0.0:
        raise ValueError("dense operator only exists for the linear flux law")
    dim = params.dim
    coeff = params.beta1 / params.dx**2
    a = np.zeros((dim, dim))
    idx = np.arange(dim)
    a[idx, idx] = -2.0 * coeff
    a[idx[:-1], idx[:-1] + 1] = coeff
    a[idx[1:], idx[1:] - 1] = coeff
    return a


# ---------------------------------------------------------------------------
# two-dimensional problem


def two_wire_field(
    point,
    wires=((0.25, 0.5), (0.75, 0.5)),
    strengths=(1.0, 1.0),
) -> Array:
    """Unit direction of the summed circular fields around each wire.

    Raises SingularFieldError within WIRE_PROXIMITY of a wire and at
    points where the contributions cancel.
    """
    p = np.asarray(point, dtype=np.float64)
    total = np.zeros(2)
    for (wx, wy), s in zip(wires, strengths):
        ex, ey = p[0] - wx, p[1] - wy
        r2 = ex * ex + ey * ey
        if math.sqrt(r2) < WIRE_PROXIMITY:
            raise SingularFieldError(f"point {tuple(p)} lies on a wire")
        total += (s / r2) * np.array([-ey, ex])
    nrm = math.hypot(total[0], total[1])
    if nrm < 1e-12:
        raise SingularFieldError(f"field cancels at {tuple(p)}")
    return total / nrm


@dataclass(frozen=True)
class Diffusion2DParams:
    n_side: int = 20
    kappa: float = 1e-2
    eps_perp: float = 1e-3
    beta1: float = 0.0
    beta2: float = 10.0
    sigma: float = 0.05
    wires: tuple = ((0.25, 0.5), (0.75, 0.5))
    strengths: tuple = (1.0, 1.0)
    # test hook: replaces the wire field when set (point -> unit vector)
    field_fn: Optional[Callable] = None

    def __post_init__(self):
        if self.n_side < 8:
            raise ValueError("n_side must be at least 8")
        if self.kappa <= 0 or self.eps_perp <= 0:
            raise ValueError("kappa and eps_perp must be positive")
        if self.beta1 < 0 or self.beta2 < 0 or self.beta1 + self.beta2 <= 0:
            raise ValueError("flux coefficients must be nonnegative and not both zero")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if len(self.wires) != len(self.strengths):
            raise ValueError("one strength per wire")

    @property
    def dx(self) -> float:
        return 1.0 / self.n_side

    @property
    def dim(self) -> int:
        return (self.n_side - 1) ** 2

    @property
    def cell_volume(self) -> float:
        return self.dx**2


def node_grid_2d(params: Diffusion2DParams):
    """Interior node coordinates as (X, Y) arrays of shape (n-1, n-1),
    row index = y (slow), column index = x (fast)."""
    coords = np.arange(1, params.n_side) * params.dx
    return np.meshgrid(coords, coords, indexing="xy")


def _direction_at(params: Diffusion2DParams, point) -> Array:
    if params.field_fn is not None:
        b = np.asarray(params.field_fn(np.asarray(point, dtype=np.float64)), dtype=np.float64)
        nrm = math.hypot(b[0], b[1])
        if not nrm > 0:
            raise SingularFieldError(f"override field vanishes at {tuple(point)}")
        return b / nrm
    return two_wire_field(point, params.wires, params.strengths)


def _tensor_entries(params: Diffusion2DParams, x: float, y: float, axis: int):
    """(b b^T) entries at a face midpoint; singular points are retried
    after a small shift along the face normal (`axis`)."""
    try:
        b = _direction_at(params, (x, y))
    except SingularFieldError:
        shift = FACE_NUDGE * params.dx
        p = [x, y]
        p[axis] += shift
        b = _direction_at(params, p)
    return b[0] * b[0], b[0] * b[1], b[1] * b[1]


def _mixed_entry_at_node(params: Diffusion2DParams, x: float, y: float) -> float:
    """b1*b2 at a grid node; singular nodes (a wire on the node, or an
    exact cancellation point) are retried after a small diagonal shift."""
    try:
        b = _direction_at(params, (x, y))
    except SingularFieldError:
        shift = FACE_NUDGE * params.dx
        b = _direction_at(params, (x + shift, y + shift))
    return b[0] * b[1]


class _Geometry2D:
    """Face-normal tensor entries, node-centred mixed entries, and the
    nodal source, built once per parameter set."""

    def __init__(self, params: Diffusion2DParams):
        n = params.n_side
        d = params.dx
        self.b11x = np.empty((n - 1, n))
        self.b22y = np.empty((n, n - 1))
        for j in range(1, n):  # x-faces: midpoint ((i+1/2) d, j d)
            for i in range(n):
                b11, _, _ = _tensor_entries(params, (i + 0.5) * d, j * d, axis=0)
                self.b11x[j - 1, i] = b11
        for j in range(n):  # y-faces: midpoint (i d, (j+1/2) d)
            for i in range(1, n):
                _, _, b22 = _tensor_entries(params, i * d, (j + 0.5) * d, axis=1)
                self.b22y[j, i - 1] = b22
        # mixed entry at every node, boundary included: the value at node
        # (i, j) multiplies that node's own tangential difference in the
        # fluxes through all four adjacent faces
        self.c_node = np.empty((n + 1, n + 1))
        for j in range(n + 1):
            for i in range(n + 1):
                self.c_node[j, i] = _mixed_entry_at_node(params, i * d, j * d)
        x_nodes = np.arange(1, n) * d
        row = source_gaussian(x_nodes, params.sigma)
        self.source = np.tile(row, n - 1)  # depends on x only


@lru_cache(maxsize=8)
def _geometry_2d(params: Diffusion2DParams) -> _Geometry2D:
    return _Geometry2D(params)


def _divergence_2d(params: Diffusion2DParams, geo: _Geometry2D, gpad: Array, upad: Array) -> Array:
    """Flux divergence at interior nodes for padded nodal fields gpad
    (carried by the field tensor) and upad (transverse part)."""
    n = params.n_side
    d = params.dx
    kap, eps = params.kappa, params.eps_perp

    # non-finite states pass through to the caller's divergence check;
    # keep the arithmetic quiet instead of warning on every face
    with np.errstate(over="ignore", invalid="ignore"):
        # face-normal fluxes: x-faces i+1/2 on interior rows, y-faces
        # j+1/2 on interior columns, two-point gradients
        gxn = (gpad[1:n, 1:] - gpad[1:n, :-1]) / d
        uxn = (upad[1:n, 1:] - upad[1:n, :-1]) / d
        fx = kap * (geo.b11x * gxn + eps * (1.0 - geo.b11x) * uxn)

        gyn = (gpad[1:, 1:n] - gpad[:-1, 1:n]) / d
        uyn = (upad[1:, 1:n] - upad[:-1, 1:n]) / d
        fy = kap * (geo.b22y * gyn + eps * (1.0 - geo.b22y) * uyn)

        div = (fx[:, 1:] - fx[:, :-1]) / d + (fy[1:, :] - fy[:-1, :]) / d

        # mixed term: the flux through each face averages the tangential
        # differences at its two endpoints-in-normal-direction nodes, each
        # weighted by that node's own coefficient; the per-face midpoint
        # values cancel in the divergence, leaving the four-neighbour form
        # below.  Weighting differences by their own node keeps the
        # frozen-coefficient matrix exactly symmetric under arbitrarily
        # varying fields while staying conservative and second order.
        # The parallel part carries g and the transverse part -eps*u, so
        # one pass over q = g - eps*u covers both tensors.
        q = gpad - eps * upad
        c = geo.c_node
        mixed = (
            c[1:n, 2:] * (q[2:, 2:] - q[:-2, 2:])
            - c[1:n, :-2] * (q[2:, :-2] - q[:-2, :-2])
            + c[2:, 1:n] * (q[2:, 2:] - q[2:, :-2])
            - c[:-2, 1:n] * (q[:-2, 2:] - q[:-2, :-2])
        ) * (kap / (4.0 * d * d))
        div = div + mixed
    return div.ravel()


def _pad(params: Diffusion2DParams, values: Array) -> Array:
    n = params.n_side
    p = np.zeros((n + 1, n + 1))
    p[1:n, 1:n] = values.reshape(n - 1, n - 1)
    return p


def make_system_2d(params: Diffusion2DParams) -> OdeSystem:
    """Anisotropic diffusion on the unit square; state is the interior
    nodes flattened row-major with the y index slow."""
    geo = _geometry_2d(params)
    b1, b2 = params.beta1, params.beta2

    def rhs(t: float, y: Array) -> Array:
        gpad = _pad(params, g_flux(y, b1, b2))
        upad = _pad(params, y)
        return _divergence_2d(params, geo, gpad, upad) + geo.source

    def jac_action(y: Array, v: Array, f_of_y: Array) -> Array:
        gpad = _pad(params, g_flux_prime(y, b1, b2) * v)
        vpad = _pad(params, v)
        return _divergence_2d(params, geo, gpad, vpad)

    return OdeSystem(
        dim=params.dim, rhs=rhs, jac_action=jac_action, name=f"diffusion2d(n={params.n_side})"
    )
