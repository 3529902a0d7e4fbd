"""Graded 1D grids and piecewise-linear finite element assembly.

Three weak formulations are supported:

* ``line``: ``-u'' + V u`` on ``[-L, L]`` with Dirichlet ends.
* ``transformed``: the radial equation after ``u = r^{(d-1)/2} phi``, i.e.
  ``-u'' + c/r^2 u + V u`` with ``c = (l + (d-1)/2)(l + (d-3)/2)``.
* ``weighted``: the radial equation tested against ``r^{d-1}``; required for
  ``d = 2, l = 0`` where ``u ~ sqrt(r)`` near the origin.

All element integrals are exact: polynomial integrands use Gauss-Legendre
rules of sufficient order, and the ``r^{-1}``/``r^{-2}`` centrifugal
integrands use closed forms (or a high-order Gauss rule on elements far
from the origin, where the closed forms cancel catastrophically).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

RADIAL = "radial_halfline"
LINE = "full_line"

LINE_FORM = "line"
TRANSFORMED = "transformed"
WEIGHTED = "weighted"

# Gauss order for the singular centrifugal weight on elements with h/a <= 1.
_SINGULAR_GAUSS = 16
_CLAMP = 1e-14


class MeshError(ValueError):
    """Invalid grid parameters or an inadmissible assembly request."""


class SingularIntegralError(MeshError):
    pass


@dataclass(frozen=True, eq=False)
class Grid:
    nodes: np.ndarray
    kind: str
    L: float
    grading: float = 1.0

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        if self.kind not in (RADIAL, LINE):
            raise MeshError(f"unknown grid kind {self.kind!r}")
        if nodes.ndim != 1 or nodes.size < 9:
            raise MeshError("a grid needs at least 9 nodes (N >= 8)")
        if np.any(np.diff(nodes) <= 0):
            raise MeshError("grid nodes must be strictly increasing")

    @property
    def N(self) -> int:
        """Number of elements."""
        return self.nodes.size - 1

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def is_radial(self) -> bool:
        return self.kind == RADIAL


def make_grid(N: int, L: float, kind: str = RADIAL, grading: float = 2.0) -> Grid:
    """Build a grid with ``N`` elements.

    Radial grids use ``r_i = L (i/N)^grading`` which clusters nodes at the
    origin; full-line grids are uniform on ``[-L, L]`` and ignore ``grading``.
    """
    if int(N) != N or N < 8:
        raise MeshError(f"N must be an integer >= 8, got {N}")
    if not L > 0:
        raise MeshError(f"L must be positive, got {L}")
    if not grading >= 1:
        raise MeshError(f"grading exponent must be >= 1, got {grading}")
    N = int(N)
    t = np.arange(N + 1) / N
    if kind == RADIAL:
        nodes = L * t**grading
        nodes[-1] = L
        return Grid(nodes, RADIAL, float(L), float(grading))
    if kind == LINE:
        nodes = L * (2.0 * t - 1.0)
        nodes[0], nodes[-1] = -L, L
        return Grid(nodes, LINE, float(L), 1.0)
    raise MeshError(f"unknown grid kind {kind!r}")


@dataclass
class PotentialField:
    grid: Grid
    values: np.ndarray
    d: int
    gamma: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.nodes.shape:
            raise MeshError("potential values must match the grid node count")
        if self.grid.kind == LINE and self.d != 1:
            raise MeshError("full-line grids carry d = 1 potentials only")
        if self.grid.kind == RADIAL and self.d < 2:
            raise MeshError("radial grids require d >= 2")

    @property
    def p(self) -> float:
        return self.gamma + self.d / 2

    def with_values(self, values) -> "PotentialField":
        return PotentialField(self.grid, values, self.d, self.gamma)

    def with_gamma(self, gamma: float) -> "PotentialField":
        return PotentialField(self.grid, self.values.copy(), self.d, gamma)


# ---------------------------------------------------------------------------
# element integrals


def _gauss_moments(a, b, m, order, npts):
    """Gauss-Legendre evaluation of int_a^b r^m chiL^i chiR^j for i + j = order.

    Returns an array of shape (order + 1, n_elem) indexed by j.
    """
    t, w = np.polynomial.legendre.leggauss(npts)
    h = b - a
    r = a[:, None] + h[:, None] * (t[None, :] + 1.0) / 2.0
    chiL = (b[:, None] - r) / h[:, None]
    chiR = (r - a[:, None]) / h[:, None]
    base = r**m * w[None, :] * (h[:, None] / 2.0)
    return np.array([np.sum(base * chiL ** (order - j) * chiR**j, axis=1) for j in range(order + 1)])


def _power_integral(a, b, e):
    if e == -1:
        return np.log(b / a)
    return (b ** (e + 1) - a ** (e + 1)) / (e + 1)


def _singular_quadratic_moments(a, b, m):
    """int_a^b r^m chi chi for m in {-1, -2}; columns (LL, LR, RR).

    Uses closed forms on elements with h/a > 1, where they are stable, and a
    16-point Gauss rule elsewhere (the integrand is analytic in a disc of
    radius >= h around the element, so the rule is accurate to rounding).
    The element starting at r = 0 only gets the RR entry; LL/LR are +inf.
    """
    h = b - a
    out = np.empty((3, a.size))
    at_zero = a == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(at_zero, np.inf, h / np.where(at_zero, 1.0, a))
    far = ~at_zero & (x <= 1.0)
    near = ~at_zero & ~far
    if np.any(far):
        out[:, far] = _gauss_moments(a[far], b[far], m, 2, _SINGULAR_GAUSS)
    if np.any(near):
        an, bn, hn = a[near], b[near], h[near]
        i0 = _power_integral(an, bn, m)
        i1 = _power_integral(an, bn, m + 1)
        i2 = _power_integral(an, bn, m + 2)
        h2 = hn * hn
        out[0, near] = (bn * bn * i0 - 2 * bn * i1 + i2) / h2
        out[1, near] = (-an * bn * i0 + (an + bn) * i1 - i2) / h2
        out[2, near] = (an * an * i0 - 2 * an * i1 + i2) / h2
    if np.any(at_zero):
        hz = h[at_zero]
        out[0, at_zero] = np.inf
        out[1, at_zero] = np.inf
        out[2, at_zero] = hz ** (m + 1) / (m + 3)
    return out


def _poly_moments(a, b, m, order):
    npts = (m + order) // 2 + 2
    return _gauss_moments(a, b, m, order, npts)


@dataclass(frozen=True, eq=False)
class _Template:
    """V-independent element data for one (grid, d, l, formulation)."""

    stiff: np.ndarray  # (n_elem,) coefficient of [[1,-1],[-1,1]]
    mass: np.ndarray  # (3, n_elem): LL, LR, RR
    centrifugal: np.ndarray  # (3, n_elem), already scaled by the coefficient
    cubic: np.ndarray  # (4, n_elem): LLL, LLR, LRR, RRR
    free: slice


@lru_cache(maxsize=128)
def _template(grid: Grid, d: int, l: int, formulation: str) -> _Template:
    a, b = grid.nodes[:-1], grid.nodes[1:]
    h = b - a
    n_nodes = grid.nodes.size
    if formulation == LINE_FORM:
        weight = 0
        coef = 0.0
        free = slice(1, n_nodes - 1)
    elif formulation == TRANSFORMED:
        weight = 0
        coef = (l + (d - 1) / 2) * (l + (d - 3) / 2)
        free = slice(1, n_nodes - 1)
    elif formulation == WEIGHTED:
        weight = d - 1
        coef = float(l * (l + d - 2))
        free = slice(0 if l == 0 else 1, n_nodes - 1)
    else:
        raise MeshError(f"unknown formulation {formulation!r}")

    stiff = _power_integral(a, b, weight) / (h * h)
    mass = _poly_moments(a, b, weight, 2)
    cubic = _poly_moments(a, b, weight, 3)
    if coef == 0.0:
        cent = np.zeros_like(mass)
    elif weight - 2 >= 0:
        cent = coef * _poly_moments(a, b, weight - 2, 2)
    else:
        cent = coef * _singular_quadratic_moments(a, b, weight - 2)
        if free.start == 0 and not np.isfinite(cent[:, 0]).all():
            raise SingularIntegralError("centrifugal integral diverges at the unconstrained origin node")
        if grid.nodes[0] == 0.0:
            # Dirichlet at r = 0 removes the divergent LL/LR entries of element 0.
            cent[0, 0] = 0.0
            cent[1, 0] = 0.0
    for arr in (stiff, mass, cubic, cent):
        arr.setflags(write=False)
    return _Template(stiff, mass, cent, cubic, free)


# ---------------------------------------------------------------------------
# assembled operators


@dataclass(frozen=True, eq=False)
class AssembledOperator:
    """Tridiagonal pair (A, M) restricted to the free nodes.

    ``a_diag``/``a_off`` and ``m_diag``/``m_off`` hold the main and first
    off-diagonals; ``free`` selects the grid nodes that carry unknowns.
    """

    a_diag: np.ndarray
    a_off: np.ndarray
    m_diag: np.ndarray
    m_off: np.ndarray
    grid: Grid
    free: slice
    l: int
    d: int
    formulation: str
    cubic: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.a_diag.size

    @property
    def stiffness(self) -> sp.csc_matrix:
        return _tridiag(self.a_diag, self.a_off)

    @property
    def mass(self) -> sp.csc_matrix:
        return _tridiag(self.m_diag, self.m_off)

    def norm_inf(self) -> float:
        row = np.abs(self.a_diag).copy()
        row[:-1] += np.abs(self.a_off)
        row[1:] += np.abs(self.a_off)
        return float(row.max())

    def nodal(self, x: np.ndarray) -> np.ndarray:
        """Embed a free-node vector into a full nodal vector (zeros elsewhere)."""
        out = np.zeros(self.grid.nodes.size)
        out[self.free] = x
        return out


def _tridiag(diag, off):
    return sp.diags([off, diag, off], [-1, 0, 1], format="csc")


def _scatter(ll, lr, rr, n_nodes):
    diag = np.zeros(n_nodes)
    diag[:-1] += ll
    diag[1:] += rr
    return diag, np.asarray(lr, dtype=float)


def _assemble(V: PotentialField, l: int, formulation: str) -> AssembledOperator:
    t = _template(V.grid, V.d, l, formulation)
    v = V.values
    vL, vR = v[:-1], v[1:]
    c = t.cubic
    pot_ll = vL * c[0] + vR * c[1]
    pot_lr = vL * c[1] + vR * c[2]
    pot_rr = vL * c[2] + vR * c[3]
    with np.errstate(invalid="ignore"):
        a_ll = t.stiff + t.centrifugal[0] + pot_ll
        a_lr = -t.stiff + t.centrifugal[1] + pot_lr
        a_rr = t.stiff + t.centrifugal[2] + pot_rr
    n = v.size
    a_diag, a_off = _scatter(a_ll, a_lr, a_rr, n)
    m_diag, m_off = _scatter(t.mass[0], t.mass[1], t.mass[2], n)
    f = t.free
    a_d, m_d = a_diag[f], m_diag[f]
    lo, hi = f.start, f.stop
    a_o, m_o = a_off[lo : hi - 1], m_off[lo : hi - 1]
    if not (np.isfinite(a_d).all() and np.isfinite(a_o).all()):
        raise SingularIntegralError("non-finite stiffness entry on a free node")
    return AssembledOperator(a_d, a_o, m_d, m_o, V.grid, f, l, V.d, formulation, t.cubic)


def assemble_line(V: PotentialField) -> AssembledOperator:
    if V.grid.kind != LINE:
        raise MeshError("assemble_line needs a full-line grid")
    return _assemble(V, 0, LINE_FORM)


def assemble_radial_transformed(V: PotentialField, l: int) -> AssembledOperator:
    if V.grid.kind != RADIAL:
        raise MeshError("radial assembly needs a radial grid")
    if V.d == 2 and l == 0:
        raise MeshError("(d=2, l=0) must use the weighted formulation")
    return _assemble(V, int(l), TRANSFORMED)


def assemble_radial_weighted(V: PotentialField, l: int) -> AssembledOperator:
    if V.grid.kind != RADIAL:
        raise MeshError("radial assembly needs a radial grid")
    return _assemble(V, int(l), WEIGHTED)


def default_formulation(d: int, l: int) -> str:
    if d == 1:
        return LINE_FORM
    return WEIGHTED if (d == 2 and l == 0) else TRANSFORMED


def assemble(V: PotentialField, l: int = 0, formulation: str | None = None) -> AssembledOperator:
    formulation = formulation or default_formulation(V.d, l)
    if formulation == LINE_FORM:
        return assemble_line(V)
    if formulation == TRANSFORMED:
        return assemble_radial_transformed(V, l)
    if formulation == WEIGHTED:
        return assemble_radial_weighted(V, l)
    raise MeshError(f"unknown formulation {formulation!r}")


# ---------------------------------------------------------------------------
# nodal functions


def interpolate_power(values, exponent: float) -> np.ndarray:
    """Nodewise power of a nonnegative nodal function.

    Values in ``[-1e-14, 0)`` are rounding noise and are clamped to zero.
    """
    v = np.asarray(values, dtype=float)
    if np.any(v < -_CLAMP):
        raise ValueError("interpolate_power needs nonnegative values")
    v = np.clip(v, 0.0, None)
    if exponent == 1:
        return v.copy()
    return v**exponent


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere S^{d-1}."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


@lru_cache(maxsize=64)
def _radial_weights(grid: Grid, d: int) -> np.ndarray:
    a, b = grid.nodes[:-1], grid.nodes[1:]
    m = _poly_moments(a, b, d - 1, 1)
    w = np.zeros(grid.nodes.size)
    w[:-1] += m[0]
    w[1:] += m[1]
    w.setflags(write=False)
    return w


def nodal_weights(grid: Grid, d: int, measure: bool = True) -> np.ndarray:
    """Weights ``w`` with ``w @ f`` = exact integral of the P1 interpolant of f.

    The measure is ``dx`` on the line and ``|S^{d-1}| r^{d-1} dr`` on radial
    grids; pass ``measure=False`` to drop the sphere-area factor.
    """
    if grid.kind == LINE:
        h = grid.h
        w = np.zeros(grid.nodes.size)
        w[:-1] += h / 2
        w[1:] += h / 2
        return w
    w = _radial_weights(grid, d)
    return w * sphere_area(d) if measure else w.copy()
