"""Monotone fixed-point maximization of the Lieb-Thirring quotient.

One step maps a potential V_n to its negative spectrum, builds the density
rho_n = sum_l h(d,l) sum_i (-lambda_i)^(gamma-1) phi_i^2, and sets
V_{n+1} = -K rho_n^{1/(p-1)} with K fixing int V_-^p = 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .functional import Evaluation, LTParams, norm_integral, ratio_R
from .mesh_fem import LINE, TRANSFORMED, Grid, PotentialField, interpolate_power, nodal_weights
from .spectral import Spectrum, compute_spectrum

log = logging.getLogger(__name__)

GALERKIN = "galerkin"
NODAL = "nodal"


class DegenerateDensityError(ValueError):
    """Density vanishes identically (no bound states)."""


class LostSpectrumError(RuntimeError):
    def __init__(self, iteration: int):
        super().__init__(f"iterate {iteration} has no bound states")
        self.iteration = iteration


class MonotonicityError(AssertionError):
    pass


class InsufficientDataError(ValueError):
    pass


@dataclass
class FixedPointConfig:
    gamma: float | None = None  # defaults to the seed's gamma
    tol: float = 1e-10
    max_iters: int = 10_000
    bump_detection: bool = True
    record_bumps: bool = False
    bump_window: int = 50
    density: str = GALERKIN
    formulation: str | None = None
    monotone_slack: float = 1e-10
    workers: int = 1

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.density not in (GALERKIN, NODAL):
            raise ValueError(f"unknown density rule {self.density!r}")


@dataclass
class Step:
    iter: int
    energy: float
    ratio: float
    residual_sup: float
    bound_states: int
    bumps: list[float] | None = None


@dataclass
class IterationTrace:
    steps: list[Step] = field(default_factory=list)
    outcome: str = "running"
    monotone_violations: int = 0

    @property
    def final(self) -> Step:
        return self.steps[-1]

    def energies(self) -> np.ndarray:
        return np.array([s.energy for s in self.steps])

    def residuals(self) -> np.ndarray:
        return np.array([s.residual_sup for s in self.steps])


@dataclass
class FixedPointResult:
    potential: PotentialField
    trace: IterationTrace
    spectrum: Spectrum
    evaluation: Evaluation

    @property
    def converged(self) -> bool:
        return self.trace.outcome == "converged"

    def __iter__(self):
        # allows ``V, trace = fixed_point_run(...)``
        return iter((self.potential, self.trace))


# ---------------------------------------------------------------------------
# seeds and normalization


def normalize(V: PotentialField, params: LTParams | None = None) -> PotentialField:
    """Rescale the amplitude so that int V_-^p = 1."""
    params = params or LTParams(V.gamma, V.d)
    return V.with_values(V.values * norm_integral(V, params) ** (-1.0 / params.p))


def gaussian_seed(grid: Grid, d: int, gamma: float, width: float, amplitude: float = 1.0,
                  center: float = 0.0) -> PotentialField:
    """Normalized ``-amplitude * exp(-(x - center)^2 / width^2)``."""
    x = grid.nodes
    V = PotentialField(grid, -amplitude * np.exp(-((x - center) ** 2) / width**2), d, gamma)
    return normalize(V)


def two_bump_seed(grid: Grid, gamma: float, separation: float, width: float = 1.0) -> PotentialField:
    x = grid.nodes
    a = separation / 2
    vals = -np.exp(-((x - a) ** 2) / width**2) - np.exp(-((x + a) ** 2) / width**2)
    return normalize(PotentialField(grid, vals, 1, gamma))


# ---------------------------------------------------------------------------
# one step of the map


def _radial_parts(ch, grid: Grid) -> np.ndarray:
    """Nodal radial parts phi of a channel's eigenvectors, shape (n_pairs, n_nodes)."""
    X = np.array([ch.op.nodal(p.vector) for p in ch.pairs])
    if ch.op.formulation != TRANSFORMED:
        return X
    d = ch.op.d
    r = grid.nodes
    out = np.zeros_like(X)
    out[:, 1:] = X[:, 1:] / r[1:] ** ((d - 1) / 2)
    if ch.l == 0:
        # quadratic extrapolation to r = 0 through the three nearest nodes
        r1, r2, r3 = r[1:4]
        c1 = r2 * r3 / ((r1 - r2) * (r1 - r3))
        c2 = r1 * r3 / ((r2 - r1) * (r2 - r3))
        c3 = r1 * r2 / ((r3 - r1) * (r3 - r2))
        out[:, 0] = c1 * out[:, 1] + c2 * out[:, 2] + c3 * out[:, 3]
    return out


def _galerkin_moments(ch) -> np.ndarray:
    """int chi_c u^2 (weighted as in the channel's form) summed over pairs with weights applied later."""
    X = np.array([ch.op.nodal(p.vector) for p in ch.pairs])
    uL, uR = X[:, :-1], X[:, 1:]
    c = ch.op.cubic
    left = uL**2 * c[0] + 2 * uL * uR * c[1] + uR**2 * c[2]
    right = uL**2 * c[1] + 2 * uL * uR * c[2] + uR**2 * c[3]
    out = np.zeros((X.shape[0], X.shape[1]))
    out[:, :-1] += left
    out[:, 1:] += right
    return out


def density_from_spectrum(spec: Spectrum, params: LTParams, grid: Grid, rule: str = GALERKIN) -> np.ndarray:
    """Nodal density sum_l h(d,l) sum_i (-lambda_i)^(gamma-1) phi_i^2.

    ``rule="nodal"`` squares the nodal values of the radial parts. The
    default ``"galerkin"`` rule uses int chi_c phi^2 dmu / int chi_c dmu at
    node c instead: it agrees with the nodal rule to O(h^2) and makes V_{n+1}
    the exact maximizer of the discrete linear term, so the discrete energy
    sequence is monotone for gamma >= 1.
    """
    rho = np.zeros(grid.nodes.size)
    if not spec.channels or spec.bound_states == 0:
        raise DegenerateDensityError("empty spectrum: density vanishes")
    for ch in spec.channels:
        if not ch.pairs:
            continue
        lam = ch.eigenvalues
        wts = ch.multiplicity * (-lam) ** (params.gamma - 1.0) if params.gamma != 1 else np.full(lam.size, float(ch.multiplicity))
        if rule == NODAL:
            phi = _radial_parts(ch, grid)
            rho += wts @ phi**2
        else:
            rho += wts @ _galerkin_moments(ch)
    if rule != NODAL:
        rho /= nodal_weights(grid, spec.d, measure=False)
    rho = np.clip(rho, 0.0, None)
    if not np.any(rho > 0):
        raise DegenerateDensityError("density vanishes identically")
    return rho


def next_potential(rho: np.ndarray, params: LTParams, grid: Grid) -> PotentialField:
    """V = -K rho^{1/(p-1)} with K set by the discrete norm (exactly 1)."""
    p = params.p
    rho = np.asarray(rho, dtype=float)
    if not np.any(rho > 0):
        raise DegenerateDensityError("density vanishes identically")
    # scale first so the large powers cannot overflow/underflow
    rho = rho / rho.max()
    shape = interpolate_power(rho, 1.0 / (p - 1.0))
    w = nodal_weights(grid, params.d)
    s = float(w @ interpolate_power(shape, p))
    K = s ** (-1.0 / p)
    return PotentialField(grid, -K * shape, params.d, params.gamma)


def fixed_point_map(V: PotentialField, cfg: FixedPointConfig | None = None, spec: Spectrum | None = None):
    cfg = cfg or FixedPointConfig()
    params = LTParams(V.gamma, V.d)
    spec = spec or compute_spectrum(V, formulation=cfg.formulation, workers=cfg.workers)
    rho = density_from_spectrum(spec, params, V.grid, cfg.density)
    return next_potential(rho, params, V.grid)


def scf_residual(V: PotentialField, cfg: FixedPointConfig | None = None) -> float:
    """Sup-norm defect of the discrete Euler-Lagrange relation V = T(V)."""
    return float(np.max(np.abs(fixed_point_map(V, cfg).values - V.values)))


# ---------------------------------------------------------------------------
# bumps


@dataclass
class Bump:
    center: float
    depth: float


def detect_bumps(V: PotentialField, rel_depth: float = 0.1, merge_cells: int = 5) -> list[Bump]:
    """Local minima of V deeper than ``rel_depth * |min V|``.

    Minima within ``merge_cells`` grid cells of a deeper one are merged into
    it. Centers are refined by the vertex of the parabola through the
    minimum and its two neighbours.
    """
    v = V.values
    x = V.grid.nodes
    vmin = float(v.min())
    if not vmin < 0:
        return []
    cut = rel_depth * vmin
    inner = np.arange(1, v.size - 1)
    is_min = (v[inner] <= v[inner - 1]) & (v[inner] < v[inner + 1]) & (v[inner] <= cut)
    idx = list(inner[is_min])
    if V.grid.kind != LINE and v[0] <= cut and v[0] < v[1]:
        idx.insert(0, 0)
    idx.sort(key=lambda i: v[i])
    kept: list[int] = []
    for i in idx:
        if all(abs(i - j) > merge_cells for j in kept):
            kept.append(i)
    bumps = []
    for i in sorted(kept):
        c = x[i]
        if 0 < i < v.size - 1:
            x0, x1, x2 = x[i - 1 : i + 2]
            y0, y1, y2 = v[i - 1 : i + 2]
            den = (x0 - x1) * (x0 - x2) * (x1 - x2)
            A = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / den
            B = (x2**2 * (y0 - y1) + x1**2 * (y2 - y0) + x0**2 * (y1 - y2)) / den
            if A > 0:
                c = min(max(-B / (2 * A), x0), x2)
        bumps.append(Bump(float(c), float(-v[i])))
    return bumps


def bump_distance(bumps: list[Bump]) -> float:
    if len(bumps) < 2:
        return 0.0
    cs = [b.center for b in bumps]
    return max(cs) - min(cs)


@dataclass
class SeparationFit:
    rate: float
    intercept: float
    r_squared: float


def fit_separation_law(distances, iterations=None, n_min: int = 100) -> SeparationFit:
    """Least-squares fit ``L_n = intercept + rate * log n`` over n >= n_min."""
    L = np.asarray(distances, dtype=float)
    n = np.arange(1, L.size + 1) if iterations is None else np.asarray(iterations, dtype=float)
    mask = n >= n_min
    if mask.sum() < 100:
        raise InsufficientDataError("need >= 100 distances with n >= n_min")
    x, y = np.log(n[mask]), L[mask]
    rate, intercept = np.polyfit(x, y, 1)
    resid = y - (intercept + rate * x)
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / sst if sst > 0 else 1.0
    return SeparationFit(float(rate), float(intercept), r2)


def _separating(history: list[float], window: int) -> bool:
    if len(history) < window:
        return False
    h = np.asarray(history[-window:])
    return bool(np.all(np.diff(h) > 0) and h[0] > 0)


# ---------------------------------------------------------------------------
# driver


def fixed_point_run(V0: PotentialField, cfg: FixedPointConfig | None = None,
                    callback: Callable[[Step, PotentialField], None] | None = None) -> FixedPointResult:
    """Iterate V -> T(V) until the sup-norm step is below ``cfg.tol``.

    The run stops with outcome ``converged``, ``max_iters`` or
    ``bump_separation`` (d = 1 only: two or more bumps whose spread grew at
    every one of the last ``bump_window`` iterations). ``callback`` receives
    each recorded step, forming an append-only event stream.
    """
    cfg = cfg or FixedPointConfig()
    gamma = cfg.gamma if cfg.gamma is not None else V0.gamma
    params = LTParams(gamma, V0.d)
    V = normalize(V0.with_gamma(gamma), params)
    spec = compute_spectrum(V, formulation=cfg.formulation, workers=cfg.workers)
    if spec.bound_states == 0:
        raise LostSpectrumError(0)
    trace = IterationTrace()
    spread: list[float] = []
    res = math.nan
    track = cfg.record_bumps or (cfg.bump_detection and V.grid.kind == LINE)
    for n in range(cfg.max_iters + 1):
        ev = ratio_R(V, spec, params)
        bumps = detect_bumps(V) if track else None
        step = Step(n, ev.energy, ev.ratio, res, ev.bound_states,
                    [b.center for b in bumps] if bumps is not None else None)
        if trace.steps:
            prev = trace.steps[-1].energy
            if ev.energy < prev - cfg.monotone_slack * abs(prev):
                trace.monotone_violations += 1
                msg = f"energy decreased at step {n}: {prev!r} -> {ev.energy!r}"
                if gamma >= 1:
                    trace.steps.append(step)
                    trace.outcome = "monotonicity_violation"
                    raise MonotonicityError(msg)
                log.debug(msg)
        trace.steps.append(step)
        if callback is not None:
            callback(step, V)
        if n > 0 and res <= cfg.tol:
            trace.outcome = "converged"
            break
        if n == cfg.max_iters:
            trace.outcome = "max_iters"
            break
        if bumps is not None:
            spread.append(bump_distance(bumps) if len(bumps) >= 2 else 0.0)
            if cfg.bump_detection and V.grid.kind == LINE and _separating(spread, cfg.bump_window):
                trace.outcome = "bump_separation"
                break
        rho = density_from_spectrum(spec, params, V.grid, cfg.density)
        V_new = next_potential(rho, params, V.grid)
        res = float(np.max(np.abs(V_new.values - V.values)))
        V = V_new
        spec = compute_spectrum(V, previous=spec, formulation=cfg.formulation, workers=cfg.workers)
        if spec.bound_states == 0:
            raise LostSpectrumError(n + 1)
    return FixedPointResult(V, trace, spec, ev)
