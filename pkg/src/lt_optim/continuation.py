"""Branch continuation in gamma, threshold crossings and envelopes."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .mesh_fem import PotentialField
from .optimizer import (
    DegenerateDensityError,
    FixedPointConfig,
    FixedPointResult,
    LostSpectrumError,
    MonotonicityError,
    fixed_point_run,
    gaussian_seed,
    normalize,
)
from .spectral import SpectralError, Spectrum

log = logging.getLogger(__name__)

MAX_HALVINGS = 6
SEED_WIDTHS = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0)


class BranchTerminated(RuntimeError):
    def __init__(self, reason: str, gamma: float):
        super().__init__(f"branch terminated at gamma={gamma:.6g}: {reason}")
        self.reason = reason
        self.gamma = gamma


class RefinementError(RuntimeError):
    pass


class InsufficientChannelsError(ValueError):
    pass


@dataclass
class BranchPoint:
    gamma: float
    ratio: float
    energy: float
    bound_states: int
    iterations: int
    potential: PotentialField = field(repr=False)

    @property
    def snapshot_ref(self) -> str:
        return f"gamma_{self.gamma:.6f}"


@dataclass
class Branch:
    points: list[BranchPoint] = field(default_factory=list)
    direction: str = "increasing_gamma"
    events: list[dict] = field(default_factory=list)
    terminated: str | None = None

    @property
    def label(self) -> str:
        """Bound-state count at the middle point, e.g. ``"k=14"``."""
        if not self.points:
            return "k=?"
        return f"k={self.points[len(self.points) // 2].bound_states}"

    @property
    def gammas(self) -> np.ndarray:
        return np.array([p.gamma for p in self.points])

    @property
    def ratios(self) -> np.ndarray:
        return np.array([p.ratio for p in self.points])

    @property
    def d(self) -> int:
        return self.points[0].potential.d

    def add(self, pt: BranchPoint):
        if self.points and pt.bound_states != self.points[-1].bound_states:
            self.events.append({"gamma": pt.gamma, "from": self.points[-1].bound_states, "to": pt.bound_states})
            log.info("bound-state count changed %d -> %d at gamma=%.4f",
                     self.points[-1].bound_states, pt.bound_states, pt.gamma)
        self.points.append(pt)


@dataclass
class Crossing:
    branch_label: str
    gamma_c: float
    left: tuple[float, float]  # (gamma, ratio)
    right: tuple[float, float]
    width: float


def _point(gamma: float, res: FixedPointResult) -> BranchPoint:
    ev = res.evaluation
    return BranchPoint(gamma, ev.ratio, ev.energy, ev.bound_states, len(res.trace.steps) - 1, res.potential)


def _attempt(V: PotentialField, gamma: float, cfg: FixedPointConfig) -> tuple[FixedPointResult | None, str]:
    """One warm-started solve; returns (result or None, failure reason)."""
    try:
        res = fixed_point_run(V, dataclasses.replace(cfg, gamma=gamma))
    except LostSpectrumError as exc:
        log.info("solve at gamma=%.5f failed: %s", gamma, exc)
        return None, "lost spectrum"
    except (SpectralError, MonotonicityError, DegenerateDensityError) as exc:
        log.info("solve at gamma=%.5f failed: %s", gamma, exc)
        return None, "divergence"
    if not res.converged:
        log.info("solve at gamma=%.5f ended with %s", gamma, res.trace.outcome)
        return None, "bump separation" if res.trace.outcome == "bump_separation" else "divergence"
    return res, ""


def _solve_at(V: PotentialField, gamma: float, cfg: FixedPointConfig) -> FixedPointResult | None:
    return _attempt(V, gamma, cfg)[0]


def continue_branch(seed: PotentialField, gamma_range: tuple[float, float], dgamma: float = 0.01,
                    cfg: FixedPointConfig | None = None, stop_at_count_change: bool = False,
                    stop_at_threshold: float | None = None) -> Branch:
    """Follow critical points from ``seed.gamma`` towards ``gamma_range[1]``.

    ``seed`` must be (close to) a converged critical point at ``seed.gamma``;
    it is re-converged first. Each step warm-starts from the previous point;
    a failed step halves the step size, up to six times, after which the
    branch ends with ``terminated`` set. With ``stop_at_threshold`` the
    branch stops at the first point whose ratio is on the other side of it.
    """
    if not 0 < dgamma <= 0.05:
        raise ValueError("dgamma must lie in (0, 0.05]")
    cfg = cfg or FixedPointConfig()
    g0, g1 = float(gamma_range[0]), float(gamma_range[1])
    sign = 1.0 if g1 >= g0 else -1.0
    branch = Branch(direction="increasing_gamma" if sign > 0 else "decreasing_gamma")
    start, why = _attempt(seed, g0, cfg)
    if start is None:
        raise BranchTerminated(why, g0)
    branch.add(_point(g0, start))
    gamma, V, step = g0, start.potential, dgamma
    eps = 1e-12
    while sign * (g1 - gamma) > eps:
        target = gamma + sign * min(step, abs(g1 - gamma))
        res, why = None, ""
        for _ in range(MAX_HALVINGS + 1):
            res, why = _attempt(V, target, cfg)
            if res is not None:
                break
            step /= 2
            target = gamma + sign * step
        if res is None:
            branch.terminated = f"step-size underflow ({why})"
            log.info("branch terminated at gamma=%.5f: %s", gamma, branch.terminated)
            break
        pt = _point(target, res)
        if stop_at_count_change and pt.bound_states != branch.points[-1].bound_states:
            branch.events.append({"gamma": target, "from": branch.points[-1].bound_states, "to": pt.bound_states})
            branch.terminated = "bound-state count changed"
            break
        branch.add(pt)
        gamma, V = target, res.potential
        step = min(dgamma, 2 * step)
        if stop_at_threshold is not None:
            r0 = branch.points[0].ratio - stop_at_threshold
            if r0 * (pt.ratio - stop_at_threshold) <= 0:
                break
    return branch


def locate_crossing(seed: PotentialField, gamma0: float, cfg: FixedPointConfig | None = None,
                    dgamma: float = 0.01, threshold: float = 1.0, max_steps: int = 30,
                    width: float = 1e-4) -> tuple[Branch, Crossing | None]:
    """Continue from ``gamma0`` towards R = threshold and refine the crossing.

    Ratios decrease along branches, so the walk goes up in gamma when R is
    above the threshold and down otherwise.
    """
    cfg = cfg or FixedPointConfig()
    start, why = _attempt(seed, gamma0, cfg)
    if start is None:
        raise BranchTerminated(why, gamma0)
    sign = 1.0 if start.evaluation.ratio > threshold else -1.0
    branch = continue_branch(start.potential, (gamma0, gamma0 + sign * max_steps * dgamma), dgamma, cfg,
                             stop_at_threshold=threshold)
    return branch, find_crossing(branch, threshold, cfg, width)


def find_crossing(branch: Branch, threshold: float = 1.0, cfg: FixedPointConfig | None = None,
                  width: float = 1e-4, refine: bool = True) -> Crossing | None:
    """Bracket R = threshold along the branch and bisect with warm-started solves."""
    if len(branch.points) < 2:
        raise ValueError("a branch needs at least two points")
    cfg = cfg or FixedPointConfig()
    pts = branch.points
    for a, b in zip(pts[:-1], pts[1:]):
        if (a.ratio - threshold) * (b.ratio - threshold) <= 0 and a.ratio != b.ratio:
            break
    else:
        return None
    left, right = (a, b) if a.gamma < b.gamma else (b, a)
    lo, hi = left, right
    if refine:
        while hi.gamma - lo.gamma > width:
            mid_gamma = 0.5 * (lo.gamma + hi.gamma)
            start = lo if abs(lo.gamma - mid_gamma) <= abs(hi.gamma - mid_gamma) else hi
            res = _solve_at(start.potential, mid_gamma, cfg)
            if res is None:
                raise RefinementError(f"solve at gamma={mid_gamma:.6f} inside the bracket failed")
            mid = _point(mid_gamma, res)
            if (lo.ratio - threshold) * (mid.ratio - threshold) <= 0:
                hi = mid
            else:
                lo = mid
    # secant inside the final bracket
    t = (threshold - lo.ratio) / (hi.ratio - lo.ratio)
    gamma_c = lo.gamma + t * (hi.gamma - lo.gamma)
    return Crossing(branch.label, float(gamma_c), (left.gamma, left.ratio), (right.gamma, right.ratio),
                    float(hi.gamma - lo.gamma))


def interpolate_ratio(branch: Branch, gamma: float) -> float:
    """Linear interpolation of R along the branch; NaN outside its range."""
    g, r = branch.gammas, branch.ratios
    order = np.argsort(g)
    g, r = g[order], r[order]
    if gamma < g[0] - 1e-12 or gamma > g[-1] + 1e-12:
        return math.nan
    return float(np.interp(gamma, g, r))


def upper_envelope(branches: list[Branch], gammas) -> list[dict]:
    """Pointwise max over branches and the semiclassical floor R = 1.

    Values are lower bounds on the optimal ratio: a branch that was never
    found cannot be accounted for.
    """
    if not branches:
        raise ValueError("need at least one branch")
    out = []
    for g in np.asarray(gammas, dtype=float):
        best, label = 1.0, "semiclassical"
        for br in branches:
            r = interpolate_ratio(br, g)
            if not math.isnan(r) and r > best:
                best, label = r, br.label
        out.append({"gamma": float(g), "best_ratio": best, "best_label": label})
    return out


def seed_library(grid, d: int, gamma: float, widths=SEED_WIDTHS, cfg: FixedPointConfig | None = None,
                 shapes=("gaussian",)) -> dict[int, FixedPointResult]:
    """Converged critical points from a family of seeds, keyed by bound-state count.

    ``shapes`` may also contain ``"algebraic"``: the slowly decaying seed
    -(1 + (r/w)^2)^(-2), which binds more s-states than a Gaussian of the
    same width. The first seed reaching a given count wins.
    """
    cfg = cfg or FixedPointConfig()
    found: dict[int, FixedPointResult] = {}
    for shape in shapes:
        for w in widths:
            if shape == "gaussian":
                V0 = gaussian_seed(grid, d, gamma, w)
            else:
                V0 = normalize(PotentialField(grid, -(1 + (grid.nodes / w) ** 2) ** -2.0, d, gamma))
            res = _solve_at(V0, gamma, cfg)
            if res is not None and res.evaluation.bound_states not in found:
                found[res.evaluation.bound_states] = res
    return dict(sorted(found.items()))


def harmonic_pattern_check(spec: Spectrum, V: PotentialField, k_max: int = 3, l_max: int = 3,
                           strict: bool = False) -> dict:
    """Compare a radial spectrum with the oscillator levels of its well bottom.

    Near r = 0, V ~ V(0) + V''(0) r^2 / 2, and -Laplacian + c r^2 in dimension
    d has levels V(0) + 2 sqrt(c) (2k + l + d/2), i.e. omega = sqrt(2 V''(0)).
    These are degenerate along 2k + l, hence lambda_{k+1,l} ~ lambda_{k,l+2}.
    The report lists those differences, the residuals against the oscillator
    levels, and the values of k + l taken by the last negative eigenvalue of
    each channel (one value means the triangular cutoff). k counts from 0.
    With fewer than three channels the report is marked inapplicable, or
    ``InsufficientChannelsError`` is raised when ``strict``.
    """
    if len(spec.channels) < 3:
        if strict:
            raise InsufficientChannelsError(f"need three channels, got {len(spec.channels)}")
        return {"applicable": False, "reason": "fewer than three channels", "channels": len(spec.channels)}
    d = spec.d
    table = spec.table()
    r = V.grid.nodes
    v = V.values
    # V''(0) from three nodes 0, k, 2k of the even function V0 + c r^2; on graded
    # grids the first few nodes sit so close to 0 that V - V0 is pure roundoff
    k = max(1, int(np.searchsorted(r, 1e-3 * r[-1])))
    idx = [0, k, min(2 * k, r.size - 1)]
    c = float(np.polyfit(r[idx] ** 2, v[idx], 1)[0])
    omega = 2 * math.sqrt(max(c, 0.0))
    shifts = []
    for l in range(l_max + 1):
        for k in range(k_max):
            if l + 2 in table and k + 1 < len(table[l]) and k < len(table[l + 2]):
                shifts.append({"k": k, "l": l, "diff": float(abs(table[l][k + 1] - table[l + 2][k]))})
    harm = []
    for l, lams in table.items():
        for k, lam in enumerate(lams):
            if k < k_max and l <= l_max:
                pred = v[0] + omega * (2 * k + l + d / 2)
                harm.append({"k": k, "l": l, "lambda": float(lam), "predicted": float(pred),
                             "residual": float(lam - pred)})
    last_kl = sorted({len(lams) - 1 + l for l, lams in table.items() if len(lams)})
    return {
        "applicable": True,
        "shift_relation": shifts,
        "harmonic": harm,
        "last_k_plus_l": last_kl,
        "triangular": len(last_kl) == 1,
        "v0": float(v[0]),
        "second_derivative": 2 * c,
    }
