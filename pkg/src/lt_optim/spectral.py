"""Negative spectrum of the generalized tridiagonal problem ``A x = lambda M x``.

The k lowest eigenpairs are computed by ARPACK in shift-invert mode with a
shift below the bottom of the spectrum; k is doubled until a nonnegative
eigenvalue shows up. Completeness is cross-checked by Sylvester's law of
inertia: the number of negative pivots of the LDL^T factorization of
``A - s M`` equals the number of eigenvalues below ``s``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse.linalg as sla

from .functional import multiplicity
from .mesh_fem import LINE, AssembledOperator, PotentialField, assemble, default_formulation

log = logging.getLogger(__name__)

K_INIT = 8
GROWTH = 2
MAX_RESTARTS = 12
ZERO_REL = 1e-12
SHIFT_FACTOR = 1.05


class SpectralError(RuntimeError):
    """Eigensolver failure; ``l`` names the failing channel when known."""

    def __init__(self, msg, l=None):
        super().__init__(msg if l is None else f"channel l={l}: {msg}")
        self.l = l


class NoConvergenceError(SpectralError):
    pass


class SingularShiftError(SpectralError):
    pass


@dataclass
class EigenPair:
    lam: float
    vector: np.ndarray  # free-node coefficients, x^T M x = 1


@dataclass
class ChannelSpectrum:
    l: int
    pairs: list[EigenPair]
    multiplicity: int
    op: AssembledOperator = field(repr=False)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([p.lam for p in self.pairs])

    def __len__(self):
        return len(self.pairs)


@dataclass
class Spectrum:
    channels: list[ChannelSpectrum]
    d: int

    @property
    def bound_states(self) -> int:
        """Number of negative eigenvalues counted with multiplicity."""
        return sum(c.multiplicity * len(c) for c in self.channels)

    @property
    def bottom(self) -> float:
        vals = [c.pairs[0].lam for c in self.channels if c.pairs]
        return min(vals) if vals else 0.0

    def table(self) -> dict[int, np.ndarray]:
        return {c.l: c.eigenvalues for c in self.channels}


def count_below(op: AssembledOperator, sigma: float) -> int:
    """Number of eigenvalues of (A, M) strictly below ``sigma`` (inertia count)."""
    d = (op.a_diag - sigma * op.m_diag).tolist()
    e2 = ((op.a_off - sigma * op.m_off) ** 2).tolist()
    tiny = 1e-300
    piv = d[0] if d[0] != 0.0 else -tiny
    neg = piv < 0
    for i in range(1, len(d)):
        piv = d[i] - e2[i - 1] / piv
        if piv == 0.0:
            piv = -tiny
        if piv < 0:
            neg += 1
    return int(neg)


def shift_strategy(previous: Spectrum | None = None, V: PotentialField | None = None) -> float:
    """Shift for the inverted iteration.

    1.05 times the previous bottom eigenvalue when there is one, otherwise
    ``-max(V_-)``, which bounds the spectrum from below since -Laplacian >= 0.
    """
    if previous is not None and previous.bottom < 0:
        return SHIFT_FACTOR * previous.bottom
    if V is None:
        return -1.0
    return -float(np.max(np.clip(-V.values, 0.0, None)))


def _lower_bound(op: AssembledOperator, rel: float = 0.05) -> float:
    """A shift below the whole spectrum, within ``rel`` of the bottom when negative."""
    lo = -1.0
    while count_below(op, lo) > 0:
        lo *= 2.0
    hi = -ZERO_REL * op.norm_inf()
    if count_below(op, hi) == 0:
        return lo
    while hi - lo > rel * abs(lo):
        mid = 0.5 * (lo + hi)
        if count_below(op, mid) == 0:
            lo = mid
        else:
            hi = mid
    return lo


def _solve_dense(op: AssembledOperator, k: int):
    A = op.stiffness.toarray()
    M = op.mass.toarray()
    k = min(k, op.size)
    vals, vecs = la.eigh(A, M, subset_by_index=[0, k - 1])
    return vals, vecs


def _solve_arpack(op: AssembledOperator, k: int, sigma: float):
    rng = np.random.default_rng(20140101)
    v0 = rng.standard_normal(op.size)
    vals, vecs = sla.eigsh(
        op.stiffness, k=k, M=op.mass, sigma=sigma, which="LM", tol=0.0, v0=v0,
        ncv=min(op.size, max(2 * k + 1, k + 16)), maxiter=max(1000, 20 * op.size),
    )
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


def _rayleigh_ritz(op: AssembledOperator, X: np.ndarray):
    A, M = op.stiffness, op.mass
    Ar = X.T @ (A @ X)
    Mr = X.T @ (M @ X)
    Ar = (Ar + Ar.T) / 2
    Mr = (Mr + Mr.T) / 2
    vals, Y = la.eigh(Ar, Mr)
    X = X @ Y
    # deterministic sign: largest-magnitude entry positive
    idx = np.argmax(np.abs(X), axis=0)
    signs = np.sign(X[idx, np.arange(X.shape[1])])
    signs[signs == 0] = 1.0
    return vals, X * signs


def lowest_eigenpairs(op: AssembledOperator, k: int, sigma: float | None = None):
    """The k lowest eigenpairs (ascending), M-orthonormalized."""
    n = op.size
    if sigma is None or count_below(op, sigma) > 0:
        sigma = _lower_bound(op)
    k = min(int(k), n)
    for _ in range(4):
        try:
            if k >= n - 1:
                vals, vecs = _solve_dense(op, k)
            else:
                vals, vecs = _solve_arpack(op, k, sigma)
            break
        except RuntimeError as exc:
            # splu raises on an exactly singular A - sigma M
            if "singular" not in str(exc).lower():
                raise NoConvergenceError(str(exc)) from exc
            sigma = sigma * (1 + 1e-6) - 1e-10
    else:
        raise SingularShiftError(f"A - sigma M singular near sigma={sigma}")
    return _rayleigh_ritz(op, vecs)


def negative_eigenpairs(op: AssembledOperator, k_init: int = K_INIT, sigma: float | None = None,
                        strategy: str = "inertia") -> list[EigenPair]:
    """All eigenpairs of (A, M) with eigenvalue below ``-1e-12 |A|_inf``.

    Eigenvalues in ``[-1e-12 |A|_inf, 0)`` are indistinguishable from
    discretization noise and count as nonnegative.

    ``strategy="doubling"`` requests k = k_init, 2 k_init, ... lowest pairs
    until one of them is nonnegative. ``strategy="inertia"`` (default) reads
    the count n off the LDL^T inertia of ``A - thr M`` and requests exactly n
    pairs, which avoids converging a Ritz value inside the dense cluster just
    above zero. Either way the result must agree with the inertia count.
    """
    n = op.size
    thr = -ZERO_REL * op.norm_inf()
    n_neg = count_below(op, thr)
    if n_neg == 0:
        return []
    if strategy == "inertia":
        k_seq = [n_neg]
    elif strategy == "doubling":
        k_seq = []
        k = max(1, int(k_init))
        while len(k_seq) < MAX_RESTARTS:
            k_seq.append(min(k, n))
            if k >= n:
                break
            k *= GROWTH
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    for k in k_seq:
        vals, vecs = lowest_eigenpairs(op, k, sigma)
        found = int(np.sum(vals < thr))
        if found == vals.size and vals.size < n and strategy == "doubling":
            continue
        if found != n_neg:
            # the k eigenvalues nearest sigma were not the k lowest; use a
            # certified lower bound as the shift and redo this k
            vals, vecs = lowest_eigenpairs(op, k, _lower_bound(op))
            found = int(np.sum(vals < thr))
            if found != n_neg:
                raise NoConvergenceError(f"found {found} negative eigenvalues, inertia says {n_neg}")
        return [EigenPair(float(vals[i]), vecs[:, i].copy()) for i in range(found)]
    raise NoConvergenceError(f"negative spectrum not certified after {len(k_seq)} attempts")


def solve_channel(V: PotentialField, l: int, formulation: str | None = None, k_init: int = K_INIT,
                  sigma: float | None = None) -> ChannelSpectrum:
    op = assemble(V, l, formulation)
    try:
        pairs = negative_eigenpairs(op, k_init=k_init, sigma=sigma)
    except SpectralError as exc:
        raise type(exc)(str(exc), l=l) from exc
    mult = 1 if V.d == 1 else multiplicity(V.d, l)
    return ChannelSpectrum(l, pairs, mult, op)


def scan_radial_spectrum(V: PotentialField, formulation: str | None = None, previous: Spectrum | None = None,
                         workers: int = 1, l_max: int = 10_000) -> Spectrum:
    """Channels l = 0, 1, ... until the first one without bound states.

    ``formulation=None`` routes (d=2, l=0) to the weighted form and every
    other channel to the transformed form. With ``workers > 1`` channels are
    solved in concurrent batches; results are merged in order of l.
    """
    if V.grid.kind == LINE:
        raise ValueError("scan_radial_spectrum needs a radial potential")
    prev = {c.l: c for c in previous.channels} if previous is not None else {}

    def solve(l):
        pc = prev.get(l)
        k0 = len(pc) + 1 if pc is not None else K_INIT
        sig = SHIFT_FACTOR * pc.pairs[0].lam if (pc is not None and pc.pairs) else None
        form = formulation or default_formulation(V.d, l)
        return solve_channel(V, l, form, k_init=k0, sigma=sig)

    channels: list[ChannelSpectrum] = []
    l = 0
    if workers <= 1:
        while l < l_max:
            ch = solve(l)
            if not ch.pairs:
                break
            channels.append(ch)
            l += 1
        return Spectrum(channels, V.d)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        while l < l_max:
            batch = list(pool.map(solve, range(l, l + workers)))
            for ch in batch:
                if not ch.pairs:
                    return Spectrum(channels, V.d)
                channels.append(ch)
            l += workers
    return Spectrum(channels, V.d)


def compute_spectrum(V: PotentialField, previous: Spectrum | None = None, formulation: str | None = None,
                     workers: int = 1) -> Spectrum:
    """Full negative spectrum of -Laplacian + V (line or radial)."""
    if V.grid.kind == LINE:
        sig = shift_strategy(previous, V) if previous is not None and previous.bottom < 0 else None
        k0 = previous.bound_states + 1 if previous is not None else K_INIT
        ch = solve_channel(V, 0, k_init=k0, sigma=sig)
        return Spectrum([ch] if ch.pairs else [], 1)
    return scan_radial_spectrum(V, formulation, previous, workers)
