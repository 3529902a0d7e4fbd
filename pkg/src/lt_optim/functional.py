"""Lieb-Thirring quantities: semiclassical constant, multiplicities, E(V), R(V)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .mesh_fem import PotentialField, interpolate_power, nodal_weights

if TYPE_CHECKING:
    from .spectral import Spectrum


class ParameterError(ValueError):
    pass


class ZeroPotentialError(ValueError):
    """The potential has no negative part, so it cannot be normalized."""


@dataclass(frozen=True)
class LTParams:
    gamma: float
    d: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ParameterError(f"dimension must be a positive integer, got {self.d}")
        lo = 0.5 if self.d == 1 else 0.0
        if not self.gamma > lo:
            raise ParameterError(f"gamma must exceed {lo} in d={self.d}, got {self.gamma}")

    @property
    def p(self) -> float:
        """Normalization exponent gamma + d/2."""
        return self.gamma + self.d / 2

    @property
    def q(self) -> float:
        return self.p / (self.p - 1)


def semiclassical_constant(params: LTParams) -> float:
    g, d = params.gamma, params.d
    return math.exp(
        -d * math.log(2.0) - d / 2 * math.log(math.pi) + math.lgamma(g + 1) - math.lgamma(g + d / 2 + 1)
    )


def _binom(n: int, k: int) -> int:
    if k < 0 or n < 0 or k > n:
        return 0
    return math.comb(n, k)


def multiplicity(d: int, l: int) -> int:
    """Dimension of the degree-l spherical harmonics on S^{d-1}."""
    return _binom(d + l - 1, l) - _binom(d + l - 3, l - 2)


def lt_energy(spec: "Spectrum", params: LTParams) -> float:
    total = 0.0
    for ch in spec.channels:
        if ch.pairs:
            total += ch.multiplicity * float(np.sum((-ch.eigenvalues) ** params.gamma))
    return total


def norm_integral(V: PotentialField, params: LTParams | None = None) -> float:
    """Integral of V_-^p over R^d, with V_-^p interpolated from its nodal values."""
    p = params.p if params is not None else V.p
    w = nodal_weights(V.grid, V.d)
    val = float(w @ interpolate_power(np.clip(-V.values, 0.0, None), p))
    if not val > 0:
        raise ZeroPotentialError("potential has no negative part")
    return val


@dataclass(frozen=True)
class Evaluation:
    energy: float
    norm_integral: float
    ratio: float
    bound_states: int


def ratio_R(V: PotentialField, spec: "Spectrum", params: LTParams | None = None) -> Evaluation:
    """Lieb-Thirring quotient E(V) / (L_sc * int V_-^p), invariant under V -> mu^2 V(mu x)."""
    params = params or LTParams(V.gamma, V.d)
    energy = lt_energy(spec, params)
    nrm = norm_integral(V, params)
    ratio = energy / (semiclassical_constant(params) * nrm)
    return Evaluation(energy, nrm, ratio, spec.bound_states)


def conjectured_ratio_1d(gamma: float) -> float:
    """Ratio of the one-bound-state optimizer in d=1 (closed form)."""
    s = gamma - 0.5
    return 2.0 * (s / (gamma + 0.5)) ** s
