import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import lt_optim.continuation as cont
from lt_optim.continuation import (
    Branch,
    BranchPoint,
    BranchTerminated,
    InsufficientChannelsError,
    continue_branch,
    find_crossing,
    harmonic_pattern_check,
    interpolate_ratio,
    locate_crossing,
    seed_library,
    upper_envelope,
)
from lt_optim.functional import conjectured_ratio_1d
from lt_optim.mesh_fem import LINE, RADIAL, PotentialField, make_grid
from lt_optim.optimizer import FixedPointConfig, fixed_point_run, gaussian_seed
from lt_optim.spectral import scan_radial_spectrum

CFG = FixedPointConfig(tol=1e-10)


@pytest.fixture(scope="module")
def grid_1d():
    return make_grid(2000, 40.0, LINE)


@pytest.fixture(scope="module")
def branch_1d(grid_1d):
    seed = gaussian_seed(grid_1d, 1, 0.6, 0.5)
    return continue_branch(seed, (0.6, 1.5), 0.05, CFG)


def synthetic_branch(gammas, ratios, counts=None):
    g = make_grid(8, 1.0, LINE)
    V = PotentialField(g, -np.ones(9), 1, 1.0)
    counts = counts or [1] * len(gammas)
    b = Branch()
    for gm, r, k in zip(gammas, ratios, counts):
        b.add(BranchPoint(float(gm), float(r), 0.0, k, 0, V))
    return b


def test_one_bound_state_branch_follows_the_closed_form(branch_1d):
    assert branch_1d.terminated is None
    assert branch_1d.gammas[0] == 0.6 and branch_1d.gammas[-1] == pytest.approx(1.5)
    for p in branch_1d.points:
        assert p.ratio == pytest.approx(conjectured_ratio_1d(p.gamma), abs=1e-3)
        assert p.bound_states == 1
    assert branch_1d.label == "k=1" and branch_1d.events == []


def test_branch_gammas_are_strictly_monotone_and_ratios_nonincreasing(branch_1d):
    assert np.all(np.diff(branch_1d.gammas) > 0)
    assert np.all(np.diff(branch_1d.ratios) <= 1e-4)


def test_crossing_of_the_one_bound_state_branch(branch_1d):
    cr = find_crossing(branch_1d, 1.0, CFG)
    assert cr.width <= 1e-4
    assert cr.left[0] < cr.gamma_c < cr.right[0]
    assert (cr.left[1] - 1) * (cr.right[1] - 1) <= 0
    assert cr.gamma_c == pytest.approx(1.5, abs=2e-3)
    # recompute at gamma_c from the nearest stored point
    near = min(branch_1d.points, key=lambda p: abs(p.gamma - cr.gamma_c))
    res = fixed_point_run(near.potential, FixedPointConfig(gamma=cr.gamma_c, tol=1e-10))
    assert abs(res.evaluation.ratio - 1) <= 5e-4


def test_branch_points_restart_from_their_snapshots(branch_1d):
    for p in branch_1d.points[::6]:
        res = fixed_point_run(p.potential, FixedPointConfig(tol=1e-10))
        assert res.converged and len(res.trace.steps) - 1 <= 3


def test_branch_above_threshold_has_no_crossing():
    b = synthetic_branch([1.0, 1.1, 1.2], [1.2, 1.1, 1.05])
    assert find_crossing(b, 1.0, refine=False) is None
    with pytest.raises(ValueError):
        find_crossing(synthetic_branch([1.0], [1.2]))


def test_decreasing_direction(grid_1d):
    b = continue_branch(gaussian_seed(grid_1d, 1, 1.2, 0.5), (1.2, 1.1), 0.05, CFG)
    assert b.direction == "decreasing_gamma"
    assert np.allclose(b.gammas, [1.2, 1.15, 1.1])


def test_step_is_halved_on_failure(grid_1d, monkeypatch):
    real = cont._attempt
    last = {"g": 1.0}

    def flaky(V, gamma, cfg):
        if abs(gamma - last["g"]) > 0.006:
            return None, "divergence"
        res, why = real(V, gamma, cfg)
        last["g"] = gamma
        return res, why

    monkeypatch.setattr(cont, "_attempt", flaky)
    b = continue_branch(gaussian_seed(grid_1d, 1, 1.0, 0.5), (1.0, 1.02), 0.01, CFG)
    assert np.allclose(np.diff(b.gammas), 0.005)
    assert b.terminated is None


def test_branch_terminates_after_six_halvings(grid_1d, monkeypatch):
    real = cont._attempt
    monkeypatch.setattr(cont, "_attempt",
                        lambda V, g, cfg: real(V, g, cfg) if g == 1.0 else (None, "lost spectrum"))
    b = continue_branch(gaussian_seed(grid_1d, 1, 1.0, 0.5), (1.0, 1.1), 0.01, CFG)
    assert len(b.points) == 1
    assert b.terminated == "step-size underflow (lost spectrum)"


def test_invalid_step_and_failing_seed():
    g = make_grid(400, 50.0, RADIAL)
    with pytest.raises(ValueError):
        continue_branch(gaussian_seed(g, 3, 1.0, 8.0), (1.0, 1.1), 0.1)
    with pytest.raises(BranchTerminated) as info:
        continue_branch(gaussian_seed(g, 3, 1.0, 0.2), (1.0, 1.1), 0.01)
    assert info.value.reason == "lost spectrum"


def test_count_changes_are_flagged():
    b = synthetic_branch([1.0, 1.1, 1.2, 1.3], [1.2, 1.1, 1.05, 1.0], [5, 5, 4, 4])
    assert b.events == [{"gamma": 1.2, "from": 5, "to": 4}]


def test_locate_crossing_in_d3():
    g = make_grid(3000, 200.0, RADIAL)
    seed = gaussian_seed(g, 3, 0.85, 8.0)
    b, cr = locate_crossing(seed, 0.85, FixedPointConfig(tol=1e-9), width=1e-3)
    assert b.label == "k=1"
    assert cr.gamma_c == pytest.approx(0.863, abs=5e-3)


def test_seed_library_deduplicates_by_count(grid_1d):
    lib = seed_library(grid_1d, 1, 1.2, widths=(0.5, 1.0, 2.0), cfg=CFG)
    assert list(lib) == [1]


# --- envelope ---------------------------------------------------------------------


def test_envelope_examples():
    low = synthetic_branch([1.0, 1.2], [0.9, 0.8])
    env = upper_envelope([low], [1.0, 1.1, 1.2])
    assert all(e["best_ratio"] == 1.0 and e["best_label"] == "semiclassical" for e in env)
    one = synthetic_branch([1.0, 1.1, 1.2], [1.2, 1.05, 0.95])
    env = upper_envelope([one, low], [1.0, 1.05, 1.2])
    assert [e["best_label"] for e in env] == ["k=1", "k=1", "semiclassical"]
    assert env[1]["best_ratio"] == pytest.approx(1.125)
    assert np.isnan(interpolate_ratio(one, 1.3))
    with pytest.raises(ValueError):
        upper_envelope([], [1.0])


@given(data=st.data())
@settings(max_examples=40)
def test_envelope_dominates_every_branch(data):
    n = data.draw(st.integers(1, 4))
    branches = []
    for _ in range(n):
        g0 = data.draw(st.floats(0.5, 1.0))
        gs = g0 + np.cumsum(data.draw(st.lists(st.floats(0.01, 0.1), min_size=2, max_size=8)))
        rs = data.draw(st.lists(st.floats(0.5, 2.0), min_size=len(gs), max_size=len(gs)))
        branches.append(synthetic_branch(gs, rs))
    grid = sorted({float(g) for b in branches for g in b.gammas})
    env = upper_envelope(branches, grid)
    for e in env:
        assert e["best_ratio"] >= 1.0
        for b in branches:
            r = interpolate_ratio(b, e["gamma"])
            assert np.isnan(r) or e["best_ratio"] >= r


# --- harmonic pattern ------------------------------------------------------------


@pytest.fixture(scope="module")
def oscillator():
    g = make_grid(4000, 12.0, RADIAL, 2.0)
    V = PotentialField(g, -10 + g.nodes**2 / 4, 3, 1.0)
    return scan_radial_spectrum(V), V


def test_harmonic_levels_are_recovered(oscillator):
    spec, V = oscillator
    rep = harmonic_pattern_check(spec, V)
    assert rep["applicable"]
    assert rep["v0"] == -10 and rep["second_derivative"] == pytest.approx(0.5, rel=1e-9)
    for h in rep["harmonic"]:
        assert h["predicted"] == pytest.approx(-10 + 2 * h["k"] + h["l"] + 1.5)
        assert abs(h["residual"]) < 1e-4
    assert rep["shift_relation"] and max(s["diff"] for s in rep["shift_relation"]) < 1e-4


def test_triangular_cutoff_detection(oscillator):
    spec, V = oscillator
    rep = harmonic_pattern_check(spec, V)
    # 2k + l <= 8 gives last k + l = 4 + l/2 rounded down: several values
    assert not rep["triangular"] and rep["last_k_plus_l"][0] == 4


def test_single_channel_is_inapplicable():
    g = make_grid(800, 40.0, RADIAL)
    V = PotentialField(g, -4.0 * np.exp(-g.nodes**2), 3, 1.0)
    spec = scan_radial_spectrum(V)
    assert len(spec.channels) == 1
    assert harmonic_pattern_check(spec, V)["applicable"] is False
    with pytest.raises(InsufficientChannelsError):
        harmonic_pattern_check(spec, V, strict=True)
