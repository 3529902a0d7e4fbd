import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lt_optim.functional import LTParams, conjectured_ratio_1d, norm_integral
from lt_optim.mesh_fem import LINE, RADIAL, WEIGHTED, PotentialField, make_grid
from lt_optim.optimizer import (
    GALERKIN,
    NODAL,
    Bump,
    DegenerateDensityError,
    FixedPointConfig,
    InsufficientDataError,
    LostSpectrumError,
    bump_distance,
    density_from_spectrum,
    detect_bumps,
    fit_separation_law,
    fixed_point_run,
    gaussian_seed,
    next_potential,
    scf_residual,
    two_bump_seed,
)
from lt_optim.spectral import ChannelSpectrum, EigenPair, Spectrum, compute_spectrum, solve_channel


@pytest.fixture(scope="module")
def run_1d():
    g = make_grid(2000, 40.0, LINE)
    return fixed_point_run(gaussian_seed(g, 1, 1.2, 0.5), FixedPointConfig(tol=1e-10))


# --- density -------------------------------------------------------------------


def test_empty_spectrum_has_no_density():
    g = make_grid(16, 2.0, LINE)
    with pytest.raises(DegenerateDensityError):
        density_from_spectrum(Spectrum([], 1), LTParams(1.0, 1), g)


def test_gamma_one_density_is_the_squared_eigenvector():
    g = make_grid(400, 10.0, LINE)
    V = PotentialField(g, -2 / np.cosh(g.nodes) ** 2, 1, 1.0)
    spec = compute_spectrum(V)
    psi = spec.channels[0].op.nodal(spec.channels[0].pairs[0].vector)
    rho = density_from_spectrum(spec, LTParams(1.0, 1), g, NODAL)
    assert np.allclose(rho, psi**2, rtol=0, atol=1e-15)


def test_two_channel_density_weights():
    # weighted form keeps radial parts as they are, so the nodal rule is a plain sum
    g = make_grid(200, 15.0, RADIAL)
    V = PotentialField(g, -6 * np.exp(-g.nodes**2 / 4), 3, 2.0)
    c0 = solve_channel(V, 0, WEIGHTED)
    c1 = solve_channel(V, 1, WEIGHTED)
    x0, x1 = c0.pairs[0].vector, c1.pairs[0].vector
    ch0 = ChannelSpectrum(0, [EigenPair(-4.0, x0)], 1, c0.op)
    ch1 = ChannelSpectrum(1, [EigenPair(-1.0, x1)], 3, c1.op)
    rho = density_from_spectrum(Spectrum([ch0, ch1], 3), LTParams(2.0, 3), g, NODAL)
    expected = 4 * c0.op.nodal(x0) ** 2 + 3 * c1.op.nodal(x1) ** 2
    assert np.allclose(rho, expected, rtol=1e-14, atol=0)


def test_galerkin_and_nodal_densities_agree_to_second_order():
    errs = []
    for N in (400, 800, 1600):
        g = make_grid(N, 12.0, LINE)
        V = PotentialField(g, -3 / np.cosh(g.nodes) ** 2, 1, 1.3)
        spec = compute_spectrum(V)
        a = density_from_spectrum(spec, LTParams(1.3, 1), g, GALERKIN)
        b = density_from_spectrum(spec, LTParams(1.3, 1), g, NODAL)
        errs.append(np.max(np.abs(a - b)))
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.1) and errs[1] / errs[2] == pytest.approx(4, rel=0.1)


# --- next potential ----------------------------------------------------------------


@given(c=st.floats(1e-6, 1e6), gamma=st.floats(0.6, 1.5))
@settings(max_examples=30)
def test_next_potential_is_homogeneous_and_normalized(c, gamma):
    g = make_grid(64, 5.0, LINE)
    rho = np.exp(-g.nodes**2)
    p = LTParams(gamma, 1)
    V1 = next_potential(rho, p, g)
    V2 = next_potential(c * rho, p, g)
    assert np.allclose(V1.values, V2.values, rtol=1e-12, atol=0)
    assert norm_integral(V1) == pytest.approx(1.0, abs=1e-12)


def test_next_potential_keeps_the_support_of_a_hat():
    g = make_grid(32, 4.0, LINE)
    rho = np.zeros(33)
    rho[10] = 1.0
    V = next_potential(rho, LTParams(1.0, 1), g)
    assert np.count_nonzero(V.values) == 1 and V.values[10] < 0
    assert norm_integral(V) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(DegenerateDensityError):
        next_potential(np.zeros(33), LTParams(1.0, 1), g)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_radial_next_potential_is_normalized(d):
    g = make_grid(300, 20.0, RADIAL)
    V = next_potential(np.exp(-g.nodes), LTParams(0.9, d), g)
    assert norm_integral(V) == pytest.approx(1.0, abs=1e-12)


# --- fixed-point runs --------------------------------------------------------------


def test_one_bound_state_run_reaches_the_conjectured_ratio(run_1d):
    V, trace = run_1d
    assert trace.outcome == "converged"
    assert trace.final.ratio == pytest.approx(conjectured_ratio_1d(1.2), abs=1e-3)
    assert trace.final.ratio == pytest.approx(1.0750, abs=1e-3)
    assert trace.final.bound_states == 1
    assert norm_integral(V) == pytest.approx(1.0, abs=1e-12)
    assert trace.final.residual_sup <= 1e-10


def test_energies_are_nondecreasing(run_1d):
    e = run_1d.trace.energies()
    assert np.all(np.diff(e) >= -1e-10 * np.abs(e[:-1]))
    assert run_1d.trace.monotone_violations == 0


def test_convergence_is_linear(run_1d):
    r = run_1d.trace.residuals()[1:]
    rates = r[1:] / r[:-1]
    tail = rates[len(rates) // 3 :]
    assert np.all(tail < 1) and np.std(tail) < 0.1


def test_converged_potential_is_a_discrete_fixed_point(run_1d):
    assert scf_residual(run_1d.potential) <= 1e-10


def test_rerun_from_a_converged_point_stops_at_once(run_1d):
    res = fixed_point_run(run_1d.potential, FixedPointConfig(tol=1e-10))
    assert res.converged and len(res.trace.steps) - 1 <= 3


def test_gamma_one_run_is_well_defined():
    g = make_grid(1500, 30.0, LINE)
    res = fixed_point_run(gaussian_seed(g, 1, 1.0, 2.0), FixedPointConfig(tol=1e-10))
    assert res.converged
    assert res.evaluation.ratio == pytest.approx(conjectured_ratio_1d(1.0), abs=1e-3)


def test_two_bumps_separate():
    g = make_grid(1500, 40.0, LINE)
    res = fixed_point_run(two_bump_seed(g, 1.2, 8.0, 1.0), FixedPointConfig(max_iters=2000))
    assert res.trace.outcome == "bump_separation"
    assert len(detect_bumps(res.potential)) == 2


def test_seed_without_bound_states_is_reported():
    g = make_grid(400, 50.0, RADIAL)
    with pytest.raises(LostSpectrumError) as info:
        fixed_point_run(gaussian_seed(g, 3, 1.0, 0.2))
    assert info.value.iteration == 0


def test_radial_formulations_give_the_same_critical_point():
    g = make_grid(2000, 60.0, RADIAL)
    seed = gaussian_seed(g, 3, 1.0, 6.0)
    a = fixed_point_run(seed, FixedPointConfig(tol=1e-10))
    b = fixed_point_run(seed, FixedPointConfig(tol=1e-10, formulation=WEIGHTED))
    assert a.converged and b.converged
    assert a.evaluation.ratio == pytest.approx(b.evaluation.ratio, rel=1e-5)


def test_radial_run_is_normalized_and_monotone():
    g = make_grid(1500, 60.0, RADIAL)
    res = fixed_point_run(gaussian_seed(g, 2, 1.1, 3.0), FixedPointConfig(tol=1e-10))
    assert res.converged and res.trace.monotone_violations == 0
    assert norm_integral(res.potential) == pytest.approx(1.0, abs=1e-12)


def test_callback_receives_every_step():
    g = make_grid(800, 30.0, LINE)
    seen = []
    res = fixed_point_run(gaussian_seed(g, 1, 1.2, 1.0), FixedPointConfig(tol=1e-8),
                          callback=lambda s, V: seen.append(s.iter))
    assert seen == [s.iter for s in res.trace.steps] == list(range(len(seen)))


# --- bumps and the separation law ---------------------------------------------------


def test_detect_bumps_examples():
    g = make_grid(2000, 20.0, LINE)
    x = g.nodes
    one = detect_bumps(PotentialField(g, -np.exp(-((x - 1.3) ** 2)), 1, 1.0))
    assert len(one) == 1 and abs(one[0].center - 1.3) < g.h[0]
    two = detect_bumps(PotentialField(g, -np.exp(-((x - 6) ** 2)) - np.exp(-((x + 6) ** 2)), 1, 1.0))
    assert [round(b.center, 2) for b in two] == [-6.0, 6.0]
    assert bump_distance(two) == pytest.approx(12.0, abs=g.h[0])
    assert detect_bumps(PotentialField(g, np.zeros_like(x), 1, 1.0)) == []
    assert bump_distance([Bump(0.0, 1.0)]) == 0.0


def test_fit_separation_law_synthetic():
    n = np.arange(1, 5001)
    fit = fit_separation_law(3 + 0.8 * np.log(n), n)
    assert fit.rate == pytest.approx(0.8, rel=1e-12) and fit.r_squared > 0.999
    flat = fit_separation_law(np.full(500, 7.0), np.arange(1, 501))
    assert abs(flat.rate) < 1e-12
    with pytest.raises(InsufficientDataError):
        fit_separation_law(np.ones(150), np.arange(1, 151))
