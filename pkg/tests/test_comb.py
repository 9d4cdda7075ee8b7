import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from afcmem import comb
from afcmem.comb import CombSpec, UnsupportedRegime
from afcmem.pulses import PulseShape

PROBE = PulseShape("gaussian", 2.0)
PAPER = CombSpec(100.0, 45.0, 1000.0, 0.8)


def mp_efficiency(al, f):
    mp.mp.dps = 50
    al, f = mp.mpf(al), mp.mpf(f)
    d = (al / f) * mp.sqrt(mp.pi / (4 * mp.log(2)))
    return (1 - mp.e ** (-d)) ** 2 * mp.e ** (-(1 / f**2) * (mp.pi**2 / (2 * mp.log(2))))


def test_finesse_reported():
    assert round(PAPER.finesse, 2) == 2.22


def test_spec_validation():
    with pytest.raises(ValueError):
        CombSpec(100.0, 120.0, 1000.0, 0.8)
    with pytest.raises(ValueError):
        CombSpec(100.0, 45.0, 50.0, 0.8)
    with pytest.raises(ValueError):
        CombSpec(100.0, 45.0, 1000.0, 0.2, background_od=0.5)


def test_square_teeth_flat_limit():
    spec = CombSpec(100.0, 100.0 - 1e-9, 1000.0, 0.8, tooth_shape="square")
    x = np.random.default_rng(0).uniform(-350, 350, 2000)  # off the 1e-9 kHz seams
    np.testing.assert_allclose(comb.build_comb(spec)(x), 0.8, atol=1e-12)


@pytest.mark.parametrize("shape", ["gaussian", "square", "lorentzian"])
def test_period_integral_matches_shape_constant(shape):
    spec = CombSpec(100.0, 20.0, 2000.0, 0.8, tooth_shape=shape)
    prof = comb.build_comb(spec)
    # central period, away from the band edges
    val, _ = integrate.quad(prof, -50.0, 50.0, points=[0.0], limit=400, epsabs=1e-12)
    expected = 0.8 * 20.0 * comb.SHAPE_AREA[shape]
    if shape == "lorentzian":
        # neighbouring teeth leak into the cell through the slow tails
        assert val == pytest.approx(expected, rel=0.05)
    else:
        assert val == pytest.approx(expected, rel=1e-9)


def test_analytic_zero_absorption():
    assert comb.afc_efficiency_analytic(CombSpec(100.0, 45.0, 1000.0, 0.0)) == 0.0


def test_analytic_large_finesse_dephasing_factor_to_one():
    vals = [comb.afc_efficiency_analytic(CombSpec(100.0, 100.0 / f, 1000.0, 0.5 * f)) for f in (10, 100, 1000)]
    limit = (1 - np.exp(-0.5 * np.sqrt(np.pi / (4 * np.log(2))))) ** 2
    assert vals[-1] == pytest.approx(limit, rel=1e-5)
    assert vals[0] < vals[1] < vals[2]


def test_analytic_matches_arbitrary_precision_oracle():
    assert comb.afc_efficiency_analytic(PAPER) == pytest.approx(float(mp_efficiency("0.8", mp.mpf(100) / 45)),
                                                                abs=1e-12, rel=1e-12)


def test_analytic_requires_gaussian():
    with pytest.raises(UnsupportedRegime):
        comb.afc_efficiency_analytic(CombSpec(100.0, 45.0, 1000.0, 0.8, tooth_shape="square"))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(0.05, 5.0), st.floats(1.2, 8.0))
def test_analytic_monotone_in_depth(a, b, f):
    lo, hi = sorted((a, b))
    if hi - lo < 1e-6:
        return
    e = [comb.afc_efficiency_analytic(CombSpec(100.0, 100.0 / f, 1000.0, x)) for x in (lo, hi)]
    assert e[0] < e[1]


def test_single_tooth_grid_symmetric():
    spec = CombSpec(100.0, 45.0, 100.0, 0.8)
    ens = comb.discretize(spec, 16)
    np.testing.assert_allclose(np.sort(ens.detunings), -np.sort(ens.detunings)[::-1], atol=1e-12)
    np.testing.assert_allclose(ens.weights, ens.weights[::-1], rtol=1e-12)


def test_random_discretisation_deterministic():
    a = comb.discretize(PAPER, 32, rng_seed=7, mode="random")
    b = comb.discretize(PAPER, 32, rng_seed=7, mode="random")
    assert np.array_equal(a.detunings, b.detunings) and np.array_equal(a.weights, b.weights)


def test_histogram_converges_with_resolution():
    edges = np.linspace(-500, 500, 201)
    mid = 0.5 * (edges[1:] + edges[:-1])
    target = comb.build_comb(PAPER)(mid)
    dist = []
    for n in (8, 32, 128, 512):
        d = [np.sum((comb.discretize(PAPER, n, rng_seed=s, mode="random").histogram(edges) - target) ** 2)
             for s in range(8)]
        dist.append(np.mean(d))
    assert all(x > y for x, y in zip(dist, dist[1:]))


def test_echo_at_inverse_periodicity_one_bin():
    tr = comb.simulate_echo(comb.discretize(PAPER, 64), PROBE)
    t, _ = tr.echo_peak()
    assert abs(t - 10.0) <= tr.dt + 1e-9


def test_echo_time_scales_inverse_period():
    for delta in (50.0, 80.0, 100.0, 125.0, 200.0):
        spec = CombSpec(delta, 0.45 * delta, 10 * delta, 0.8)
        horizon = 1.5 * spec.echo_time + 5
        tr = comb.simulate_echo(comb.discretize(spec, 64), PulseShape("gaussian", 2.0 * 100 / delta), horizon)
        t, _ = tr.echo_peak()
        assert abs(t - 1000.0 / delta) <= 2 * tr.dt


def test_delta_comb_revives_without_decay():
    ens = comb.AtomEnsemble(np.array([0.0]), np.array([1e-3]), periodicity=float("nan"))
    kernel = comb.ensemble_response(ens, np.linspace(0, 100, 11))
    np.testing.assert_allclose(np.abs(kernel), 1e-6, rtol=1e-12)
    # equally spaced classes rephase perfectly at every multiple of 1/Delta
    ens = comb.AtomEnsemble(np.arange(-5, 6) * 100.0, np.ones(11), 100.0)
    k = comb.ensemble_response(ens, np.array([0.0, 10.0, 20.0, 30.0]))
    np.testing.assert_allclose(np.abs(k), np.abs(k[0]), rtol=1e-9)


def test_echo_never_exceeds_input_and_is_linear():
    ens = comb.discretize(PAPER, 64)
    a = comb.simulate_echo(ens, PROBE)
    b = comb.simulate_echo(ens, PROBE, amplitude=3.7)
    assert np.max(a.intensity[a.times > 2.0]) <= 1.0
    np.testing.assert_allclose(b.field, 3.7 * a.field, rtol=1e-9, atol=1e-15)


def test_simulated_efficiency_close_to_analytic():
    tr = comb.simulate_echo(comb.discretize(PAPER, 64), PROBE)
    assert tr.echo_efficiency() == pytest.approx(comb.afc_efficiency_analytic(PAPER), rel=0.15)


def test_agreement_improves_with_resolution():
    ref = comb.afc_efficiency_analytic(PAPER)
    err = [abs(comb.simulate_echo(comb.discretize(PAPER, n), PROBE).echo_efficiency() - ref) for n in (4, 8, 64)]
    assert err[0] > err[1] > err[2]


def test_horizon_must_reach_echo():
    with pytest.raises(ValueError):
        comb.simulate_echo(comb.discretize(PAPER, 8), PROBE, horizon=5.0)
