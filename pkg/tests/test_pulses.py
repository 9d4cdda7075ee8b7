import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from afcmem import pulses
from afcmem.pulses import GROUND, InhomogeneousLine, PulseShape

GRID = np.linspace(-500, 500, 41)


def test_resonant_pi_pulse_inverts():
    r = pulses.bloch_evolve(GROUND, PulseShape("square", 1.0, 500.0))
    assert abs(r[2] - 1.0) < 1e-6


def test_resonant_half_pi_pulse():
    r = pulses.bloch_evolve(GROUND, PulseShape("square", 1.0, 250.0))
    assert abs(r[2]) < 1e-6
    assert abs(abs(r[1]) - 1.0) < 1e-6


def test_zero_amplitude_leaves_state():
    state = np.array([0.3, -0.4, np.sqrt(1 - 0.25)])
    np.testing.assert_allclose(pulses.bloch_evolve(state, PulseShape("gaussian", 2.0, 0.0), 0.0, step=0.01),
                               state, atol=1e-15)


def test_closed_form_detuned_square_pulse():
    pulse = PulseShape("square", 3.0, 120.0)
    for delta in (-90.0, 0.0, 35.0):
        r = pulses.bloch_evolve(GROUND, pulse, delta)
        u, v, w = pulses._constant_rotation(np.array([3.0]), pulses.KHZ_TO_RAD_PER_US * 120.0,
                                            pulses.KHZ_TO_RAD_PER_US * delta)
        np.testing.assert_allclose(r, [u[0, 0], v[0, 0], w[0, 0]], atol=1e-9)


@pytest.mark.parametrize("pulse,delta", [
    (PulseShape("gaussian", 2.0, 300.0), 37.0),
    (PulseShape("chs", 4.0, 309.27, detuning_sweep=(-1000.0, 1000.0)), 120.0),
])
def test_fourth_order_richardson_ratio(pulse, delta):
    h0 = pulses.max_step(pulse, delta)
    r = [pulses.bloch_evolve(GROUND, pulse, delta, step=h0 / 2**k) for k in range(3)]
    ratio = np.linalg.norm(r[0] - r[1]) / np.linalg.norm(r[1] - r[2])
    assert 12 <= ratio <= 20
    assert np.linalg.norm(r[1] - r[2]) < 1e-7


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["gaussian", "chs", "square"]), st.floats(0.5, 6.0), st.floats(0.0, 800.0),
       st.floats(-400.0, 400.0))
def test_norm_conserved(family, fwhm, rabi, delta):
    sweep = (-800.0, 800.0) if family == "chs" else None
    r = pulses.bloch_evolve(GROUND, PulseShape(family, fwhm, rabi, detuning_sweep=sweep), delta)
    assert abs(np.linalg.norm(r) - 1.0) < 1e-8


def test_step_guard():
    with pytest.raises(pulses.StepTooCoarse):
        pulses.bloch_evolve(GROUND, PulseShape("square", 1.0, 500.0), step=0.5)


def test_adiabatic_chs_transfers_fully():
    p = PulseShape("chs", 8.0, 2000.0, detuning_sweep=(-2000.0, 2000.0))
    res = pulses.chs_transfer_efficiency(p, GRID)
    assert np.min(res.probability) > 0.99
    fine = pulses.chs_transfer_efficiency(p, GRID, step=pulses.max_step(p, 500.0) / 4)
    np.testing.assert_allclose(res.probability, fine.probability, atol=1e-9)


def test_chs_degenerate_pi_pulse():
    p = PulseShape("chs", 4.0, 1.0, detuning_sweep=(0.0, 0.0))
    p = p.with_rabi(np.pi / p.area())  # area pi
    assert pulses.chs_transfer_efficiency(p, [0.0]).mean == pytest.approx(1.0, abs=1e-9)


def test_calibrated_control_preset(cfg):
    res = pulses.chs_transfer_efficiency(cfg.pulse("control_chs"), GRID)
    assert res.efficiency == pytest.approx(0.385, rel=0.02)


def test_chs_symmetric_in_detuning(cfg):
    res = pulses.chs_transfer_efficiency(cfg.pulse("control_chs"), GRID)
    np.testing.assert_allclose(res.probability, res.probability[::-1], atol=1e-6)


def test_ideal_nutation_t_pi():
    for rabi in (7.68, 50.0, 333.0):
        res = pulses.rabi_nutation(PulseShape("square", 10.0, rabi))
        assert res.t_pi == pytest.approx(1000.0 / (2 * rabi), rel=1e-9)


def test_rf_preset_t_pi(cfg):
    assert pulses.rabi_nutation(cfg.pulse("rf_pi")).t_pi == pytest.approx(65.1, rel=0.01)


def test_rabi_spread_damps_nutation_small_shift():
    drive = PulseShape("square", 10.0, 7.68)
    line = InhomogeneousLine("gaussian", 1e-6, 0.1)
    a = pulses.rabi_nutation(drive, line, horizon=5 * 1000 / 7.68, n_samples=4000, seed=1)
    oracle = pulses.rabi_nutation(drive, line, horizon=5 * 1000 / 7.68, n_samples=20000, seed=2)
    ideal = pulses.rabi_nutation(drive, horizon=5 * 1000 / 7.68)
    assert abs(a.t_pi - ideal.t_pi) / ideal.t_pi < 0.02
    assert abs(a.t_pi - oracle.t_pi) / oracle.t_pi < 0.005
    late = a.times > 4 * 1000 / 7.68
    assert np.max(np.abs(a.w[late])) < 0.95 * np.max(np.abs(ideal.w[late]))


def test_nutation_area_invariance():
    base = pulses.rabi_nutation(PulseShape("square", 10.0, 20.0))
    for c in (0.5, 2.0, 4.0):
        scaled = pulses.rabi_nutation(PulseShape("square", 10.0 / c, 20.0 * c))
        assert scaled.t_pi * c == pytest.approx(base.t_pi, rel=1e-9)


def test_coverage_limits():
    narrow = InhomogeneousLine("gaussian", 1e-7)
    c = pulses.inhomogeneous_coverage(narrow, 65.1, 5)
    assert c.per_pulse == pytest.approx(1.0, abs=1e-9) and c.compounded == pytest.approx(1.0, abs=1e-9)
    assert pulses.refocusing_fidelity(0.0, 65.1) == pytest.approx(1.0, abs=1e-12)


def test_coverage_quadrature_oracle():
    line = InhomogeneousLine("gaussian", 30.0)
    c = pulses.inhomogeneous_coverage(line, 65.1, 1)
    sigma = 30.0 / (2 * np.sqrt(2 * np.log(2)))

    def f(d):
        om = np.pi / 65.1
        x = 2e-3 * np.pi * d
        return om**2 / (om**2 + x**2) * np.sin(0.5 * np.hypot(om, x) * 65.1) ** 2 * \
            np.exp(-0.5 * (d / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))

    oracle, _ = integrate.quad(f, -np.inf, np.inf, epsabs=1e-13)
    assert c.per_pulse < 1.0
    assert c.per_pulse == pytest.approx(oracle, abs=1e-9)


def test_coverage_monotone():
    vals = [pulses.inhomogeneous_coverage(InhomogeneousLine("gaussian", g), 65.1, 1).compounded
            for g in (5.0, 15.0, 30.0, 60.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    line = InhomogeneousLine("gaussian", 30.0)
    vals = [pulses.inhomogeneous_coverage(line, 65.1, n).compounded for n in (1, 2, 4, 8)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    rnd = pulses.inhomogeneous_coverage(line, 65.1, 8, "randomize").compounded
    assert rnd > vals[-1] and rnd >= 0.5


def test_line_sampling_seeded():
    line = InhomogeneousLine("lorentzian", 30.0, 0.1)
    a = line.sample(np.random.default_rng(3), 100)
    b = line.sample(np.random.default_rng(3), 100)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    val, _ = integrate.quad(line.pdf, -np.inf, np.inf)
    assert val == pytest.approx(1.0, abs=1e-9)
