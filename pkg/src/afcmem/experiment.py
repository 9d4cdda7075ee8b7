"""End-to-end spin-wave AFC storage: pumping, efficiency ledger, storage runs,
time-bin interference and the transported-memory link budget.

Decay convention: the spin coherence W(T) from ``dd`` multiplies the echo
*field*; efficiencies are intensities and therefore carry W^2. Lifetimes
fitted on echo amplitudes equal the ``dd`` coherence lifetime.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from dataclasses import field as dc_field
from functools import lru_cache

import numpy as np
from scipy import linalg

from . import comb as comb_mod
from . import dd
from .pulses import PulseShape, chs_transfer_efficiency, inhomogeneous_coverage

DECAY_CONVENTION = "amplitude"


class InconsistentMeasurement(ValueError):
    pass


class PumpConfigError(ValueError):
    pass


# -- optical pumping ---------------------------------------------------------


@dataclass(frozen=True)
class PumpStage:
    name: str
    pumps: tuple  # ((ground, excited), ...) 1-based labels
    duration_ms: float
    cycles: float = 1  # may be inf
    wait_ms: float = 0.0


@dataclass(frozen=True)
class PumpPreset:
    """Rate-equation pumping recipe.

    ``rate_per_ms`` is the optical pumping rate of every listed transition,
    ``branching[j][i]`` the probability that excited level j+1 decays to
    ground level i+1 (rows sum to 1). ``bandwidth_mhz`` is the reach of the
    pump frequency shifter around the |3>g-|3>e line.
    """

    stages: tuple
    rate_per_ms: float = 5.0
    excited_lifetime_ms: float = 1.9
    branching: np.ndarray | None = None
    bandwidth_mhz: float = 300.0
    threshold: float = 1e-3
    reference: tuple = (3, 3)

    def branching_matrix(self):
        b = np.full((6, 6), 1 / 6) if self.branching is None else np.asarray(self.branching, dtype=float)
        if b.shape != (6, 6) or np.any(b < 0) or not np.allclose(b.sum(axis=1), 1, atol=1e-12):
            raise PumpConfigError("branching must be a 6x6 row-stochastic matrix")
        return b


@dataclass
class LambdaSystem:
    ground: int  # 0-based indices
    spin: int
    excited: int
    populations_g: np.ndarray
    populations_e: np.ndarray
    class_selected: bool
    pump_offsets_mhz: dict = dc_field(default_factory=dict)
    threshold: float = 1e-3

    def __post_init__(self):
        total = self.populations_g.sum() + self.populations_e.sum()
        if np.any(self.populations_g < -1e-12) or np.any(self.populations_e < -1e-12) or abs(total - 1) > 1e-9:
            raise ValueError("populations must be non-negative and sum to 1")

    @property
    def storage_population(self):
        return float(self.populations_g[self.ground])

    @property
    def spin_residual(self):
        return float(self.populations_g[self.spin])

    @property
    def noise_risk(self):
        """Residual population in the spin-storage level above the cleanliness threshold."""
        return self.spin_residual > self.threshold


def _pump_generator(pumps, rate, lifetime, branching):
    """dp/dt = G p on p = (ground 1..6, excited 1..6)."""
    g = np.zeros((12, 12))
    for gi, ej in pumps:
        a, b = gi - 1, 6 + ej - 1
        g[a, a] -= rate
        g[b, a] += rate
        g[b, b] -= rate
        g[a, b] += rate
    if lifetime > 0:
        for j in range(6):
            g[6 + j, 6 + j] -= 1 / lifetime
            g[:6, 6 + j] += branching[j] / lifetime
    return g


def _stage_map(stage, preset, branching):
    on = linalg.expm(_pump_generator(stage.pumps, preset.rate_per_ms, preset.excited_lifetime_ms, branching)
                     * stage.duration_ms)
    off = linalg.expm(_pump_generator((), 0.0, preset.excited_lifetime_ms, branching) * stage.wait_ms)
    return off @ on


def _power(m, cycles):
    if np.isinf(cycles):
        for _ in range(200):
            nxt = m @ m
            if np.max(np.abs(nxt - m)) < 1e-15:
                return nxt
            m = nxt
        return m
    return np.linalg.matrix_power(m, int(cycles))


def pump_offsets(levels_g, levels_e, pumps, reference=(3, 3)):
    """Optical detuning (MHz) of each pump from the reference transition."""
    eg, ee = levels_g.energies, levels_e.energies
    r_g, r_e = reference
    return {(gi, ej): float((ee[ej - 1] - ee[r_e - 1]) - (eg[gi - 1] - eg[r_g - 1])) for gi, ej in pumps}


def prepare_lambda(levels_g, levels_e, pump_preset, initial=None):
    """Class cleaning then spin polarisation as classical rate equations.

    Starts from a thermal (uniform ground) distribution, applies each stage
    ``cycles`` times (pump on for ``duration_ms`` then dark for ``wait_ms``)
    and finally lets the excited state decay completely.
    """
    if len(levels_g.energies) != 6 or len(levels_e.energies) != 6:
        raise PumpConfigError("need six ground and six excited levels")
    all_pumps = sorted({p for st in pump_preset.stages for p in st.pumps})
    for gi, ej in all_pumps:
        if not (1 <= gi <= 6 and 1 <= ej <= 6):
            raise PumpConfigError(f"pump {gi}g-{ej}e is not a level pair")
    offsets = pump_offsets(levels_g, levels_e, all_pumps, pump_preset.reference)
    for pair, off in offsets.items():
        if abs(off) > pump_preset.bandwidth_mhz:
            raise PumpConfigError(
                f"pump {pair[0]}g-{pair[1]}e sits {off:.3f} MHz from the reference line, "
                f"outside the {pump_preset.bandwidth_mhz} MHz pump bandwidth")
    branching = pump_preset.branching_matrix()
    p = np.concatenate([np.full(6, 1 / 6), np.zeros(6)]) if initial is None else np.asarray(initial, float)
    for stage in pump_preset.stages:
        p = _power(_stage_map(stage, pump_preset, branching), stage.cycles) @ p
    # full radiative decay of whatever is left in the excited state
    p_g = p[:6] + branching.T @ p[6:]
    p_g = np.clip(p_g, 0.0, None)
    p_g /= p_g.sum()
    cleaning = pump_preset.stages[0].pumps if pump_preset.stages else ()
    selected = {gi for gi, _ in cleaning} == set(range(1, 7))
    r_g, r_e = pump_preset.reference
    return LambdaSystem(r_g - 1, 3, r_e - 1, p_g, np.zeros(6), selected, offsets, pump_preset.threshold)


def dark_state_oracle(pumps, preset):
    """Absorption probabilities into dark ground levels under continuous pumping
    from a uniform ground start, via the linear solve of the absorbing chain."""
    b = preset.branching_matrix()
    g = _pump_generator(pumps, preset.rate_per_ms, preset.excited_lifetime_ms, b)
    dark = [i for i in range(6) if np.all(g[:, i] == 0)]
    trans = [i for i in range(12) if i not in dark]
    p0 = np.concatenate([np.full(6, 1 / 6), np.zeros(6)])
    q = g[np.ix_(trans, trans)]
    r = g[np.ix_(dark, trans)]
    # time spent in transient states: -Q^-1 p0_T; absorbed mass R * that
    occupancy = np.linalg.solve(-q, p0[trans])
    out = np.zeros(6)
    out[dark] = p0[dark] + r @ occupancy
    return out


# -- efficiency ledger ---------------------------------------------------------


@dataclass(frozen=True)
class EfficiencyBudget:
    eta_afc: float
    eta_control: float
    eta_spin: float
    eta_total: float

    @classmethod
    def compose(cls, eta_afc, eta_control, eta_spin):
        return cls(eta_afc, eta_control, eta_spin, eta_afc * eta_control**2 * eta_spin)

    def as_dict(self):
        return {"eta_afc": self.eta_afc, "eta_control": self.eta_control,
                "eta_spin": self.eta_spin, "eta_total": self.eta_total}


def decompose_efficiency(eta_total, eta_afc, eta_control):
    """Solve eta_total = eta_afc * eta_control^2 * eta_spin for eta_spin."""
    for name, v in (("eta_total", eta_total), ("eta_afc", eta_afc), ("eta_control", eta_control)):
        if not 0 < v <= 1:
            raise InconsistentMeasurement(f"{name} = {v} is outside (0, 1]")
    ceiling = eta_afc * eta_control**2
    if eta_total > ceiling * (1 + 1e-12):
        raise InconsistentMeasurement(
            f"eta_total {eta_total} exceeds eta_afc * eta_control^2 = {ceiling}")
    return EfficiencyBudget(eta_afc, eta_control, min(eta_total / ceiling, 1.0), eta_total)


# -- coil heating --------------------------------------------------------------


@dataclass(frozen=True)
class HeatingPreset:
    """RF duty cycle -> optical homogeneous broadening (kHz per unit duty).

    The AFC efficiency is scaled by exp(-2 pi G t_echo), the intensity loss of
    an optical coherence held for the comb rephasing time with extra
    linewidth G = ``broadening_per_duty_khz`` x duty.
    """

    pulse_length_us: float = 65.1
    broadening_per_duty_khz: float = 0.0
    echo_delay_us: float = 10.0

    @classmethod
    def calibrated(cls, reference_tau_s, reference_factor, pulse_length_us=65.1, echo_delay_us=10.0):
        duty = pulse_length_us * 1e-6 / reference_tau_s
        g = -np.log(reference_factor) / (2 * np.pi * echo_delay_us * 1e-3)
        return cls(pulse_length_us, float(g / duty), echo_delay_us)


def duty_cycle(seq, pulse_length_us):
    if seq is None or seq.n_pulses == 0:
        return 0.0
    return seq.n_pulses * pulse_length_us * 1e-6 / seq.total_duration


def heating_penalty(seq, heating):
    duty = duty_cycle(seq, heating.pulse_length_us)
    if duty == 0.0:
        return 1.0
    g = heating.broadening_per_duty_khz * duty
    return float(np.exp(-2 * np.pi * g * heating.echo_delay_us * 1e-3))


# -- storage pipeline ----------------------------------------------------------


@dataclass
class StorageResult:
    trace: comb_mod.EchoTrace
    storage_time: float
    eta_total: float
    snr: float
    budget: EfficiencyBudget
    echo_time: float
    spin_coherence: float
    coverage: float
    heating: float
    eta_afc_two_level: float
    convention: str = DECAY_CONVENTION

    @property
    def echo_amplitude(self):
        return float(np.sqrt(self.eta_total))


@dataclass(frozen=True)
class StorageOptions:
    probe: PulseShape = PulseShape("gaussian", 2.0)
    atoms_per_tooth: int = 64
    discretization: str = "grid"
    rng_seed: int = 0
    horizon: float = 30.0
    dt: float = 0.05
    control_grid: tuple = (-500.0, 500.0, 41)
    heating: HeatingPreset = HeatingPreset()
    t_pi: float = 65.1
    coverage_pulses: int = 1
    coverage_model: str = "coherent"
    noise_floor: float = 1e-6


_ECHO_CACHE = {}


def _two_level_echo(spec, opts):
    key = (spec, opts.probe, opts.atoms_per_tooth, opts.discretization, opts.rng_seed, opts.horizon, opts.dt)
    if key not in _ECHO_CACHE:
        ens = comb_mod.discretize(spec, opts.atoms_per_tooth, opts.rng_seed, opts.discretization)
        _ECHO_CACHE[key] = comb_mod.simulate_echo(ens, opts.probe, opts.horizon, opts.dt)
    return _ECHO_CACHE[key]


@lru_cache(maxsize=64)
def _control_efficiency(control, grid):
    lo, hi, n = grid
    return chs_transfer_efficiency(control, np.linspace(lo, hi, int(n))).efficiency


@lru_cache(maxsize=64)
def _coverage(line, t_pi, n_pulses, model):
    return inhomogeneous_coverage(line, t_pi, n_pulses, model).compounded


def control_efficiency(control, opts):
    if control is None:
        return 1.0
    return _control_efficiency(control, tuple(opts.control_grid))


def run_storage(comb, control, seq, noise, line, storage_time, opts=None):
    """Spin-wave storage of a weak probe.

    The two-level echo from the discretised comb is rescaled in field by
    sqrt(heating) * eta_control * coverage * W(storage_time), where coverage
    is the line-averaged pi-pulse survival and W the dephasing factor of the
    DD sequence. ``control=None`` means lossless transfer; ``seq=None``
    means no DD (free evolution over ``storage_time``).
    """
    opts = opts or StorageOptions()
    if storage_time < 0:
        raise ValueError("storage_time must be >= 0")
    if seq is not None and abs(seq.total_duration - storage_time) > 1e-9 * max(storage_time, 1.0):
        raise ValueError(f"sequence lasts {seq.total_duration} s but storage_time is {storage_time} s")
    base = _two_level_echo(comb, opts)
    eta_afc_2l = base.echo_efficiency()

    heat = heating_penalty(seq, opts.heating)
    eta_c = control_efficiency(control, opts)
    if seq is not None:
        w = dd.coherence(seq, noise)
        cov = _coverage(line, opts.t_pi, opts.coverage_pulses, opts.coverage_model)
    elif storage_time > 0:
        w = dd.coherence(dd.free_evolution(storage_time), noise)
        cov = 1.0
    else:
        w, cov = 1.0, 1.0
    scale = np.sqrt(heat) * eta_c * cov * w
    if scale == 1.0:
        trace = base
    else:
        field = base.field.copy()
        echo_part = base.times >= 0.5 * base.echo_time_nominal
        field[echo_part] *= scale
        peak_in = np.max(np.abs(base.input_field) ** 2) or 1.0
        trace = comb_mod.EchoTrace(base.times, np.abs(field) ** 2 / peak_in, field, base.input_field,
                                   base.echo_time_nominal)
    budget = EfficiencyBudget.compose(eta_afc_2l * heat, eta_c, (cov * w) ** 2)
    t_peak, i_peak = trace.echo_peak()
    return StorageResult(trace, storage_time, budget.eta_total, i_peak / opts.noise_floor, budget,
                         t_peak, w, cov, heat, eta_afc_2l)


@dataclass(frozen=True)
class Pipeline:
    """Everything needed to run storage at arbitrary storage times."""

    comb: comb_mod.CombSpec
    control: PulseShape | None
    noise: dd.NoiseModel
    line: object
    family: str = "cpmg"
    tau: float = 0.1
    options: StorageOptions = StorageOptions()

    def sequence(self, storage_time):
        if self.family == "none" or storage_time == 0:
            return None
        return dd.sequence_for(self.family, self.tau, storage_time)

    def run(self, storage_time):
        return run_storage(self.comb, self.control, self.sequence(storage_time), self.noise, self.line,
                           storage_time, self.options)

    def with_noise(self, noise):
        return replace(self, noise=noise)


@dataclass
class StorageSweep:
    storage_times: np.ndarray
    eta_total: np.ndarray
    amplitude: np.ndarray  # echo field normalised to the noise-free pipeline
    fit: dd.LifetimeFit | None


def storage_sweep(pipeline, storage_times, model="exponential", fit_from=0.0):
    """Run the pipeline over storage times and fit the echo-amplitude lifetime."""
    t = np.asarray(storage_times, dtype=float)
    quiet = pipeline.with_noise(replace(pipeline.noise, amplitude=0.0))
    eta = np.array([pipeline.run(x).eta_total for x in t])
    ref = np.array([quiet.run(x).eta_total for x in t])
    amp = np.sqrt(eta / ref)
    sel = t >= fit_from
    fit = dd.fit_lifetime(t[sel], amp[sel], model) if np.count_nonzero(sel) >= 4 else None
    return StorageSweep(t, eta, amp, fit)


# -- time-bin interference -------------------------------------------------------


@dataclass
class InterferenceResult:
    delta_phi: np.ndarray
    intensity: np.ndarray
    visibility: float
    fidelity: float
    phase_offset: float
    amplitude: float
    residual_rms: float
    delta_theta: float = 0.0


def fidelity_from_visibility(v):
    return (1 + v) / 2


def fit_fringe(delta_phi, intensity, delta_theta=0.0):
    """Linear least squares for A (1 + V cos(dphi - dtheta + phi0))."""
    x = np.asarray(delta_phi, dtype=float) - delta_theta
    y = np.asarray(intensity, dtype=float)
    if len(x) < 3:
        raise ValueError("need at least 3 phase points")
    design = np.column_stack([np.ones_like(x), np.cos(x), np.sin(x)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    a, c, s = coef
    if a <= 0:
        raise ValueError("fringe fit failed: non-positive mean intensity")
    mod = np.hypot(c, s)
    if mod <= 1e-12 * abs(a):
        raise ValueError("fringe fit failed: flat fringes carry no phase information")
    v = mod / a
    phi0 = float(np.arctan2(-s, c))
    resid = y - design @ coef
    return float(v), phi0, float(a), float(np.sqrt(np.mean(resid**2)))


def timebin_interference(pipeline, delta_phi, delta_theta, storage_time, background=0.0, separation_us=2.0):
    """Middle-echo fringe of two time-bin inputs read by two pi/2 pulses.

    Each path (early input / late readout and late input / early readout)
    carries half the stored field. Their relative phase noise is the spin
    dephasing accumulated over ``separation_us``, negligible next to noise
    correlation times of seconds, so the paths are treated as mutually
    coherent. ``background`` is incoherent intensity in units of the summed
    path intensities.
    """
    if background < 0:
        raise ValueError("background must be >= 0")
    if separation_us <= 0:
        raise ValueError("separation must be positive")
    res = pipeline.run(storage_time)
    amp = np.sqrt(res.eta_total / 2)  # per-path field after the pi/2 split
    dphi = np.asarray(delta_phi, dtype=float)
    field = amp * (np.exp(1j * delta_theta) + np.exp(1j * dphi))
    intensity = np.abs(field) ** 2 + background * 2 * amp**2
    v, phi0, a, rms = fit_fringe(dphi, intensity, delta_theta)
    v = min(v, 1.0)
    return InterferenceResult(dphi, intensity, v, fidelity_from_visibility(v), phi0, a, rms, delta_theta)


# -- transport ------------------------------------------------------------------


@dataclass(frozen=True)
class MemoryLink:
    eta_ref: float
    t_ref_s: float
    lifetime_s: float
    decay_model: str = "amplitude"  # amplitude: intensity ~ exp(-2t/T); intensity: exp(-t/T)

    def exponent(self, model=None):
        model = model or self.decay_model
        if model not in ("amplitude", "intensity"):
            raise ValueError(f"unknown decay model {model!r}")
        return 2.0 if model == "amplitude" else 1.0

    def efficiency(self, t_s, model=None):
        k = self.exponent(model)
        return self.eta_ref * np.exp(-k * (t_s - self.t_ref_s) / self.lifetime_s)


@dataclass(frozen=True)
class FiberChannel:
    length_km: float
    loss_db_per_km: float = 0.2


@dataclass
class TransportComparison:
    length_km: float
    transit_time_s: float
    fiber_transmittance: float
    memory_efficiency: dict
    decay_model: str
    crossover_km: float
    memory_advantage: float


def transport_vs_fiber(memory, channel, speed_kmh):
    if channel.length_km < 0 or speed_kmh <= 0 or memory.lifetime_s <= 0 or channel.loss_db_per_km < 0:
        raise ValueError("lengths, speeds and lifetimes must be positive")
    t = channel.length_km / speed_kmh * 3600.0
    fiber = 10.0 ** (-channel.loss_db_per_km * channel.length_km / 10.0)
    etas = {m: float(memory.efficiency(t, m)) for m in ("amplitude", "intensity")}
    k = memory.exponent()
    a = channel.loss_db_per_km * np.log(10) / 10  # fiber attenuation per km
    b = k * 3600.0 / (speed_kmh * memory.lifetime_s)  # memory decay per km travelled
    c = np.log(memory.eta_ref) + k * memory.t_ref_s / memory.lifetime_s
    crossover = float(-c / (a - b)) if a > b and c < 0 else float("inf")
    eta = etas[memory.decay_model]
    return TransportComparison(channel.length_km, t, fiber, etas, memory.decay_model, crossover, eta / fiber)


def closest_decay_model(comparison, target):
    """Which extrapolation lands nearest ``target`` (log distance)."""
    return min(comparison.memory_efficiency, key=lambda m: abs(np.log(comparison.memory_efficiency[m] / target)))
