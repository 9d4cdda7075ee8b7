"""Atomic frequency comb: absorption profile, analytic efficiency, echo simulation.

Detunings are in kHz, times in microseconds. The echo model is the weak-probe
linear response of the discretised ensemble: the collective response kernel

    K(tau) = sum_k w_k exp(-2 pi i delta_k tau),   tau >= 0,

whose Fourier transform has real part d(nu)/2, is propagated through the
slab as a convolution exponential, E_out(nu) = exp(-K(nu)) E_in(nu). The
first echo of a comb with period Delta appears at 1/Delta.
"""
from __future__ import annotations

from dataclasses import dataclass
from dataclasses import field as dc_field

import numpy as np

from .pulses import PulseShape

_GAUSS_K = 4.0 * np.log(2.0)
SHAPE_AREA = {
    "gaussian": np.sqrt(np.pi / _GAUSS_K),
    "square": 1.0,
    "lorentzian": np.pi / 2,
}


class UnsupportedRegime(ValueError):
    pass


@dataclass(frozen=True)
class CombSpec:
    periodicity: float  # kHz
    tooth_fwhm: float  # kHz
    bandwidth: float  # kHz
    peak_od: float
    background_od: float = 0.0
    tooth_shape: str = "gaussian"

    def __post_init__(self):
        if not 0 < self.tooth_fwhm < self.periodicity:
            raise ValueError("need 0 < tooth_fwhm < periodicity")
        if self.bandwidth < self.periodicity:
            raise ValueError("bandwidth must hold at least one tooth")
        if not self.peak_od >= self.background_od >= 0:
            raise ValueError("need peak_od >= background_od >= 0")
        if self.tooth_shape not in SHAPE_AREA:
            raise ValueError(f"unknown tooth shape {self.tooth_shape!r}")

    @property
    def finesse(self):
        return self.periodicity / self.tooth_fwhm

    @property
    def n_teeth(self):
        return int(np.floor(self.bandwidth / self.periodicity + 1e-9))

    @property
    def echo_time(self):
        """First rephasing time 1/Delta in microseconds."""
        return 1000.0 / self.periodicity

    def tooth_centers(self):
        n = self.n_teeth
        return (np.arange(n) - 0.5 * (n - 1)) * self.periodicity


def tooth(x, fwhm, shape):
    """Peak-normalised tooth profile."""
    x = np.asarray(x, dtype=float)
    if shape == "gaussian":
        return np.exp(-_GAUSS_K * x**2 / fwhm**2)
    if shape == "square":
        return (np.abs(x) <= 0.5 * fwhm).astype(float)
    return 1.0 / (1.0 + 4.0 * x**2 / fwhm**2)


@dataclass(frozen=True)
class CombProfile:
    spec: CombSpec

    def __call__(self, delta):
        s = self.spec
        delta = np.asarray(delta, dtype=float)
        teeth = sum(tooth(delta - c, s.tooth_fwhm, s.tooth_shape) for c in s.tooth_centers())
        return s.background_od + (s.peak_od - s.background_od) * teeth

    @property
    def finesse(self):
        return self.spec.finesse

    def table(self, step=1.0):
        half = 0.5 * self.spec.bandwidth
        grid = np.arange(-half, half + 0.5 * step, step)
        return grid, self(grid)


def build_comb(spec):
    return CombProfile(spec)


def afc_efficiency_analytic(spec):
    """Two-level AFC efficiency for Gaussian teeth.

    eta = (1 - exp(-(aL/F) sqrt(pi/(4 ln 2))))^2 * exp(-(1/F^2) pi^2/(2 ln 2))
    """
    if spec.tooth_shape != "gaussian":
        raise UnsupportedRegime("analytic AFC efficiency assumes Gaussian teeth; use simulate_echo")
    f = spec.finesse
    d_eff = (spec.peak_od / f) * np.sqrt(np.pi / (4 * np.log(2)))
    return float((-np.expm1(-d_eff)) ** 2 * np.exp(-(1 / f**2) * (np.pi**2 / (2 * np.log(2)))))


@dataclass
class AtomEnsemble:
    detunings: np.ndarray  # kHz
    weights: np.ndarray  # optical depth x kHz
    periodicity: float = float("nan")

    def __post_init__(self):
        self.detunings = np.asarray(self.detunings, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.detunings.shape != self.weights.shape:
            raise ValueError("detunings and weights must have equal length")
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")

    def __len__(self):
        return len(self.detunings)

    def histogram(self, edges):
        """Weight density per kHz on the given bin edges (comparable to d(delta))."""
        h, _ = np.histogram(self.detunings, bins=edges, weights=self.weights)
        return h / np.diff(edges)


def discretize(spec, atoms_per_tooth, rng_seed=None, mode="grid"):
    """Sample the comb into weighted detuning classes.

    Each tooth owns one period cell. ``grid`` places ``atoms_per_tooth``
    cell-centred points symmetric about the tooth; ``random`` draws them
    uniformly (stratified per cell) from ``rng_seed``. Weights are
    d(delta) * cell_width / atoms_per_tooth so the weight sum integrates the
    profile.
    """
    if atoms_per_tooth < 1:
        raise ValueError("atoms_per_tooth must be >= 1")
    n = int(atoms_per_tooth)
    width = spec.periodicity / n
    centers = spec.tooth_centers()
    if mode == "grid":
        offsets = (np.arange(n) + 0.5) * width - 0.5 * spec.periodicity
        det = (centers[:, None] + offsets[None, :]).ravel()
    elif mode == "random":
        rng = np.random.default_rng(rng_seed)
        u = rng.random((len(centers), n))
        det = (centers[:, None] - 0.5 * spec.periodicity + (np.arange(n)[None, :] + u) * width).ravel()
    else:
        raise ValueError(f"unknown discretisation mode {mode!r}")
    return AtomEnsemble(det, build_comb(spec)(det) * width, spec.periodicity)


def ensemble_response(ensemble, tau):
    """Collective response kernel K(tau) in 1/us for lags ``tau`` (us)."""
    tau = np.asarray(tau, dtype=float)
    nu = ensemble.detunings * 1e-3  # MHz
    w = ensemble.weights * 1e-3
    out = np.zeros(tau.shape, dtype=complex)
    for start in range(0, len(nu), 256):
        sl = slice(start, start + 256)
        out += np.exp(-2j * np.pi * np.multiply.outer(tau, nu[sl])) @ w[sl]
    return out


@dataclass
class EchoTrace:
    times: np.ndarray  # us, input pulse centred at 0
    intensity: np.ndarray  # normalised to input peak intensity
    field: np.ndarray = dc_field(repr=False, default=None)
    input_field: np.ndarray = dc_field(repr=False, default=None)
    echo_time_nominal: float = float("nan")

    def window(self, lo, hi):
        return (self.times >= lo) & (self.times <= hi)

    def echo_peak(self, t_echo=None):
        t_echo = self.echo_time_nominal if t_echo is None else t_echo
        sel = self.window(0.5 * t_echo, 1.5 * t_echo)
        k = np.argmax(np.where(sel, self.intensity, -np.inf))
        return float(self.times[k]), float(self.intensity[k])

    def echo_efficiency(self, t_echo=None):
        """Echo energy in the first-echo window over input pulse energy."""
        t_echo = self.echo_time_nominal if t_echo is None else t_echo
        sel = self.window(0.5 * t_echo, 1.5 * t_echo)
        return float(np.sum(np.abs(self.field[sel]) ** 2) / np.sum(np.abs(self.input_field) ** 2))

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])


def simulate_echo(ensemble, input_pulse, horizon=30.0, dt=0.05, amplitude=1.0, pad_factor=8):
    """Transmitted field of a weak probe through the comb ensemble.

    ``input_pulse`` supplies the probe envelope (its ``peak_rabi`` is
    ignored); the probe is centred at t = 0 and the trace runs from
    -duration/2 to ``horizon``.
    """
    if len(ensemble) == 0:
        raise ValueError("ensemble is empty")
    t_echo = 1000.0 / ensemble.periodicity if np.isfinite(ensemble.periodicity) else float("nan")
    if np.isfinite(t_echo) and horizon <= t_echo:
        raise ValueError(f"horizon {horizon} us does not reach the echo at {t_echo} us")
    start = -0.5 * input_pulse.duration
    n = int(np.floor((horizon - start) / dt + 1e-9)) + 1
    times = start + dt * np.arange(n)
    e_in = amplitude * input_pulse.envelope(times - start).astype(complex)

    kernel = ensemble_response(ensemble, dt * np.arange(n))
    kernel[0] *= 0.5  # causal trapezoid at zero lag
    size = 1 << int(np.ceil(np.log2(pad_factor * n)))
    k_hat = np.fft.fft(kernel * dt, size)
    e_out = np.fft.ifft(np.exp(-k_hat) * np.fft.fft(e_in, size))[:n]
    peak_in = np.max(np.abs(e_in) ** 2) or 1.0
    return EchoTrace(times, np.abs(e_out) ** 2 / peak_in, e_out, e_in, t_echo)
