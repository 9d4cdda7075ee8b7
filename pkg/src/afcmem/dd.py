"""Dynamical decoupling under classical dephasing noise.

Conventions: times in seconds, angular frequencies in rad/s. A spin picks up
phase phi = int s(t) dw(t) dt where the switching function s(t) = +-1 flips
at every pi pulse. For Gaussian noise with two-sided spectral density

    S(w) = int C(t) exp(i w t) dt,

the coherence is W(T) = exp(-chi) with

    chi = (1 / 2 pi) int_0^inf S(w) |F(w)|^2 dw,   F(w) = int_0^T s(t) exp(i w t) dt.

``|F|^2`` is normalised so free evolution gives 4 sin^2(wT/2) / w^2 (-> T^2).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from dataclasses import field as dc_field

import numpy as np
from scipy import integrate, optimize, signal

from .pulses import KHZ_TO_RAD_PER_US, InhomogeneousLine, _rotate

KDD_PHASES = np.array([np.pi / 6, 0.0, np.pi / 2, 0.0, np.pi / 6])


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class DDSequence:
    times: np.ndarray
    phases: np.ndarray
    tau: float
    total_duration: float
    family: str

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "phases", np.asarray(self.phases, dtype=float))
        if len(t) != len(self.phases):
            raise ValueError("times and phases must have equal length")
        if len(t) and (np.any(np.diff(t) <= 0) or t[0] <= 0 or t[-1] >= self.total_duration):
            raise ValueError("pulse times must be strictly increasing inside (0, T)")

    @property
    def n_pulses(self):
        return len(self.times)

    def boundaries(self):
        return np.concatenate([[0.0], self.times, [self.total_duration]])

    def signs(self):
        """Switching-function value on each free-evolution segment."""
        return (-1.0) ** np.arange(self.n_pulses + 1)

    def grid_quantum(self, rtol=1e-9):
        """Largest q with every boundary an integer multiple of q, if tau/2 works."""
        q = 0.5 * self.tau
        n = self.boundaries() / q
        if np.all(np.abs(n - np.round(n)) <= rtol * np.maximum(n, 1)):
            return q
        return None


def generate_sequence(family, tau, n_pulses):
    """CPMG-timed train: first pulse at tau/2, then every tau; T = n tau."""
    if n_pulses < 1:
        raise ValueError("n_pulses must be >= 1")
    if tau <= 0:
        raise ValueError("tau must be positive")
    times = tau * (np.arange(n_pulses) + 0.5)
    if family == "cpmg" or family == "free":
        phases = np.zeros(n_pulses)
    elif family == "kddx":
        if n_pulses % 5:
            raise ValueError("kddx needs a multiple of 5 pulses")
        phases = np.tile(KDD_PHASES, n_pulses // 5)
    else:
        raise ValueError(f"unknown sequence family {family!r}")
    return DDSequence(times, phases, tau, n_pulses * tau, family)


def free_evolution(duration):
    """Ramsey layout (no pulses)."""
    return DDSequence(np.zeros(0), np.zeros(0), 2.0 * duration, duration, "free")


def hahn_echo(duration):
    return generate_sequence("free", duration, 1)


def sequence_dump(seq):
    """Rows (time_s, phase_rad)."""
    return list(zip(seq.times.tolist(), seq.phases.tolist()))


def filter_function(seq, omega):
    """|F(w)|^2 (s^2) of the pure-dephasing switching function."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    b = seq.boundaries()
    mid = 0.5 * (b[1:] + b[:-1])
    length = np.diff(b)
    s = seq.signs()
    out = np.empty(omega.shape)
    for start in range(0, len(omega), 512):
        w = omega[start:start + 512, None]
        seg = np.exp(1j * w * mid) * length * np.sinc(w * length / (2 * np.pi))
        out[start:start + 512] = np.abs(seg @ s) ** 2
    return out


def _jumps(seq, q):
    """Integer grid positions and amplitudes of A(w) = sum_n J_n exp(i w n q)."""
    b = np.round(seq.boundaries() / q).astype(np.int64)
    s = seq.signs()
    amp = np.empty(len(b))
    amp[0] = -s[0]
    amp[1:-1] = s[:-1] - s[1:]
    amp[-1] = s[-1]
    return b, amp


# -- noise ------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    """Stationary Gaussian frequency noise.

    ``ornstein_uhlenbeck``: rms ``amplitude`` (rad/s), ``correlation_time`` (s).
    ``white``: the zero-correlation limit with flat S = 2 amplitude^2 correlation_time.
    ``power_law``: ``components`` OU processes with log-spaced correlation
    times between ``cutoff_time`` and ``correlation_time`` weighted so that
    S ~ w^-exponent in between; ``amplitude`` is the total rms.
    """

    kind: str = "ornstein_uhlenbeck"
    amplitude: float = 0.0
    correlation_time: float = 1.0
    exponent: float = 1.0
    cutoff_time: float = 1e-3
    components: int = 12
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("ornstein_uhlenbeck", "white", "power_law"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.correlation_time <= 0:
            raise ValueError("correlation_time must be > 0")
        if self.kind == "power_law" and not (0 < self.cutoff_time < self.correlation_time):
            raise ValueError("power_law needs 0 < cutoff_time < correlation_time")

    def ou_components(self):
        """List of (variance, correlation_time) pairs."""
        if self.kind == "ornstein_uhlenbeck":
            return [(self.amplitude**2, self.correlation_time)]
        if self.kind == "power_law":
            taus = np.geomspace(self.cutoff_time, self.correlation_time, self.components)
            w = taus ** (self.exponent - 1.0)
            w = self.amplitude**2 * w / w.sum()
            return list(zip(w.tolist(), taus.tolist()))
        return []

    @property
    def white_level(self):
        return 2 * self.amplitude**2 * self.correlation_time if self.kind == "white" else 0.0

    def psd(self, omega):
        omega = np.asarray(omega, dtype=float)
        out = np.full(omega.shape, self.white_level)
        for var, tc in self.ou_components():
            out = out + 2 * var * tc / (1 + (omega * tc) ** 2)
        return out

    def correlation(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        out = np.zeros(t.shape)
        for var, tc in self.ou_components():
            out = out + var * np.exp(-t / tc)
        return out

    def longest_time(self):
        comps = self.ou_components()
        return max(tc for _, tc in comps) if comps else 0.0

    def periodized_psd_over_w2(self, omega, period):
        """sum_m S(w + m P) / (w + m P)^2 in closed form (w not a multiple of P)."""
        x = np.pi * omega / period
        inv_sq = (np.pi / period) ** 2 / np.sin(x) ** 2
        out = self.white_level * inv_sq
        for var, tc in self.ou_components():
            a = 2 * np.pi / (period * tc)
            lor = (np.pi / (period * tc)) * np.sinh(a) / (np.cosh(a) - np.cos(2 * x)) if a < 700 else \
                (np.pi / (period * tc)) * np.ones_like(x)
            out = out + 2 * var * tc * (inv_sq - tc**2 * lor)
        return out


def dephasing_exponent(seq, noise, rtol=1e-10, max_points=1 << 24):
    """chi(T) = (1/2pi) int_0^inf S |F|^2 dw.

    For boundaries on a common grid q the numerator |A(w)|^2 = w^2 |F(w)|^2
    is periodic with P = 2 pi / q, so the integral folds onto one period
    against the periodised S(w)/w^2. The folded integrand is analytic and
    periodic; the trapezoid rule is refined by doubling until two successive
    estimates agree to ``rtol``.
    """
    if noise.amplitude == 0:
        return 0.0
    q = seq.grid_quantum()
    if q is None:
        return _dephasing_exponent_direct(seq, noise, rtol)
    period = 2 * np.pi / q
    pos, amp = _jumps(seq, q)
    f0 = float(np.dot(seq.signs(), np.diff(seq.boundaries())))
    s0 = float(noise.psd(0.0))
    n_corr = int(np.ceil(40 * noise.longest_time() / q))
    m = 1 << int(np.ceil(np.log2(2 * (pos[-1] + n_corr) + 16)))
    prev = None
    while m <= max_points:
        a = np.zeros(m, dtype=complex)
        np.add.at(a, pos % m, amp)
        a_w = np.fft.ifft(a) * m  # sum_n J_n exp(+2 pi i j n / m)
        w = np.arange(m) * period / m
        h = np.empty(m)
        h[0] = s0 * f0**2
        h[1:] = np.abs(a_w[1:]) ** 2 * noise.periodized_psd_over_w2(w[1:], period)
        est = 0.5 * (period / m) * np.sum(h) / (2 * np.pi)
        if prev is not None and abs(est - prev) <= rtol * abs(est) + 1e-300:
            return float(est)
        prev = est
        m *= 2
    raise QuadratureError("filter-function quadrature did not converge; check noise parameters")


def _dephasing_exponent_direct(seq, noise, rtol):
    wmax = 200 * np.pi * max(1, seq.n_pulses + 1) / seq.total_duration
    f = lambda w: float(noise.psd(w) * filter_function(seq, w)[0])
    val, err = integrate.quad(f, 0, wmax, limit=2000, epsrel=rtol)
    # |F|^2 averages to (sum of squared jumps)/w^2 at high frequency
    jumps2 = 2 + 4 * seq.n_pulses
    tail, _ = integrate.quad(lambda w: float(noise.psd(w)) * jumps2 / w**2, wmax, np.inf)
    if not np.isfinite(val) or err > 1e3 * rtol * max(abs(val), 1e-300):
        raise QuadratureError("filter-function quadrature did not converge")
    return (val + tail) / (2 * np.pi)


def coherence(seq, noise):
    return float(np.exp(-dephasing_exponent(seq, noise)))


# -- lifetime fits -----------------------------------------------------------


@dataclass
class LifetimeFit:
    lifetime: float
    stretch: float
    covariance: np.ndarray
    model: str
    bounded: bool = True


def _stretched(t, tl, beta):
    return np.exp(-(t / tl) ** beta)


def fit_lifetime(durations, coherence_values, model="exponential"):
    """Least-squares fit of exp(-(t/T)^beta); beta = 1 for ``exponential``.

    Durations are rescaled by their maximum before fitting so the result is
    scale-equivariant. Non-decaying data come back with ``bounded=False``.
    Noisy values outside (0, 1] are fitted as given.
    """
    t = np.asarray(durations, dtype=float)
    c = np.asarray(coherence_values, dtype=float)
    if len(t) < 4:
        raise ValueError("need at least 4 points")
    if not np.all(np.isfinite(t)) or not np.all(np.isfinite(c)) or np.all(c <= 0):
        raise ValueError("durations and coherence values must be finite with some positive coherence")
    if model not in ("exponential", "stretched"):
        raise ValueError(f"unknown model {model!r}")
    scale = float(np.max(t))
    x = t / scale
    # measured points may scatter above 1 or below 0; only (0, 1) seeds the guess
    nonflat = (c < 1 - 1e-12) & (c > 0)
    if not np.any(c < 1 - 1e-12):
        return LifetimeFit(float("inf"), 1.0, np.full((2, 2), np.inf), model, bounded=False)
    y = -np.log(c[nonflat])
    if model == "exponential":
        tl0 = float(np.sum(x[nonflat] ** 2) / np.sum(x[nonflat] * y))
        fn = lambda xx, tl: _stretched(xx, tl, 1.0)
        p0 = [tl0]
    else:
        good = nonflat & (x > 0)
        if np.count_nonzero(good) >= 2:
            slope, icpt = np.polyfit(np.log(x[good]), np.log(-np.log(c[good])), 1)
            beta0 = float(np.clip(slope, 0.2, 5.0))
            tl0 = float(np.exp(-icpt / beta0)) if slope > 0 else 1.0
        else:
            beta0, tl0 = 1.0, 1.0
        fn = _stretched
        p0 = [tl0, beta0]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            popt, pcov = optimize.curve_fit(fn, x, c, p0=p0, method="lm", xtol=1e-15, ftol=1e-15,
                                            gtol=1e-15, maxfev=20000)
    except (RuntimeError, ValueError):
        return LifetimeFit(float("inf"), float("nan"), np.full((2, 2), np.inf), model, bounded=False)
    tl = abs(float(popt[0])) * scale
    beta = float(popt[1]) if model == "stretched" else 1.0
    cov = np.zeros((2, 2))
    k = len(popt)
    cov[:k, :k] = pcov
    cov[0, :] *= scale
    cov[:, 0] *= scale
    bounded = bool(np.isfinite(tl) and tl < 1e6 * scale)
    return LifetimeFit(tl if bounded else float("inf"), beta, cov, model, bounded)


@dataclass
class CoherenceDecay:
    durations: np.ndarray
    coherence: np.ndarray
    fit: LifetimeFit | None = None
    stderr: np.ndarray | None = None
    family: str = "cpmg"
    tau: float = float("nan")

    @property
    def lifetime(self):
        return self.fit.lifetime if self.fit else float("nan")

    @property
    def stretch(self):
        return self.fit.stretch if self.fit else float("nan")


def sequence_for(family, tau, duration):
    """Sequence of total length ``duration``; ``free`` means a Hahn echo."""
    if family == "free":
        return hahn_echo(duration)
    n = int(round(duration / tau))
    if family == "kddx":
        n = 5 * max(1, int(round(n / 5)))
    n = max(n, 1)
    if abs(n * tau - duration) > 1e-6 * duration:
        raise ValueError(f"duration {duration} s is not a whole number of {tau} s intervals for {family}")
    return generate_sequence(family, tau, n)


def coherence_decay(family, tau, noise, durations, model="exponential", fit_from=0.0):
    """W(T) on ``durations`` and its lifetime fit (points with T >= ``fit_from``)."""
    d = np.asarray(durations, dtype=float)
    if np.any(d <= 0) or np.any(np.diff(d) <= 0):
        raise ValueError("durations must be positive and ascending")
    w = np.array([coherence(sequence_for(family, tau, T), noise) for T in d])
    sel = d >= fit_from
    fit = None
    if np.count_nonzero(sel) >= 4 and np.all(w[sel] > 0):
        fit = fit_lifetime(d[sel], np.maximum(w[sel], 1e-300), model)
    return CoherenceDecay(d, w, fit, None, family, tau)


def calibrate_amplitude(noise, family, tau, lifetime):
    """Rescale ``noise.amplitude`` so that W(lifetime) = 1/e for the given sequence."""
    unit = NoiseModel(noise.kind, 1.0, noise.correlation_time, noise.exponent, noise.cutoff_time,
                      noise.components, noise.rng_seed)
    chi1 = dephasing_exponent(sequence_for(family, tau, lifetime), unit)
    return NoiseModel(noise.kind, float(1 / np.sqrt(chi1)), noise.correlation_time, noise.exponent,
                      noise.cutoff_time, noise.components, noise.rng_seed)


# -- Monte Carlo oracle --------------------------------------------------------


@dataclass(frozen=True)
class PulseErrorModel:
    """Finite-bandwidth square pi pulses of length ``t_pi`` (us) on a spin
    ensemble drawn from ``line`` (static detuning and drive-amplitude error).

    ``initial_phase`` is the azimuth (rad) of the stored coherence relative to
    the pulse x axis; ``None`` draws it uniformly per trajectory, since the
    spin-wave phase is set by the optical fields and is unrelated to the RF
    phase."""

    line: InhomogeneousLine
    t_pi: float
    initial_phase: float | None = None


@dataclass
class MonteCarloResult:
    coherence: float
    stderr: float
    n_trajectories: int
    phases: np.ndarray = dc_field(repr=False, default=None)


BLOCK = 512


def _ou_step_coeffs(var, tc, h):
    """Exact one-step coefficients for (x_{k+1}, int_k x dt) of an OU process."""
    th = h / tc
    e = np.exp(-th)
    one_m_e = -np.expm1(-th)
    vx = var * one_m_e * (1 + e)
    if th < 1e-3:
        vi = var * tc**2 * (2 * th**3 / 3 - th**4 / 2 + 7 * th**5 / 30)
    else:
        vi = var * tc**2 * (2 * th - 3 + 4 * e - e**2)
    cov = var * tc * one_m_e**2
    l11 = np.sqrt(vx)
    l21 = cov / l11 if l11 > 0 else 0.0
    l22 = np.sqrt(max(vi - l21**2, 0.0))
    return e, tc * one_m_e, l11, l21, l22


def _increments(noise, h, n_steps, n_traj, rng, chunk=4096):
    """Yield arrays (steps, n_traj) of integrated noise over equal steps h."""
    comps = noise.ou_components()
    states = [rng.normal(0.0, np.sqrt(v), n_traj) for v, _ in comps]
    coeffs = [_ou_step_coeffs(v, tc, h) for v, tc in comps]
    white_sd = np.sqrt(noise.white_level * h)
    done = 0
    while done < n_steps:
        k = min(chunk, n_steps - done)
        out = np.zeros((k, n_traj))
        if white_sd:
            out += white_sd * rng.standard_normal((k, n_traj))
        for ci, (e, c, l11, l21, l22) in enumerate(coeffs):
            z = rng.standard_normal((2, k, n_traj))
            xi = l11 * z[0]
            eta = l21 * z[0] + l22 * z[1]
            # x_j for j = 0..k-1 given x_0, then x_{j+1} = e x_j + xi_j
            x, zf = signal.lfilter([1.0], [1.0, -e], xi, axis=0, zi=(e * states[ci])[None, :])
            x_prev = np.vstack([states[ci][None, :], x[:-1]])
            out += c * x_prev + eta
            states[ci] = x[-1]
        done += k
        yield out


def _step_signs(seq, q):
    b = np.round(seq.boundaries() / q).astype(np.int64)
    return np.repeat(seq.signs(), np.diff(b)), b


def monte_carlo_dephasing(seq, noise, n_trajectories=2000, pulse_error_model=None, seed=None,
                          keep_phases=False):
    """Seeded trajectory estimate of |<exp(i phi)>| with its standard error.

    Trajectories run in fixed blocks of ``BLOCK``; block ``b`` draws from
    ``SeedSequence(seed).spawn`` child ``b`` so results do not depend on how
    blocks are scheduled.
    """
    if n_trajectories < 100:
        raise ValueError("need at least 100 trajectories")
    seed = noise.rng_seed if seed is None else seed
    q = seq.grid_quantum()
    if q is None:
        raise ValueError("Monte Carlo needs pulse times on a tau/2 grid")
    n_blocks = -(-n_trajectories // BLOCK)
    children = np.random.SeedSequence(seed).spawn(n_blocks)
    values = []
    for b in range(n_blocks):
        n = min(BLOCK, n_trajectories - b * BLOCK)
        rng = np.random.default_rng(children[b])
        if pulse_error_model is None:
            values.append(_phase_block(seq, noise, q, n, rng))
        else:
            values.append(_pulse_error_block(seq, noise, q, n, rng, pulse_error_model))
    z = np.concatenate(values)
    mean = np.mean(z)
    se = float(np.sqrt((np.var(z.real) + np.var(z.imag)) / len(z)))
    phases = np.angle(z) if keep_phases else None
    return MonteCarloResult(float(abs(mean)), se, len(z), phases)


def _phase_block(seq, noise, q, n, rng):
    signs, b = _step_signs(seq, q)
    phi = np.zeros(n)
    done = 0
    if noise.amplitude == 0:
        return np.ones(n, dtype=complex)
    for inc in _increments(noise, q, len(signs), n, rng):
        k = inc.shape[0]
        phi += signs[done:done + k] @ inc
        done += k
    return np.exp(1j * phi)


def _pulse_error_block(seq, noise, q, n, rng, model):
    """Bloch-vector evolution with imperfect pulses; coherence read as u + i v."""
    delta, eps = model.line.sample(rng, n)
    b = np.round(seq.boundaries() / q).astype(np.int64)
    n_steps = int(b[-1])
    # per-step free-precession angle: noise (rad) + static detuning
    static = 2 * np.pi * delta * 1e3 * q  # delta in kHz, q in s
    if model.initial_phase is None:
        phi0 = rng.uniform(0.0, 2 * np.pi, n)
    else:
        phi0 = np.full(n, float(model.initial_phase))
    r = np.zeros((n, 3))
    r[:, 0], r[:, 1] = np.cos(phi0), np.sin(phi0)
    om = np.pi / model.t_pi * (1 + eps)  # rad/us
    d_rad = KHZ_TO_RAD_PER_US * delta
    gen = np.sqrt(om**2 + d_rad**2)
    angle = gen * model.t_pi
    pulse_at = set(b[1:-1].tolist())
    pulse_idx = 0
    step = 0
    incs = _increments(noise, q, n_steps, n, rng) if noise.amplitude else None
    while step < n_steps:
        if incs is not None:
            inc = next(incs)
        else:
            inc = np.zeros((min(4096, n_steps - step), n))
        for row in inc:
            theta = np.zeros((n, 3))
            theta[:, 2] = row + static
            r = _rotate(r, theta)
            step += 1
            if step in pulse_at:
                ph = seq.phases[pulse_idx]
                axis = np.stack([om * np.cos(ph), om * np.sin(ph), d_rad], axis=1) / gen[:, None]
                r = _rotate(r, axis * angle[:, None])
                pulse_idx += 1
    return (r[:, 0] + 1j * r[:, 1]) * np.exp(-1j * phi0)
