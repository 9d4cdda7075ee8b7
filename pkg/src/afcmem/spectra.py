"""Hyperfine level structure of a rare-earth nuclear spin in a static field.

The effective Hamiltonian acting on the 2I+1 manifold is

    H = B . M . I + I . Q . I

with the Zeeman tensor M in MHz/T and the traceless quadrupole tensor Q in
MHz, so eigenvalues come out in MHz. Levels are labelled 1..2I+1 in
ascending energy.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

DEFAULT_FD_STEP = 1e-5  # tesla


class SpinSystemError(ValueError):
    pass


def spin_matrices(spin):
    """Return (Ix, Iy, Iz) for angular momentum ``spin`` in the |m> basis,
    m running from +spin down to -spin."""
    dim = int(round(2 * spin + 1))
    if abs(dim - (2 * spin + 1)) > 1e-12 or dim < 2:
        raise SpinSystemError(f"spin must be a positive half-integer, got {spin}")
    m = spin - np.arange(dim)
    # <m+1|I+|m> = sqrt(I(I+1) - m(m+1))
    plus = np.diag(np.sqrt(spin * (spin + 1) - m[1:] * (m[1:] + 1)), k=1).astype(complex)
    minus = plus.conj().T
    ix = 0.5 * (plus + minus)
    iy = -0.5j * (plus - minus)
    iz = np.diag(m).astype(complex)
    return ix, iy, iz


@dataclass(frozen=True)
class SpinSystem:
    spin_quantum_number: float
    zeeman_tensor: np.ndarray
    quadrupole_tensor: np.ndarray
    label: str = "ground"

    def __post_init__(self):
        m = np.asarray(self.zeeman_tensor, dtype=float).reshape(3, 3)
        q = np.asarray(self.quadrupole_tensor, dtype=float).reshape(3, 3)
        object.__setattr__(self, "zeeman_tensor", m)
        object.__setattr__(self, "quadrupole_tensor", q)
        for name, t in (("zeeman_tensor", m), ("quadrupole_tensor", q)):
            scale = max(np.max(np.abs(t)), 1e-300)
            if np.max(np.abs(t - t.T)) > 1e-12 * scale:
                raise SpinSystemError(f"{name} is not symmetric")
        if np.any(q) and abs(np.trace(q)) > 1e-9 * np.max(np.abs(q)):
            raise SpinSystemError("quadrupole_tensor must be traceless")
        if self.label not in ("ground", "excited"):
            raise SpinSystemError(f"label must be ground|excited, got {self.label!r}")
        spin_matrices(self.spin_quantum_number)

    @property
    def dim(self):
        return int(round(2 * self.spin_quantum_number + 1))

    def rotated(self, rotation):
        """Tensors expressed after rotating the crystal by ``rotation``."""
        r = np.asarray(rotation, dtype=float)
        return SpinSystem(self.spin_quantum_number, r @ self.zeeman_tensor @ r.T,
                          r @ self.quadrupole_tensor @ r.T, self.label)

    @classmethod
    def from_mapping(cls, data, label=None):
        return cls(
            spin_quantum_number=float(data["spin"]),
            zeeman_tensor=np.asarray(data["zeeman_tensor"], dtype=float),
            quadrupole_tensor=np.asarray(data["quadrupole_tensor"], dtype=float),
            label=label or data.get("label", "ground"),
        )

    def to_mapping(self):
        return {
            "spin": float(self.spin_quantum_number),
            "label": self.label,
            "frame": ["D1", "D2", "b"],
            "zeeman_tensor": self.zeeman_tensor.tolist(),
            "quadrupole_tensor": self.quadrupole_tensor.tolist(),
        }


@dataclass(frozen=True)
class MagneticField:
    magnitude: float
    direction: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if self.magnitude < 0:
            raise ValueError("field magnitude must be >= 0")
        n = np.linalg.norm(d)
        if n == 0:
            raise ValueError("field direction must be non-zero")
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"field direction must have unit norm, got {n}")
        object.__setattr__(self, "direction", tuple(float(x) for x in d))

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=float)
        mag = float(np.linalg.norm(vec))
        if mag == 0:
            return cls(0.0)
        return cls(mag, tuple(vec / mag))

    @classmethod
    def normalized(cls, magnitude, direction):
        d = np.asarray(direction, dtype=float)
        return cls(float(magnitude), tuple(d / np.linalg.norm(d)))

    @classmethod
    def from_spherical(cls, magnitude, polar, azimuth):
        d = (np.sin(polar) * np.cos(azimuth), np.sin(polar) * np.sin(azimuth), np.cos(polar))
        return cls.normalized(magnitude, d)

    @property
    def vector(self):
        return self.magnitude * np.asarray(self.direction)

    def spherical(self):
        x, y, z = self.direction
        return self.magnitude, float(np.arccos(np.clip(z, -1, 1))), float(np.arctan2(y, x))


@dataclass(frozen=True)
class LevelStructure:
    energies: np.ndarray
    eigenvectors: np.ndarray
    state_label: str

    def gap(self, i, j):
        """Transition frequency between 1-based levels i and j (MHz)."""
        return abs(float(self.energies[j - 1] - self.energies[i - 1]))

    def neighbour_gaps(self):
        return np.diff(self.energies)


@dataclass
class Transition:
    level_i: int
    level_j: int
    frequency: float
    s1: np.ndarray
    degenerate: bool = False


@dataclass
class TransitionTable:
    transitions: list
    field: MagneticField = None

    def __iter__(self):
        return iter(self.transitions)

    def __len__(self):
        return len(self.transitions)

    def get(self, i, j):
        a, b = sorted((i, j))
        for t in self.transitions:
            if (t.level_i, t.level_j) == (a, b):
                return t
        raise KeyError((i, j))

    def frequency(self, i, j):
        return self.get(i, j).frequency

    def s1(self, i, j):
        return self.get(i, j).s1


def hamiltonian(system, field_vector):
    """Assemble H (MHz) for a field vector in tesla."""
    ix, iy, iz = spin_matrices(system.spin_quantum_number)
    ops = (ix, iy, iz)
    b_m = np.asarray(field_vector, dtype=float) @ system.zeeman_tensor
    h = sum(b_m[k] * ops[k] for k in range(3))
    q = system.quadrupole_tensor
    for a in range(3):
        for b in range(3):
            if q[a, b] != 0.0:
                h = h + q[a, b] * (ops[a] @ ops[b])
    return h


def _eigh(system, field_vector):
    h = hamiltonian(system, field_vector)
    scale = max(np.max(np.abs(h)), 1.0)
    if np.max(np.abs(h - h.conj().T)) > 1e-10 * scale:
        raise SpinSystemError("assembled Hamiltonian is not Hermitian; tensors corrupted?")
    try:
        return np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise SpinSystemError(f"eigensolver did not converge: {exc}") from exc


def level_structure(system, field):
    """Eigen-decomposition of the spin Hamiltonian in ``field``."""
    energies, vecs = _eigh(system, field.vector)
    return LevelStructure(energies, vecs, system.label)


def _energies(system, field_vector):
    return _eigh(system, field_vector)[0]


def energy_gradients(system, field_vector, step=DEFAULT_FD_STEP, richardson=False):
    """Central-difference dE_k/dB_a, shape (dim, 3), MHz/T."""
    b = np.asarray(field_vector, dtype=float)
    grads = np.empty((system.dim, 3))

    def central(h):
        out = np.empty((system.dim, 3))
        for a in range(3):
            e = np.zeros(3)
            e[a] = h
            out[:, a] = (_energies(system, b + e) - _energies(system, b - e)) / (2 * h)
        return out

    grads = central(step)
    if richardson:
        grads = (4 * central(step / 2) - grads) / 3
    return grads


def hellmann_feynman_gradients(system, field_vector):
    """Analytic dE_k/dB_a = <k| sum_b M_ab I_b |k> for non-degenerate levels."""
    energies, vecs = _eigh(system, field_vector)
    ops = spin_matrices(system.spin_quantum_number)
    # expectation values <k|I_b|k>
    expect = np.stack([np.real(np.einsum("ik,ij,jk->k", vecs.conj(), op, vecs)) for op in ops], axis=1)
    return expect @ system.zeeman_tensor.T


def transition_frequencies(levels, system, field, step=DEFAULT_FD_STEP, richardson=False, tol=1e-9):
    """All pairwise transitions (i < j) with S1 = grad_B f_ij in MHz/T.

    S1 is taken by central finite differences of the sorted energies, so it
    remains defined for degenerate pairs; those are flagged instead.
    """
    grads = energy_gradients(system, field.vector, step=step, richardson=richardson)
    out = []
    n = len(levels.energies)
    for i, j in itertools.combinations(range(n), 2):
        f = float(levels.energies[j] - levels.energies[i])
        out.append(Transition(i + 1, j + 1, abs(f), grads[j] - grads[i], degenerate=abs(f) < tol))
    return TransitionTable(out, field)


def transition_frequency(system, pair, field_vector):
    i, j = pair
    e = _energies(system, field_vector)
    return float(e[j - 1] - e[i - 1])


def transition_gradient(system, pair, field_vector, step=DEFAULT_FD_STEP):
    i, j = pair
    g = energy_gradients(system, field_vector, step=step)
    return g[j - 1] - g[i - 1]


def transition_hessian(system, pair, field_vector, step=DEFAULT_FD_STEP * 10):
    """Second-order Zeeman coefficient S2 (MHz/T^2) by central differences of S1."""
    b = np.asarray(field_vector, dtype=float)
    hess = np.empty((3, 3))
    for a in range(3):
        e = np.zeros(3)
        e[a] = step
        hess[:, a] = (transition_gradient(system, pair, b + e) - transition_gradient(system, pair, b - e)) / (2 * step)
    return 0.5 * (hess + hess.T)


@dataclass
class ZefozOptions:
    tolerance: float = 1e-3  # MHz/T
    min_magnitude: float = 0.05  # T
    max_iterations: int = 4000
    fd_step: float = DEFAULT_FD_STEP


@dataclass
class ZefozResult:
    field: MagneticField
    s1_norm: float
    s2: np.ndarray
    converged: bool
    iterations: int = 0
    frequency: float = float("nan")


def minimize_gradient_norm(frequency_fn, initial_field, opts=None, hessian=True):
    """Derivative-free search for a stationary point of ``frequency_fn(B)``.

    The field is parameterised as (magnitude, polar, azimuth); ||grad f||^2 is
    minimised with a bounded Nelder-Mead simplex so the magnitude stays above
    ``opts.min_magnitude``.
    """
    opts = opts or ZefozOptions()
    h = opts.fd_step

    def grad(bvec):
        g = np.empty(3)
        for a in range(3):
            e = np.zeros(3)
            e[a] = h
            g[a] = (frequency_fn(bvec + e) - frequency_fn(bvec - e)) / (2 * h)
        return g

    def hess(bvec):
        hs = 10 * h
        out = np.empty((3, 3))
        for a in range(3):
            e = np.zeros(3)
            e[a] = hs
            out[:, a] = (grad(bvec + e) - grad(bvec - e)) / (2 * hs)
        return 0.5 * (out + out.T)

    def field_of(x):
        return MagneticField.from_spherical(x[0], x[1], x[2])

    g0 = float(np.linalg.norm(grad(initial_field.vector)))
    if g0 <= opts.tolerance:
        s2 = hess(initial_field.vector) if hessian else np.full((3, 3), np.nan)
        return ZefozResult(initial_field, g0, s2, True, 0, float(frequency_fn(initial_field.vector)))

    def objective(x):
        return float(np.sum(grad(field_of(x).vector) ** 2))

    mag, pol, azi = initial_field.spherical()
    # keep the simplex off the coordinate singularity at the poles
    x0 = np.array([max(mag, opts.min_magnitude), pol, azi])
    best_x, best_val, nit = x0, objective(x0), 0
    for _ in range(4):
        res = optimize.minimize(
            objective, best_x, method="Nelder-Mead",
            bounds=[(opts.min_magnitude, None), (None, None), (None, None)],
            options={"maxiter": opts.max_iterations, "xatol": 1e-10, "fatol": 1e-16, "adaptive": True},
        )
        nit += res.nit
        if res.fun < best_val:
            improved = best_val - res.fun
            best_x, best_val = res.x, res.fun
            if np.sqrt(best_val) <= opts.tolerance * 1e-3 or improved <= 1e-18:
                break
        else:
            break
        if nit >= opts.max_iterations:
            break
    best = field_of(best_x)
    s1 = float(np.linalg.norm(grad(best.vector)))
    s2 = hess(best.vector) if hessian else np.full((3, 3), np.nan)
    converged = s1 <= opts.tolerance
    if not converged:
        warnings.warn(f"ZEFOZ search stopped with |S1| = {s1:.3g} MHz/T after {nit} iterations", RuntimeWarning)
    return ZefozResult(best, s1, s2, converged, nit, float(frequency_fn(best.vector)))


def find_zefoz(system, transition, initial_field, search_opts=None):
    """Locate a zero-first-order-Zeeman point of transition (i, j)."""
    i, j = transition
    if i == j:
        raise ValueError("transition needs two distinct levels")
    if initial_field.magnitude == 0:
        raise ValueError("initial field must be non-zero")
    f0 = abs(transition_frequency(system, (i, j), initial_field.vector))
    if f0 < 1e-9:
        raise ValueError(f"transition {i}<->{j} is degenerate at the initial field")

    def freq(bvec):
        return transition_frequency(system, (i, j), bvec)

    res = minimize_gradient_norm(freq, initial_field, search_opts)
    res.frequency = abs(res.frequency)
    return res


def sweep_levels(system, fields):
    """Level energies along a field path, relabelled by eigenvector overlap.

    At exact crossings ascending order is ambiguous; following each state by
    maximum overlap with the previous step keeps labels continuous.
    """
    energies = []
    prev = None
    for f in fields:
        e, v = _eigh(system, f.vector)
        if prev is not None:
            overlap = np.abs(prev.conj().T @ v) ** 2
            rows, cols = optimize.linear_sum_assignment(-overlap)
            order = cols[np.argsort(rows)]
            e, v = e[order], v[:, order]
        energies.append(e)
        prev = v
    return np.array(energies)


@dataclass
class RHDSpectrum:
    frequencies: np.ndarray
    signal: np.ndarray
    peaks: list = field(default_factory=list)
    empty: bool = False


def lorentzian(x, center, fwhm, height=1.0):
    hw = 0.5 * fwhm
    return height * hw**2 / ((x - center) ** 2 + hw**2)


def rhd_scan(levels, rf_range, step, linewidth, amplitudes=None):
    """Phenomenological pulsed Raman-heterodyne spectrum.

    Each transition inside ``rf_range`` (MHz) contributes a Lorentzian of
    FWHM ``linewidth`` (kHz) with peak height equal to its amplitude weight.
    ``amplitudes`` maps (i, j) pairs to weights; missing pairs default to 1.
    """
    lo, hi = rf_range
    if not hi > lo:
        raise ValueError("rf_range must be ordered (lo < hi)")
    if step <= 0 or linewidth <= 0:
        raise ValueError("step and linewidth must be positive")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    freqs = lo + step * np.arange(n)
    signal = np.zeros(n)
    amplitudes = amplitudes or {}
    peaks = []
    e = levels.energies
    for i, j in itertools.combinations(range(len(e)), 2):
        f = float(e[j] - e[i])
        if lo <= f <= hi:
            w = float(amplitudes.get((i + 1, j + 1), amplitudes.get((j + 1, i + 1), 1.0)))
            peaks.append((i + 1, j + 1, f, w))
            if w:
                signal += lorentzian(freqs, f, linewidth * 1e-3, w)
    empty = not peaks
    if empty:
        warnings.warn(f"no transitions inside {lo}-{hi} MHz", RuntimeWarning)
    return RHDSpectrum(freqs, signal, peaks, empty)
