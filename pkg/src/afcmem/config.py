"""Preset loading and construction of typed objects from named entries.

The configuration root holds ``presets.yaml`` and a ``scenarios/`` folder.
It defaults to the packaged data directory and can be redirected with the
``AFCMEM_CONFIG_ROOT`` environment variable.
"""
from __future__ import annotations

import copy
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from . import comb, dd, experiment, pulses, spectra

ENV_ROOT = "AFCMEM_CONFIG_ROOT"
PACKAGE_ROOT = Path(__file__).resolve().parent / "data"


class PresetNotFound(KeyError):
    def __str__(self):
        return str(self.args[0])


def config_root(root=None):
    if root is not None:
        return Path(root)
    env = os.environ.get(ENV_ROOT)
    return Path(env) if env else PACKAGE_ROOT


@dataclass
class Config:
    data: dict
    root: Path

    @classmethod
    def load(cls, root=None):
        r = config_root(root)
        path = r / "presets.yaml"
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        return cls(data, r)

    def section(self, name):
        return self.data.get(name, {})

    def entry(self, section, name):
        sec = self.section(section)
        if name not in sec:
            raise PresetNotFound(f"preset {section}.{name} not found (available: {', '.join(sorted(sec)) or 'none'})")
        return copy.deepcopy(sec[name])

    def has(self, section, name):
        return name in self.section(section)

    def listing(self):
        return {sec: sorted(v) for sec, v in sorted(self.data.items()) if isinstance(v, dict)}

    # -- builders --------------------------------------------------------

    def spin_system(self, name):
        return spectra.SpinSystem.from_mapping(self.entry("spin_systems", name), label=None)

    def field(self, name="zefoz"):
        e = self.entry("fields", name)
        return spectra.MagneticField.normalized(e["magnitude_t"], e["direction"])

    def comb(self, name):
        e = self.entry("combs", name)
        return comb.CombSpec(e["periodicity_khz"], e["tooth_fwhm_khz"], e["bandwidth_khz"], e["peak_od"],
                             e.get("background_od", 0.0), e.get("tooth_shape", "gaussian"))

    def pulse(self, name):
        e = self.entry("pulses", name)
        sweep = e.get("detuning_sweep_khz")
        return pulses.PulseShape(e["family"], e["fwhm_us"], e.get("peak_rabi_khz", 0.0), e.get("duration_us"),
                                 tuple(sweep) if sweep is not None else None, e.get("carrier_phase_rad", 0.0),
                                 e.get("scale", 1.0))

    def line(self, name):
        e = self.entry("lines", name)
        return pulses.InhomogeneousLine(e.get("shape", "gaussian"), e["fwhm_khz"], e.get("rabi_spread", 0.0))

    def noise(self, name):
        e = self.entry("noise", name)
        return dd.NoiseModel(e["kind"], e.get("amplitude_rad_s", 0.0), e.get("correlation_time_s", 1.0),
                             e.get("exponent", 1.0), e.get("cutoff_time_s", 1e-3), e.get("components", 12),
                             e.get("rng_seed", 0))

    def heating(self, name):
        e = self.entry("heating", name)
        if "broadening_per_duty_khz" in e:
            return experiment.HeatingPreset(e["pulse_length_us"], e["broadening_per_duty_khz"], e["echo_delay_us"])
        return experiment.HeatingPreset.calibrated(e["reference_tau_s"], e["reference_factor"],
                                                   e["pulse_length_us"], e["echo_delay_us"])

    def pumping(self, name):
        e = self.entry("pumping", name)
        stages = tuple(
            experiment.PumpStage(s["name"], tuple(tuple(p) for p in s["pumps"]), s["duration_ms"],
                                 float(s.get("cycles", 1)), s.get("wait_ms", 0.0))
            for s in e["stages"])
        return experiment.PumpPreset(stages, e.get("rate_per_ms", 5.0), e.get("excited_lifetime_ms", 1.9),
                                     e.get("branching"), e.get("bandwidth_mhz", 300.0), e.get("threshold", 1e-3))

    def storage_options(self, name):
        e = self.entry("storage", name)
        return experiment.StorageOptions(
            probe=self.pulse(e.get("probe", "probe")),
            atoms_per_tooth=e.get("atoms_per_tooth", 64),
            heating=self.heating(e["heating"]) if e.get("heating") else experiment.HeatingPreset(),
            t_pi=e.get("t_pi_us", 65.1),
            coverage_pulses=e.get("coverage_pulses", 1),
            coverage_model=e.get("coverage_model", "coherent"),
            control_grid=tuple(e.get("control_grid_khz", (-500.0, 500.0, 41))),
            noise_floor=e.get("noise_floor", 1e-6),
        )

    def pipeline(self, name, **overrides):
        e = self.entry("storage", name)
        e.update({k: v for k, v in overrides.items() if v is not None})
        control = self.pulse(e["control"]) if e.get("control") else None
        return experiment.Pipeline(self.comb(e["comb"]), control, self.noise(e["noise"]), self.line(e["line"]),
                                   e.get("family", "cpmg"), e.get("tau_s", 0.1), self.storage_options(name))

    def memory_link(self, name):
        e = self.entry("transport", name)
        return experiment.MemoryLink(e["eta_ref"], e["t_ref_s"], e["lifetime_s"], e.get("decay_model", "amplitude"))
