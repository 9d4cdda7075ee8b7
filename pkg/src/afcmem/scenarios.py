"""Scenario files: schema checks, sweep expansion and deterministic execution.

A scenario is a YAML mapping::

    id: fig3a_cpmg_sweep
    kind: lifetime_vs_tau
    targets: [dd, experiment]
    presets: {noise: noise.paper_fit, heating: heating.paper}
    params: {...}
    sweep: {tau_s: [0.02, 0.05, 0.1], family: [cpmg, kddx]}
    seed: 1

Sweep axes expand as a cartesian product (empty sweep -> one job). Every job
gets a seed derived from (scenario seed, job index), so serial and parallel
runs write identical files.
"""
from __future__ import annotations

import itertools
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import comb, dd, experiment, spectra
from .config import Config, PresetNotFound
from .results import csv_text, json_text, atomic_write_text

MODULES = ("spectra", "comb", "pulses", "dd", "experiment", "harness")
TOP_KEYS = {"id", "kind", "targets", "presets", "params", "sweep", "seed", "output", "description"}
PRESET_LINKS = {
    "storage": {"comb": "combs", "control": "pulses", "probe": "pulses", "noise": "noise", "line": "lines",
                "heating": "heating"},
    "interference": {"storage": "storage"},
}


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    id: str
    kind: str
    targets: list
    presets: dict
    params: dict
    sweep: dict
    seed: int
    output: str
    source: str = "<memory>"

    def jobs(self):
        axes = list(self.sweep.items())
        if not axes:
            return [{}]
        names = [a for a, _ in axes]
        return [dict(zip(names, combo)) for combo in itertools.product(*[v for _, v in axes])]


@dataclass
class JobResult:
    record: dict
    tables: dict = field(default_factory=dict)  # name -> (header, rows)
    meta: dict = field(default_factory=dict)


# -- parsing ----------------------------------------------------------------


def _line_map(text):
    """Line numbers of top-level keys and of one nested level."""
    lines = {}
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return lines
    if not isinstance(node, yaml.MappingNode):
        return lines
    for k, v in node.value:
        lines[k.value] = k.start_mark.line + 1
        if isinstance(v, yaml.MappingNode):
            for k2, _ in v.value:
                lines[f"{k.value}.{k2.value}"] = k2.start_mark.line + 1
    return lines


def _axis_values(spec):
    if isinstance(spec, list):
        return spec
    if isinstance(spec, dict):
        if {"start", "stop", "num"} <= set(spec):
            return [float(x) for x in np.linspace(spec["start"], spec["stop"], int(spec["num"]))]
        if {"start", "stop", "step"} <= set(spec):
            n = int(np.floor((spec["stop"] - spec["start"]) / spec["step"] + 1e-9)) + 1
            return [float(spec["start"] + i * spec["step"]) for i in range(n)]
    raise TypeError("axis must be a list or a {start, stop, num|step} mapping")


def parse_scenario(text, source="<memory>", cfg=None):
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{source}: invalid YAML: {exc}") from None
    lines = _line_map(text)

    def fail(key, msg):
        line = lines.get(key, lines.get(key.split(".")[0], 0))
        raise ScenarioError(f"{source}:{line}: field '{key}': {msg}")

    if not isinstance(data, dict):
        raise ScenarioError(f"{source}:1: scenario must be a mapping")
    for key in data:
        if key not in TOP_KEYS:
            fail(str(key), f"unknown field (allowed: {', '.join(sorted(TOP_KEYS))})")
    for key in ("id", "kind", "targets"):
        if key not in data:
            raise ScenarioError(f"{source}:1: field '{key}': required field missing")
    if not isinstance(data["id"], str) or not re.fullmatch(r"[A-Za-z0-9_.-]+", data["id"]):
        fail("id", "must be a non-empty identifier [A-Za-z0-9_.-]")
    if data["kind"] not in KINDS:
        fail("kind", f"unknown kind {data['kind']!r} (known: {', '.join(sorted(KINDS))})")
    targets = data["targets"]
    if not isinstance(targets, list) or not targets or any(t not in MODULES for t in targets):
        fail("targets", f"must be a non-empty list drawn from {', '.join(MODULES)}")
    presets = data.get("presets") or {}
    if not isinstance(presets, dict):
        fail("presets", "must map roles to 'section.name' references")
    for role, ref in presets.items():
        if not isinstance(ref, str) or ref.count(".") != 1:
            fail(f"presets.{role}", "reference must look like 'section.name'")
        if cfg is not None:
            sec, name = ref.split(".")
            if not cfg.has(sec, name):
                fail(f"presets.{role}", f"preset {ref} not found")
    params = data.get("params") or {}
    if not isinstance(params, dict):
        fail("params", "must be a mapping")
    sweep_in = data.get("sweep") or {}
    if not isinstance(sweep_in, dict):
        fail("sweep", "must map axis names to value lists")
    sweep = {}
    for axis, spec in sweep_in.items():
        try:
            values = _axis_values(spec)
        except (TypeError, ValueError) as exc:
            fail(f"sweep.{axis}", str(exc))
        if not values:
            fail(f"sweep.{axis}", "axis range is empty")
        sweep[str(axis)] = values
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        fail("seed", "must be a non-negative integer")
    output = data.get("output", data["id"])
    return Scenario(data["id"], data["kind"], list(targets), dict(presets), dict(params), sweep, seed,
                    str(output), source)


def load_scenario(path_or_name, cfg):
    p = Path(path_or_name)
    if not p.exists():
        cand = cfg.root / "scenarios" / f"{path_or_name}.yaml"
        if cand.exists():
            p = cand
        else:
            raise ScenarioError(f"{path_or_name}: no such scenario file or name")
    return parse_scenario(p.read_text(encoding="utf-8"), p.name, cfg)


def list_scenarios(cfg):
    d = cfg.root / "scenarios"
    return sorted(p.stem for p in d.glob("*.yaml")) if d.exists() else []


# -- helpers ----------------------------------------------------------------


def _preset(cfg, scenario, role, section=None):
    if role not in scenario.presets:
        raise ScenarioError(f"{scenario.source}: scenario kind {scenario.kind} needs preset role '{role}'")
    sec, name = scenario.presets[role].split(".")
    if section and sec != section:
        raise ScenarioError(f"{scenario.source}: preset role '{role}' must reference the {section} section")
    return name


def resolved_presets(cfg, scenario):
    out = {}

    def add(sec, name):
        key = f"{sec}.{name}"
        if key in out:
            return
        out[key] = cfg.entry(sec, name)
        for fld, target in PRESET_LINKS.get(sec, {}).items():
            ref = out[key].get(fld)
            if ref:
                add(target, ref)

    for ref in scenario.presets.values():
        add(*ref.split("."))
    return out


def _values(spec):
    return [float(x) for x in _axis_values(spec)]


def job_seed(seed, index):
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


# -- scenario kinds -----------------------------------------------------------


def kind_lifetime_vs_tau(cfg, sc, p, seed):
    noise = cfg.noise(_preset(cfg, sc, "noise", "noise"))
    family, tau = p.get("family", "cpmg"), float(p["tau_s"])
    durations = _values(p["durations_s"])
    decay = dd.coherence_decay(family, tau, noise, durations, p.get("model", "exponential"),
                               p.get("fit_from_s", 0.0))
    rec = {"family": family, "tau_s": tau, "lifetime_s": decay.lifetime, "lifetime_min": decay.lifetime / 60,
           "stretch": decay.stretch, "fit_model": p.get("model", "exponential")}
    if "heating" in sc.presets:
        heat = cfg.heating(_preset(cfg, sc, "heating", "heating"))
        seq = dd.sequence_for(family, tau, durations[0])
        rec["duty_cycle"] = experiment.duty_cycle(seq, heat.pulse_length_us)
        rec["heating_factor"] = experiment.heating_penalty(seq, heat)
    rows = [(t, w, 0.0) for t, w in zip(decay.durations, decay.coherence)]
    return JobResult(rec, {"decay": (["duration_s", "coherence", "stderr"], rows)})


def kind_storage_decay(cfg, sc, p, seed):
    name = _preset(cfg, sc, "storage", "storage")
    pipe = cfg.pipeline(name, family=p.get("family"), tau_s=p.get("tau_s"))
    times = _values(p["storage_times_s"])
    sweep = experiment.storage_sweep(pipe, times, p.get("model", "exponential"), p.get("fit_from_s", 0.0))
    rec = {"family": pipe.family, "tau_s": pipe.tau, "lifetime_s": sweep.fit.lifetime if sweep.fit else float("nan"),
           "lifetime_min": sweep.fit.lifetime / 60 if sweep.fit else float("nan"),
           "eta_total_first": float(sweep.eta_total[0]), "convention": experiment.DECAY_CONVENTION}
    tables = {"decay": (["storage_time_s", "eta_total", "echo_amplitude"],
                        list(zip(sweep.storage_times, sweep.eta_total, sweep.amplitude)))}
    for t in p.get("trace_times_s", []):
        res = pipe.run(float(t))
        tables[f"trace_{int(t)}s"] = (["time_us", "intensity"], list(zip(res.trace.times, res.trace.intensity)))
    return JobResult(rec, tables)


def kind_interference(cfg, sc, p, seed):
    e = cfg.entry("interference", _preset(cfg, sc, "interference", "interference"))
    pipe = cfg.pipeline(e["storage"])
    n = int(p.get("n_phase", 16))
    dphi = 2 * np.pi * np.arange(n) / n
    dtheta = float(p.get("delta_theta_rad", e.get("delta_theta_rad", 0.0)))
    res = experiment.timebin_interference(pipe, dphi, dtheta, float(p["storage_time_s"]),
                                          e.get("background", 0.0), e.get("separation_us", 2.0))
    rec = {"storage_time_s": float(p["storage_time_s"]), "visibility": res.visibility,
           "fidelity": res.fidelity, "phase_offset_rad": res.phase_offset, "residual_rms": res.residual_rms}
    return JobResult(rec, {"fringe": (["delta_phi_rad", "intensity"], list(zip(res.delta_phi, res.intensity)))})


def kind_transition_table(cfg, sc, p, seed):
    field_ = cfg.field(_preset(cfg, sc, "field", "fields"))
    excited = p["excited"]
    system = cfg.spin_system(excited)
    levels = spectra.level_structure(system, field_)
    gaps = np.diff(levels.energies)
    measured = cfg.entry("transition_table", p.get("reference", "measured"))
    rows = []
    for k, g in enumerate(gaps, start=1):
        m = float(measured[k])
        rows.append((f"{k}e-{k + 1}e", m, float(g), float(g) - m))
    lo, hi = p.get("rhd_range_mhz", [124.3, 124.7])
    scan = spectra.rhd_scan(levels, (lo, hi), p.get("rhd_step_mhz", 0.001), p.get("rhd_linewidth_khz", 20.0))
    peak = float(scan.frequencies[np.argmax(scan.signal)]) if not scan.empty else float("nan")
    rec = {"excited": excited, "max_abs_deviation_mhz": max(abs(r[3]) for r in rows),
           "f_3e_6e_mhz": float(levels.energies[5] - levels.energies[2]), "rhd_peak_mhz": peak}
    return JobResult(rec, {"gaps": (["transition", "freq_measured_MHz", "freq_model_MHz", "difference_MHz"], rows),
                           "rhd": (["frequency_MHz", "signal"], list(zip(scan.frequencies, scan.signal)))})


def kind_efficiency_budget(cfg, sc, p, seed):
    case = p["case"]
    c = p["cases"][case]
    b = experiment.decompose_efficiency(c["eta_total"], c["eta_afc"], c["eta_control"])
    rec = {"case": case, **b.as_dict()}
    if "storage" in sc.presets:
        pipe = cfg.pipeline(_preset(cfg, sc, "storage", "storage"), family=c.get("family"))
        res = pipe.run(float(p.get("storage_time_s", 300.0)))
        rec.update({"model_eta_total": res.eta_total, "model_eta_afc": res.budget.eta_afc,
                    "model_eta_control": res.budget.eta_control, "model_eta_spin": res.budget.eta_spin})
    return JobResult(rec)


def kind_transport(cfg, sc, p, seed):
    name = _preset(cfg, sc, "transport", "transport")
    e = cfg.entry("transport", name)
    mem = cfg.memory_link(name)
    length = float(p.get("length_km", e["length_km"]))
    tc = experiment.transport_vs_fiber(mem, experiment.FiberChannel(length, e["loss_db_per_km"]), e["speed_kmh"])
    rec = {"length_km": length, "transit_time_s": tc.transit_time_s, "fiber_transmittance": tc.fiber_transmittance,
           "memory_eta_amplitude": tc.memory_efficiency["amplitude"],
           "memory_eta_intensity": tc.memory_efficiency["intensity"], "decay_model": tc.decay_model,
           "crossover_km": tc.crossover_km}
    if "reference_eta" in p:
        rec["closest_model_to_reference"] = experiment.closest_decay_model(tc, float(p["reference_eta"]))
    return JobResult(rec)


def kind_spin_echo(cfg, sc, p, seed):
    noise = cfg.noise(_preset(cfg, sc, "noise", "noise"))
    durations = _values(p["durations_s"])
    family, tau = p.get("family", "free"), p.get("tau_s")
    decay = dd.coherence_decay(family, tau, noise, durations, p.get("model", "exponential"))
    n_traj = int(p.get("mc_trajectories", 0))
    rows = []
    for i, (t, w) in enumerate(zip(decay.durations, decay.coherence)):
        if n_traj:
            mc = dd.monte_carlo_dephasing(dd.sequence_for(family, tau, t), noise, n_traj, seed=job_seed(seed, i))
            rows.append((t, w, mc.coherence, mc.stderr))
        else:
            rows.append((t, w, float("nan"), float("nan")))
    rec = {"family": family, "lifetime_s": decay.lifetime, "stretch": decay.stretch,
           "fit_model": p.get("model", "exponential")}
    return JobResult(rec, {"decay": (["duration_s", "coherence", "mc_coherence", "mc_stderr"], rows)})


def kind_afc_echo(cfg, sc, p, seed):
    spec = cfg.comb(_preset(cfg, sc, "comb", "combs"))
    if "periodicity_khz" in p:
        period = float(p["periodicity_khz"])
        spec = comb.CombSpec(period, spec.tooth_fwhm * period / spec.periodicity, spec.bandwidth, spec.peak_od,
                             spec.background_od, spec.tooth_shape)
    probe = cfg.pulse(_preset(cfg, sc, "probe", "pulses"))
    ens = comb.discretize(spec, int(p.get("atoms_per_tooth", 64)), seed, p.get("mode", "grid"))
    tr = comb.simulate_echo(ens, probe, float(p.get("horizon_us", 30.0)), float(p.get("dt_us", 0.05)))
    t_peak, i_peak = tr.echo_peak()
    rec = {"periodicity_khz": spec.periodicity, "finesse": spec.finesse, "echo_time_us": t_peak,
           "echo_intensity": i_peak, "eta_simulated": tr.echo_efficiency()}
    if spec.tooth_shape == "gaussian":
        rec["eta_analytic"] = comb.afc_efficiency_analytic(spec)
    return JobResult(rec, {"trace": (["time_us", "intensity"], list(zip(tr.times, tr.intensity)))})


def kind_pumping(cfg, sc, p, seed):
    field_ = cfg.field(_preset(cfg, sc, "field", "fields"))
    lg = spectra.level_structure(cfg.spin_system(p["ground"]), field_)
    le = spectra.level_structure(cfg.spin_system(p["excited"]), field_)
    lam = experiment.prepare_lambda(lg, le, cfg.pumping(_preset(cfg, sc, "pumping", "pumping")))
    rec = {"population_3g": lam.storage_population, "population_4g": lam.spin_residual,
           "noise_risk": lam.noise_risk, "class_selected": lam.class_selected}
    rows = [(f"{i + 1}g", float(x)) for i, x in enumerate(lam.populations_g)]
    return JobResult(rec, {"populations": (["level", "population"], rows)})


KINDS = {
    "lifetime_vs_tau": kind_lifetime_vs_tau,
    "storage_decay": kind_storage_decay,
    "interference": kind_interference,
    "transition_table": kind_transition_table,
    "efficiency_budget": kind_efficiency_budget,
    "transport": kind_transport,
    "spin_echo": kind_spin_echo,
    "afc_echo": kind_afc_echo,
    "pumping": kind_pumping,
}


# -- execution ----------------------------------------------------------------


def _run_job(args):
    root, scenario, index, axes = args
    cfg = Config.load(root)
    params = {**scenario.params, **axes}
    res = KINDS[scenario.kind](cfg, scenario, params, job_seed(scenario.seed, index))
    return {**axes, **res.record}, res.tables


def _job_key(index, axes):
    if not axes:
        return f"{index:03d}"
    parts = [f"{k}={v}" for k, v in axes.items()]
    return f"{index:03d}_" + re.sub(r"[^A-Za-z0-9_.=-]", "_", "_".join(parts))


@dataclass
class RunOutcome:
    status: int
    files: list
    records: list
    error: str | None = None


def run_scenario(scenario, cfg=None, out_dir="results", seed=None, jobs=1):
    """Execute every job of ``scenario`` and write its result files atomically."""
    cfg = cfg or Config.load()
    if isinstance(scenario, (str, Path)):
        scenario = load_scenario(scenario, cfg)
    if seed is not None:
        scenario.seed = int(seed)
    job_axes = scenario.jobs()
    work = [(str(cfg.root), scenario, i, axes) for i, axes in enumerate(job_axes)]
    try:
        if jobs > 1 and len(work) > 1:
            with ProcessPoolExecutor(max_workers=min(jobs, len(work))) as pool:
                outputs = list(pool.map(_run_job, work))
        else:
            outputs = [_run_job(w) for w in work]
    except (ScenarioError, PresetNotFound) as exc:
        return RunOutcome(2, [], [], str(exc))
    except Exception as exc:  # component failure: report, write nothing
        return RunOutcome(1, [], [], f"{type(exc).__name__}: {exc}")

    target = Path(out_dir) / scenario.output
    files = []
    records = [rec for rec, _ in outputs]
    columns = []
    for rec in records:
        for k in rec:
            if k not in columns:
                columns.append(k)
    table_files = {}
    for i, ((rec, tables), axes) in enumerate(zip(outputs, job_axes)):
        key = _job_key(i, axes)
        for name, (header, rows) in sorted(tables.items()):
            fname = f"{name}_{key}.csv"
            files.append(atomic_write_text(target / fname, csv_text(header, rows)))
            table_files.setdefault(key, []).append(fname)
    files.append(atomic_write_text(target / "results.csv",
                                   csv_text(columns, [[rec.get(c, "") for c in columns] for rec in records])))
    summary = {
        "scenario": scenario.id,
        "kind": scenario.kind,
        "targets": scenario.targets,
        "seed": scenario.seed,
        "job_seeds": [job_seed(scenario.seed, i) for i in range(len(job_axes))],
        "params": scenario.params,
        "sweep": scenario.sweep,
        "resolved_presets": resolved_presets(cfg, scenario),
        "conventions": {"decay": experiment.DECAY_CONVENTION, "fit_model": scenario.params.get("model", "exponential")},
        "records": records,
        "tables": table_files,
    }
    files.append(atomic_write_text(target / "summary.json", json_text(summary)))
    return RunOutcome(0, files, records)
