"""Command-line front end: ``afcmem run|validate|list-presets|dump-config``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from . import constants
from .config import Config, PresetNotFound
from .results import atomic_write_text, json_text
from .scenarios import ScenarioError, list_scenarios, run_scenario


def _cmd_run(args, cfg):
    status = 0
    for name in args.scenario:
        outcome = run_scenario(name, cfg, out_dir=args.out_dir, seed=args.seed, jobs=args.jobs)
        if outcome.status:
            print(f"error: {name}: {outcome.error}", file=sys.stderr)
            status = max(status, outcome.status)
            continue
        for f in outcome.files:
            print(f)
    return status


def _cmd_validate(args, cfg):
    results = constants.validate(constants.REGISTRY, constants.Context(cfg))
    for r in results:
        print(r.line())
    summ = constants.summary(results)
    print(f"{summ['passed']} passed, {summ['failed']} failed, {summ['report_only']} report-only")
    if args.report:
        atomic_write_text(Path(args.report), json_text({"summary": summ, "checks": [r.as_dict() for r in results]}))
    if not summ["ok"]:
        errored = any(r.detail.startswith("error:") for r in results)
        if errored:
            return 1
        if args.strict:
            return 3
        print("warning: validation failures (use --strict to fail)", file=sys.stderr)
    return 0


def _cmd_list(args, cfg):
    for sec, names in cfg.listing().items():
        print(f"{sec}: {', '.join(names)}")
    print(f"scenarios: {', '.join(list_scenarios(cfg))}")
    return 0


def _cmd_dump(args, cfg):
    data = cfg.data
    if args.section:
        data = {s: cfg.section(s) for s in args.section}
    sys.stdout.write(yaml.safe_dump(data, sort_keys=True))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="afcmem", description="Spin-wave AFC memory simulator.")
    p.add_argument("--config-root", default=None, help="directory with presets.yaml and scenarios/ "
                   "(default: $AFCMEM_CONFIG_ROOT or the packaged data)")
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run one or more scenarios (name or path)")
    r.add_argument("scenario", nargs="+")
    r.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    r.add_argument("--jobs", type=int, default=1, help="worker processes")
    r.add_argument("--out-dir", default="results")

    v = sub.add_parser("validate", help="recompute published constants and check tolerances")
    v.add_argument("--strict", action="store_true", help="nonzero exit on any failed check")
    v.add_argument("--report", default=None, help="write a JSON report to this path")

    sub.add_parser("list-presets", help="list preset and scenario names")

    d = sub.add_parser("dump-config", help="print the resolved preset file")
    d.add_argument("section", nargs="*")
    return p


COMMANDS = {"run": _cmd_run, "validate": _cmd_validate, "list-presets": _cmd_list, "dump-config": _cmd_dump}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = Config.load(args.config_root)
    except (OSError, yaml.YAMLError) as exc:
        print(f"error: cannot load configuration: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.verb](args, cfg)
    except (ScenarioError, PresetNotFound) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
