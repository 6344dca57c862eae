"""Command line: ``slagrid run|validate|plan``.

Exit codes: 0 success, 2 invalid input (scenario, class or profile file),
3 failure while running.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from collections.abc import Sequence
from pathlib import Path

import yaml

from ..classfile import load_classes
from ..control.placement import Placer
from ..errors import ScriptError, SlaGridError, ValidationError
from ..model import DatacenterProfile, Tier, validate_class
from ..runtime import HandlerRegistry
from .metrics import report_export
from .runner import run_scenario
from .script import load_script

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


def load_profiles(path: str | Path) -> list[DatacenterProfile]:
    """Datacenter profiles from a YAML list, or a mapping with a ``datacenters`` list."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ScriptError(str(exc), str(path)) from exc
    if isinstance(doc, dict):
        doc = doc.get("datacenters")
    if not isinstance(doc, list) or not doc:
        raise ScriptError("expected a list of datacenter profiles", str(path))
    out = []
    for i, d in enumerate(doc):
        loc = f"{path}[{i}]"
        try:
            out.append(DatacenterProfile(str(d["id"]), Tier(d.get("tier", "edge")), int(d["capacity"]), float(d.get("failure_prob", 0.01))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ScriptError(f"bad datacenter profile ({exc})", loc) from exc
    return out


def _validated(path: str):
    defs = load_classes(path)
    if not defs:
        raise ScriptError("no class documents found", str(path))
    known = {d.name: d for d in defs}
    reg = HandlerRegistry()
    return [validate_class(d, reg, known) for d in defs]


def cmd_run(args: argparse.Namespace) -> int:
    script = load_script(args.scenario)
    if args.seed is not None:
        script = dataclasses.replace(script, seed=args.seed)
    report = run_scenario(script)
    if args.out:
        report_export(report, args.out, args.format)
    else:
        sys.stdout.write(report.to_csv() if args.format == "csv" else report.to_json())
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    for flat in _validated(args.class_file):
        modes = ",".join(sorted(flat.consistency_modes()))
        print(f"{flat.name}: ok ({len(flat.attributes)} attributes, {len(flat.functions)} functions, modes {modes})")
    return EXIT_OK


def cmd_plan(args: argparse.Namespace) -> int:
    placer = Placer(load_profiles(args.dcs))
    plans = [placer.place(flat).as_record() for flat in _validated(args.class_file)]
    print(json.dumps(plans, indent=2, sort_keys=True, default=str))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slagrid", description="SLA-driven object runtime simulator")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario and print or write its metrics")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--format", choices=("csv", "json"), default="csv")
    r.set_defaults(fn=cmd_run)
    v = sub.add_parser("validate", help="check a class file")
    v.add_argument("class_file")
    v.set_defaults(fn=cmd_validate)
    pl = sub.add_parser("plan", help="print the placement plan for a class file")
    pl.add_argument("class_file")
    pl.add_argument("--dcs", required=True, help="datacenter profile file")
    pl.set_defaults(fn=cmd_plan)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ScriptError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SlaGridError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
