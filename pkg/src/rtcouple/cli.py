"""Command-line front end.

    rtcouple validate <file>
    rtcouple run <file> --out <dir> [--set key=value]...
    rtcouple export-vtk <mff> <out>

Exit codes: 0 success, 2 validation/input failure, 3 simulation abort.
"""

from __future__ import annotations

import argparse
import sys

from .meshfield import MffFormatError, export_vtk, read_mff
from .scenario import (ScenarioError, SimulationAbort, apply_overrides,
                       load_scenario, run_simulation, validate_scenario)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rtcouple",
        description="Scenario-driven reactive-transport runs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario file")
    p.add_argument("file")

    p = sub.add_parser("run", help="run a scenario")
    p.add_argument("file")
    p.add_argument("--out", help="output directory (falls back to "
                   "output.directory in the scenario)")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE",
                   help="dotted-path override applied before validation")

    p = sub.add_parser("export-vtk", help="convert an MFF file to legacy VTK")
    p.add_argument("mff")
    p.add_argument("out")
    return parser


def _cmd_validate(args) -> int:
    try:
        doc = load_scenario(args.file)
    except (ScenarioError, OSError) as exc:
        _report_failure(exc)
        return 2
    diagnostics = validate_scenario(doc)
    for diag in diagnostics:
        print(diag)
    if diagnostics:
        return 2
    print("ok")
    return 0


def _cmd_run(args) -> int:
    try:
        doc = apply_overrides(load_scenario(args.file), args.overrides)
    except (ScenarioError, OSError, ValueError, IndexError, KeyError) as exc:
        _report_failure(exc)
        return 2
    out_dir = args.out or doc.get("output", {}).get("directory")
    if not out_dir:
        print("no output directory: pass --out or set output.directory",
              file=sys.stderr)
        return 2
    diagnostics = validate_scenario(doc)
    if diagnostics:
        for diag in diagnostics:
            print(diag)
        return 2
    try:
        manifest = run_simulation(doc, out_dir, scenario_path=args.file,
                                  overrides=args.overrides)
    except SimulationAbort as exc:
        print(f"simulation aborted: {exc}", file=sys.stderr)
        return 3
    print(f"completed {manifest['steps']} steps -> {out_dir}")
    return 0


def _cmd_export_vtk(args) -> int:
    try:
        export_vtk(read_mff(args.mff), args.out)
    except (MffFormatError, OSError) as exc:
        _report_failure(exc)
        return 2
    print(f"wrote {args.out}")
    return 0


def _report_failure(exc) -> None:
    if isinstance(exc, ScenarioError):
        for diag in exc.diagnostics:
            print(diag)
    else:
        print(exc, file=sys.stderr)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = {"validate": _cmd_validate, "run": _cmd_run,
               "export-vtk": _cmd_export_vtk}[args.command]
    return handler(args)


def cli_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    cli_entry()
