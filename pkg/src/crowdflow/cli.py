"""Command-line front end.

Subcommands:
  run      full simulation of a scenario; writes trajectory.csv,
           pressures.csv, metrics.json into the output directory
  field    fast-marching solve only; exports the distance grid (binary +
           text) for plotting contour levels
  project  one-shot projection solve of a JSON-described constraint
           system, for debugging
  check    scenario validation only

Exit codes: 0 success, 1 validation failure, 2 solver failure, 3 I/O
failure. The CROWDFLOW_OUTDIR environment variable supplies the default
output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .dynamics import StepFailureError, run
from .geometry import ContactConstraint
from .output import (
    PressureWriter,
    TrajectoryWriter,
    write_metrics,
)
from .projection import ConstraintSystem, uzawa_project
from .scenario import (
    PlacementError,
    ScenarioParseError,
    load_scenario,
    validate_scenario,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_SOLVER = 2
EXIT_IO = 3


def _outdir(args) -> Path:
    out = args.outdir or os.environ.get("CROWDFLOW_OUTDIR") or "out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load(args, verbose: bool):
    scenario = load_scenario(args.scenario)
    if getattr(args, "h", None) is not None:
        scenario.params.h = args.h
    if getattr(args, "duration", None) is not None:
        scenario.duration = args.duration
    if getattr(args, "seed", None) is not None:
        scenario.population.seed = args.seed
    if getattr(args, "tol", None) is not None:
        scenario.params.tol = args.tol
    if getattr(args, "cold_start", False):
        scenario.params.warm_start = False
    if getattr(args, "stride", None) is not None:
        scenario.output.stride = args.stride
    if verbose:
        print(f"loaded scenario {scenario.name!r}", file=sys.stderr)
    return scenario


def cmd_check(args) -> int:
    scenario = _load(args, args.verbose)
    report = validate_scenario(scenario)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if not report.ok:
        for violation in report.violations:
            print(f"invalid: {violation}", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"scenario {scenario.name!r} is valid")
    return EXIT_OK


def cmd_field(args) -> int:
    scenario = _load(args, args.verbose)
    if args.dx is not None:
        scenario.field_spec.dx = args.dx
    scenario.field_spec.kind = "geodesic"
    report = validate_scenario(scenario, check_placement=False)
    if not report.ok:
        for violation in report.violations:
            print(f"invalid: {violation}", file=sys.stderr)
        return EXIT_VALIDATION
    grid = scenario.build_distance_grid()
    out = _outdir(args)
    grid.save_binary(out / "distance_grid.bin")
    grid.save_text(out / "distance_grid.txt")
    reachable = ~grid.obstacle & (grid.values < grid.large)
    print(
        f"distance grid {grid.nx}x{grid.ny} (dx={grid.dx:g}) written to {out}; "
        f"max distance {grid.values[reachable].max():.3f} m"
    )
    return EXIT_OK


def cmd_run(args) -> int:
    scenario = _load(args, args.verbose)
    report = validate_scenario(scenario)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if not report.ok:
        for violation in report.violations:
            print(f"invalid: {violation}", file=sys.stderr)
        return EXIT_VALIDATION

    cfg = scenario.initial_configuration()
    velocity_field = scenario.build_field()
    walls = scenario.wall_segments()
    out = _outdir(args)

    traj = TrajectoryWriter(out / "trajectory.csv")
    pres = PressureWriter(out / "pressures.csv")
    try:
        result = run(
            cfg,
            velocity_field,
            walls,
            scenario.exits,
            scenario.params,
            scenario.duration,
            on_frame=lambda fr: (traj.write_frame(fr), pres.write_frame(fr)),
            on_exit=traj.write_exit,
            collect=False,
            stride=scenario.output.stride,
        )
    finally:
        traj.close()
        pres.close()
    write_metrics(
        result.metrics,
        out / "metrics.json",
        extra={"scenario": scenario.name, "solver_backend": kernels.backend_name()},
    )
    m = result.metrics
    evac = f"{m.evacuation_time:.3f} s" if m.evacuation_time is not None else "incomplete"
    print(
        f"{m.n_steps} steps to t={m.final_time:.3f} s; evacuation {evac}; "
        f"{m.n_remaining} remaining; outputs in {out}"
    )
    return EXIT_OK


def cmd_project(args) -> int:
    with open(args.system) as f:
        doc = json.load(f)
    n_disks = int(doc["n_disks"])
    U = np.asarray(doc["spontaneous"], dtype=float).reshape(-1)
    if U.size != 2 * n_disks:
        print("invalid: spontaneous must provide 2 components per disk", file=sys.stderr)
        return EXIT_VALIDATION
    contacts = []
    for k, c in enumerate(doc.get("constraints", [])):
        kind = c["kind"]
        j = int(c["j"]) if kind == "pair" else int(c.get("wall", c.get("j", 0)))
        contacts.append(
            ContactConstraint(
                kind=kind,
                i=int(c["i"]),
                j=j,
                gap=float(c["gap"]),
                normal=np.asarray(c["normal"], dtype=float),
            )
        )
    system = ConstraintSystem(contacts, h=float(doc.get("h", 1.0)), n_disks=n_disks)
    res = uzawa_project(
        system,
        U,
        rho=args.rho if args.rho is not None else doc.get("rho"),
        tol=args.tol if args.tol is not None else doc.get("tol"),
        max_iter=args.max_iter or int(doc.get("max_iter", 100_000)),
    )
    out = {
        "u": res.u.reshape(-1, 2).tolist(),
        "lam": res.lam.tolist(),
        "iterations": res.iterations,
        "status": res.status,
        "primal_residual": res.primal_residual,
        "complementarity": res.complementarity,
        "stationarity": res.stationarity,
        "rho": res.rho,
    }
    text = json.dumps(out, indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n")
    else:
        print(text)
    if not res.converged:
        print(f"solver failed: {res.status}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdflow",
        description="Hard-disk crowd simulation with projected velocities.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        if scenario:
            p.add_argument("scenario", help="scenario YAML file")
        p.add_argument("-v", "--verbose", action="store_true")

    p_run = sub.add_parser("run", help="run a full simulation")
    common(p_run)
    p_run.add_argument("--h", type=float, help="override step h (s)")
    p_run.add_argument("-T", "--duration", type=float, help="override horizon T (s)")
    p_run.add_argument("--seed", type=int, help="override placement seed")
    p_run.add_argument("--tol", type=float, help="override solver tolerance")
    p_run.add_argument("--cold-start", action="store_true", help="disable multiplier warm start")
    p_run.add_argument("--stride", type=int, help="frame emission stride")
    p_run.add_argument("-o", "--outdir", help="output directory")

    p_field = sub.add_parser("field", help="solve and export the distance grid only")
    common(p_field)
    p_field.add_argument("--dx", type=float, help="override grid spacing (m)")
    p_field.add_argument("-o", "--outdir", help="output directory")

    p_proj = sub.add_parser("project", help="one-shot projection solve from a JSON file")
    p_proj.add_argument("system", help="JSON system description")
    p_proj.add_argument("--rho", type=float)
    p_proj.add_argument("--tol", type=float)
    p_proj.add_argument("--max-iter", type=int)
    p_proj.add_argument("--output", help="write the result JSON here instead of stdout")
    p_proj.add_argument("-v", "--verbose", action="store_true")

    p_check = sub.add_parser("check", help="validate a scenario")
    common(p_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "run": cmd_run,
        "field": cmd_field,
        "project": cmd_project,
        "check": cmd_check,
    }
    try:
        return handlers[args.command](args)
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ScenarioParseError, PlacementError, json.JSONDecodeError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StepFailureError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
