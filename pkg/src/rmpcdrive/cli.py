"""Command-line front end.

Exit codes: 0 all runs clean, 1 a run degraded or collided, 2 usage error,
3 bad input file, 4 a run failed outright, 5 table synthesis failed.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import svg
from .apf import EgoPlanState, PotentialScene, plan_trajectory, quintic_path
from .bench import build_suite, emit_potential_map, run_benchmark
from .controllers import CONTROLLER_NAMES
from .errors import Infeasible, NoFeasibleCandidate, OutOfRoad, ParseError, SolverFailure, ValidationError
from .lmi import default_weights, load_table, save_table
from .scenario import BUNDLED, bundled_all, load_scenario
from .sim import AdhesionProfile, ScenarioSpec, World, choose_target

EXIT_OK = 0
EXIT_DEGRADED = 1
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_RUN_FAILED = 4
EXIT_SYNTHESIS = 5

log = logging.getLogger("rmpcdrive")


def _apply_overrides(spec: ScenarioSpec, args) -> ScenarioSpec:
    if getattr(args, "kappa", None) is not None:
        spec = replace(spec, kappa=args.kappa)
    if getattr(args, "mu", None) is not None:
        spec = replace(spec, adhesion=AdhesionProfile.constant(args.mu))
    return spec


def _weights(args):
    w = default_weights()
    if getattr(args, "du_max", None) is not None:
        w = replace(w, du_max=args.du_max)
    return w


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write-test"
    probe.write_text("")
    probe.unlink()
    return out


def cmd_synthesize(args) -> int:
    spec = _apply_overrides(load_scenario(args.scenario), args)
    suite = build_suite(spec.chassis, spec.kappa, weights=_weights(args), controllers=("proposed",))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_table(suite.table, out)
    print(f"wrote {out}: {len(suite.table.entries)} entries, kappa={spec.kappa}")
    return EXIT_OK


def _report_exit(report) -> int:
    if any(r.metrics is None for r in report.runs):
        return EXIT_RUN_FAILED
    if any(r.degraded for r in report.runs):
        return EXIT_DEGRADED
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = _apply_overrides(load_scenario(args.scenario), args)
    table = load_table(args.table) if args.table else None
    suite = build_suite(
        spec.chassis, spec.kappa, args.cache, _weights(args), controllers=(args.controller,), table=table
    )
    out = _out_dir(args.out)
    report = run_benchmark([spec], suite, (args.controller,), out, args.seed, plots=not args.no_plots)
    print(report.summary_text(), end="")
    return _report_exit(report)


def cmd_benchmark(args) -> int:
    if args.all:
        specs = bundled_all()
    elif args.scenario:
        specs = [load_scenario(s) for s in args.scenario]
    else:
        raise ValueError("benchmark needs --all or at least one --scenario")
    specs = [_apply_overrides(s, args) for s in specs]
    base = specs[0]
    if any(s.chassis != base.chassis or s.kappa != base.kappa for s in specs):
        raise ValidationError("benchmark scenarios must share the chassis model and kappa")
    controllers = tuple(args.controllers.split(",")) if args.controllers else CONTROLLER_NAMES
    for c in controllers:
        if c not in CONTROLLER_NAMES:
            raise ValueError(f"unknown controller {c!r}")
    suite = build_suite(base.chassis, base.kappa, args.cache, _weights(args), controllers=controllers)
    out = _out_dir(args.out)
    report = run_benchmark(specs, suite, controllers, out, args.seed, plots=not args.no_plots, jobs=args.jobs)
    print(report.summary_text(), end="")
    return _report_exit(report)


def _scene_at(spec: ScenarioSpec, t: float) -> PotentialScene:
    world = World(spec)
    world.advance_traffic(t)
    return PotentialScene(spec.road, tuple(world.obstacles(t)))


def cmd_plan(args) -> int:
    spec = load_scenario(args.scenario)
    scene = _scene_at(spec, args.t)
    ego = EgoPlanState(spec.ego.x + spec.ego.v_x * args.t, spec.ego.y, spec.ego.v_x)
    start_lane = spec.road.lane_centers[spec.road.lane_of(ego.y)]
    target = choose_target(spec.road, scene.obstacles, ego.x, ego.v_x, start_lane)
    traj, scored = plan_trajectory(scene, ego, spec.planner, spec.candidates, target, t0=args.t, return_all=True)
    out = _out_dir(args.out)
    with open(out / "plan.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "psi", "psi_dot"])
        for row in zip(traj.x, traj.y, traj.psi, traj.psi_dot):
            w.writerow([f"{v:.12g}" for v in row])
    with open(out / "candidates.csv", "w", newline="") as fh:
        keys = sorted({k for s in scored for k in s.breakdown})
        w = csv.writer(fh)
        w.writerow(["index", "label", "feasible", "cost", *keys, "reason"])
        for s in scored:
            w.writerow([s.index, s.label, int(s.feasible), f"{s.cost:.12g}",
                        *(f"{s.breakdown.get(k, float('nan')):.12g}" for k in keys), s.reason])  # fmt: skip
    ref = quintic_path(ego.y, target, spec.candidates.ref_length)
    series = {"plan": (traj.x, traj.y), "reference": (traj.x, ref.y(traj.x - ego.x))}
    for ob in scene.obstacles:
        series[ob.name or "obstacle"] = (np.array([ob.x_obs]), np.array([ob.y_obs]))
    (out / "plan.svg").write_text(svg.line_chart(series, f"{spec.name}: plan at t={args.t:g} s", "x [m]", "y [m]"))
    print(f"chosen {traj.label} (cost {traj.cost:.6g}, target y={target:g}); wrote {out}")
    return EXIT_OK


def cmd_potential_map(args) -> int:
    spec = load_scenario(args.scenario)
    scene = _scene_at(spec, args.t)
    x_ego = spec.ego.x + spec.ego.v_x * args.t
    lo = x_ego if args.x_min is None else args.x_min
    hi = x_ego + 150.0 if args.x_max is None else args.x_max
    emit_potential_map(scene, (lo, hi), args.res, _out_dir(args.out), spec.ego.v_x)
    print(f"wrote {args.out}/potential.csv and potential.svg ({args.res}x{args.res})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rmpcdrive", description="Robust MPC lane-change benchmark")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    scen_help = f"scenario file, or a bundled name ({', '.join(BUNDLED)})"

    def overrides(sp):
        sp.add_argument("--kappa", type=float, help="stiffness uncertainty ratio (>= 1)")
        sp.add_argument("--mu", type=float, help="constant road adhesion replacing the scenario profile")
        sp.add_argument("--du-max", type=float, help="steering increment bound (rad per step)")

    s = sub.add_parser("synthesize", help="build the offline look-up table")
    s.add_argument("--scenario", required=True, help=scen_help)
    s.add_argument("--out", required=True, help="table file to write")
    overrides(s)
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("simulate", help="run one controller on one scenario")
    s.add_argument("--scenario", required=True, help=scen_help)
    s.add_argument("--controller", choices=CONTROLLER_NAMES, default="proposed")
    s.add_argument("--table", help="table from `synthesize` (synthesized on the fly if omitted)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--cache", help="directory caching synthesized tables")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-plots", action="store_true")
    overrides(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("benchmark", help="all controllers on all scenarios")
    s.add_argument("--all", action="store_true", help="use the bundled scenarios")
    s.add_argument("--scenario", action="append", help=scen_help + "; repeatable")
    s.add_argument("--controllers", help=f"comma list from {','.join(CONTROLLER_NAMES)}")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--cache", help="directory caching synthesized tables")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    s.add_argument("--no-plots", action="store_true")
    overrides(s)
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("plan", help="plan once from the scenario start")
    s.add_argument("--scenario", required=True, help=scen_help)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--t", type=float, default=0.0, help="scenario time of the snapshot (s)")
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("potential-map", help="grid the potential field")
    s.add_argument("--scenario", required=True, help=scen_help)
    s.add_argument("--res", type=int, default=100, help="grid points per axis (>= 10)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--t", type=float, default=0.0, help="scenario time of the snapshot (s)")
    s.add_argument("--x-min", type=float)
    s.add_argument("--x-max", type=float)
    s.set_defaults(func=cmd_potential_map)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ParseError, ValidationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (Infeasible, SolverFailure) as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return EXIT_SYNTHESIS
    except (NoFeasibleCandidate, OutOfRoad) as exc:
        print(f"planning failed: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
