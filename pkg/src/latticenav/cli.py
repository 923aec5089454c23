"""Command-line entry point.

Subcommands: ``plan`` (scenario -> path.json + stats.jsonl + plan.svg),
``simulate`` (Monte Carlo a planned path), ``primgen`` (write a primitive
set), ``bench-heuristic`` (fixed vs multi-resolution grid benchmark, CSV +
SVG) and ``map-info`` (quadtree summary + leaf dump).  Exit codes: 0 ok,
1 bad configuration, 2 no path found.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import plotting
from .footprint import Footprint
from .heuristics import initialize_h2d_baseline, initialize_h2dmr
from .mapping import read_map_files
from .motion import LatticeState, PrimitiveSet, RobotModel, build_control_set
from .planner import Planner, PlanResult
from .scenario import ScenarioError, atomic_write, load_scenario
from .simulate import batch as run_batch, traces as run_traces

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NO_PATH = 2


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def _path_document(result: PlanResult, pset: PrimitiveSet) -> dict:
    waypoints = []
    for e, (_, _, btraj) in enumerate(result.path):
        beliefs = btraj.beliefs if e == 0 else btraj.beliefs[1:]
        for b in beliefs:
            waypoints.append({
                "pose": [float(v) for v in b.mean],
                "sigma": [[float(x) for x in row] for row in b.sigma],
            })
    return {
        "version": 1,
        "states": [[s.ix, s.iy, s.ith, s.iv, s.iw] for s in result.states],
        "edges": [{"prim": idx} for (_, idx, _) in result.path],
        "cost": None if result.cost is None else
                {"c": result.cost.c, "t": result.cost.t, "trace": result.cost.u},
        "waypoints": waypoints,
    }


def cmd_plan(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    cfg = scenario.planner
    if args.epsilon0 is not None:
        cfg.epsilon0 = args.epsilon0
    if args.no_gf:
        cfg.graduated_fidelity = False
    if args.no_fsh:
        cfg.use_fsh = False
    if args.no_h2dmr:
        cfg.use_h2dmr = False
    if args.fplus is not None:
        cfg.f_plus = args.fplus
    if args.cache_dir is not None:
        cfg.fsh_cache_dir = args.cache_dir

    try:
        grid_map = scenario.load_map()
        fp = scenario.load_footprint()
        pset = scenario.load_primitives()
        planner = Planner(pset, grid_map, fp, scenario.noise, cfg)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    os.makedirs(args.out, exist_ok=True)
    stats_lines = []
    final = None
    try:
        for result in planner.plan(scenario.start, scenario.goal, scenario.sigma0):
            stats_lines.append(_dump(result.stats_record()))
            atomic_write(os.path.join(args.out, "stats.jsonl"),
                         "\n".join(stats_lines) + "\n")
            final = result
            if result.success:
                print(f"epsilon={result.epsilon:g} cost=({result.cost.c:.6g}, "
                      f"{result.cost.t:.6g}, {result.cost.u:.6g}) "
                      f"iterations={result.iterations}")
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if final is None or not final.success:
        explored = 0 if final is None else final.explored
        print(f"no path found (explored {explored} states)", file=sys.stderr)
        return EXIT_NO_PATH

    atomic_write(os.path.join(args.out, "path.json"), _dump(_path_document(final, pset)))
    plotting.render_plan(grid_map, final, fp, scenario.noise.denied_regions, pset,
                         os.path.join(args.out, "plan.svg"))
    print(f"wrote {args.out}/path.json, stats.jsonl, plan.svg")
    return EXIT_OK


def _rebuild_plan(path_doc: dict, pset: PrimitiveSet, planner: Planner, sigma0):
    """PlanResult equivalent of a stored path document (beliefs re-propagated)."""
    from .belief import Belief, propagate
    from .collision import PathCost

    states = [LatticeState(*s) for s in path_doc["states"]]
    prim_indices = [e["prim"] for e in path_doc["edges"]]
    belief = Belief.initial(np.array(pset.state_pose(states[0])), sigma0)
    path = []
    for state_from, state_to, idx in zip(states, states[1:], prim_indices):
        prim = pset.primitives[idx]
        btraj = propagate(belief, prim, pset.model, planner.noise,
                          pset.state_pose(state_from))
        path.append((state_to, idx, btraj))
        belief = btraj.beliefs[-1]
    cost = path_doc.get("cost")
    return PlanResult(
        True, 1.0,
        None if cost is None else PathCost(cost["c"], cost["t"], cost["trace"]),
        path, states, 0, 0, 0, 0.0, 0)


def cmd_simulate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        grid_map = scenario.load_map()
        fp = scenario.load_footprint()
        pset = scenario.load_primitives()
        with open(args.plan, "r", encoding="utf-8") as fh:
            path_doc = json.load(fh)
    except (ScenarioError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    planner = Planner(pset, grid_map, fp, scenario.noise, scenario.planner)
    plan = _rebuild_plan(path_doc, pset, planner, scenario.sigma0)

    os.makedirs(args.out, exist_ok=True)
    summary = run_batch(plan, pset, scenario.noise, fp, grid_map,
                        args.runs, args.seed, sigma0=scenario.sigma0)
    summary.pop("first_collision_steps", None)
    atomic_write(os.path.join(args.out, "summary.json"), _dump(summary))
    lines = [
        _dump(tr.to_record())
        for tr in run_traces(plan, pset, scenario.noise, fp, grid_map,
                             args.runs, args.seed, sigma0=scenario.sigma0)
    ]
    atomic_write(os.path.join(args.out, "traces.jsonl"),
                 "\n".join(lines) + ("\n" if lines else ""))
    rate = summary["collision_rate"]
    print(f"runs={args.runs} collisions={summary['collisions']} "
          f"rate={'n/a' if rate is None else f'{rate:.4f}'}")
    return EXIT_OK


def cmd_primgen(args) -> int:
    try:
        model = RobotModel(kind=args.kind, v_max=args.v_max, omega_max=args.omega_max,
                           min_turn_radius=args.min_turn_radius, dt=args.dt)
        lengths = [float(v) for v in args.lengths.split(",")]
        prims = build_control_set(model, args.headings, lengths, args.resolution)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not prims:
        print("error: no feasible primitives for this model", file=sys.stderr)
        return EXIT_CONFIG
    pset = PrimitiveSet(model, args.resolution, args.headings, prims,
                        f_plus=min(lengths))
    pset.save(args.out)
    print(f"wrote {args.out}: {len(prims)} primitives, "
          f"{len(pset.groups)} groups, f+={pset.f_plus:g} m")
    return EXIT_OK


def cmd_bench_heuristic(args) -> int:
    try:
        cplus_list = [float(v) for v in args.cplus.split(",")]
        sx, sy = (float(v) for v in args.start.split(","))
        gx, gy = (float(v) for v in args.goal.split(","))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    rows = []
    sr = None
    for cplus in cplus_list:
        try:
            grid_map = read_map_files(args.pgm, args.meta, args.occ_threshold,
                                      max_leaf_size=cplus)
            if sr is None:
                sr = initialize_h2d_baseline((sx, sy), (gx, gy), grid_map,
                                             args.fplus, args.radius)
            mr = initialize_h2dmr((sx, sy), (gx, gy), grid_map, args.fplus, args.radius)
        except (ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        rows.append({
            "cplus": cplus,
            "sr_iterations": sr.stats.iterations,
            "mr_iterations": mr.stats.iterations,
            "iteration_gain_pct": 100.0 * (1.0 - mr.stats.iterations / sr.stats.iterations),
            "sr_ms": sr.stats.wall_ms,
            "mr_ms": mr.stats.wall_ms,
            "time_gain_pct": 100.0 * (1.0 - mr.stats.wall_ms / sr.stats.wall_ms),
        })

    header = "cplus,sr_iterations,mr_iterations,iteration_gain_pct,sr_ms,mr_ms,time_gain_pct"
    lines = [header]
    for r in rows:
        lines.append(f"{r['cplus']:g},{r['sr_iterations']},{r['mr_iterations']},"
                     f"{r['iteration_gain_pct']:.1f},{r['sr_ms']:.1f},{r['mr_ms']:.1f},"
                     f"{r['time_gain_pct']:.1f}")
    atomic_write(args.out, "\n".join(lines) + "\n")
    if args.svg:
        plotting.render_bench(rows, args.svg)
    print("\n".join(lines))
    return EXIT_OK


def cmd_map_info(args) -> int:
    try:
        grid_map = read_map_files(args.pgm, args.meta, args.occ_threshold,
                                  max_leaf_size=args.max_leaf_size)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    leaves = grid_map.leaves
    occupied = sum(1 for c in leaves if c.occupied)
    print(f"extent: {grid_map.root_extent:g} m, finest cell: {grid_map.max_resolution:g} m")
    print(f"leaves: {len(leaves)} ({occupied} occupied)")
    if args.out:
        atomic_write(args.out, grid_map.leaves_json())
        print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latticenav",
        description="Minimum-risk lattice motion planning under uncertainty")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="plan a scenario and write artifacts")
    p.add_argument("scenario")
    p.add_argument("--out", default="plan_out")
    p.add_argument("--epsilon0", type=float, default=None)
    p.add_argument("--no-gf", action="store_true", help="disable graduated fidelity")
    p.add_argument("--no-fsh", action="store_true")
    p.add_argument("--no-h2dmr", action="store_true")
    p.add_argument("--fplus", type=float, default=None)
    p.add_argument("--cache-dir", default=os.environ.get("LATTICENAV_CACHE"))
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="Monte Carlo a planned path")
    p.add_argument("--scenario", required=True)
    p.add_argument("--plan", required=True, help="path.json from the plan command")
    p.add_argument("--runs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="sim_out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("primgen", help="generate and store a primitive set")
    p.add_argument("--kind", choices=("unicycle", "ackermann"), default="unicycle")
    p.add_argument("--v-max", type=float, default=1.0)
    p.add_argument("--omega-max", type=float, default=1.5)
    p.add_argument("--min-turn-radius", type=float, default=0.0)
    p.add_argument("--dt", type=float, default=0.25)
    p.add_argument("--headings", type=int, default=16)
    p.add_argument("--resolution", type=float, default=0.5)
    p.add_argument("--lengths", default="0.5,2.0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_primgen)

    p = sub.add_parser("bench-heuristic", help="fixed vs multi-resolution grid benchmark")
    p.add_argument("--pgm", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--occ-threshold", type=float, default=0.5)
    p.add_argument("--fplus", type=float, default=0.5)
    p.add_argument("--radius", type=float, default=0.375,
                   help="optimistic disc radius (m)")
    p.add_argument("--start", required=True, help="x,y in meters")
    p.add_argument("--goal", required=True, help="x,y in meters")
    p.add_argument("--cplus", required=True, help="comma list of coarsest cell sizes")
    p.add_argument("--out", default="bench.csv")
    p.add_argument("--svg", default=None)
    p.set_defaults(func=cmd_bench_heuristic)

    p = sub.add_parser("map-info", help="summarize a map and dump its leaves")
    p.add_argument("--pgm", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--occ-threshold", type=float, default=0.5)
    p.add_argument("--max-leaf-size", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_map_info)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
