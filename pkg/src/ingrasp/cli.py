"""``ingrasp`` command line: plan, run, gradcheck, ik, presets.

Lengths are centimeters and angles are degrees on the command line and in
every output file; the library underneath works in meters and radians.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .hand import IkNotConverged, ik_fingertips, fk_fingertip, load_hand, default_hand_path
from .pipeline import (PRESET_NAMES, ExperimentGroup, UnknownPreset, experiment_presets,
                       goal_from_offset, plan, run_group)
from .plant import perturbation_preset
from .scenario import Scenario, ScenarioError, load_scenario
from .trajopt import fingertip_drift

CSV_SCHEMA = "# ingrasp-results v1"
CSV_COLUMNS = ["scenario_id", "seed", "waypoint_idx", "goal_x_cm", "goal_y_cm", "goal_z_cm",
               "planned_err_cm", "open_loop_err_cm", "closed_loop_err_cm", "replans", "dropped",
               "wall_time_s"]
DEFAULT_SCENARIO = "competition"
DEFAULT_OUT = "ingrasp-out"


class UsageError(Exception):
    pass


def out_dir(args) -> Path:
    d = Path(args.out_dir or os.environ.get("INGRASP_OUT") or DEFAULT_OUT)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _cm(v) -> list:
    return [round(float(x) * 100.0, 9) for x in np.ravel(v)]


def _deg(v) -> list:
    return [round(float(x), 9) for x in np.rad2deg(np.ravel(v))]


def _scenario(args) -> Scenario:
    sc = load_scenario(args.scenario or DEFAULT_SCENARIO)
    planner = sc.planner
    if getattr(args, "baseline", False):
        planner = replace(planner, baseline=True)
    loop = sc.loop
    if getattr(args, "replan_max", None) is not None:
        loop = replace(loop, N_replan=args.replan_max)
    noise, preset = sc.noise, sc.noise_preset
    if getattr(args, "noise_preset", None):
        noise, preset = perturbation_preset(args.noise_preset), args.noise_preset
    return replace(sc, planner=planner, loop=loop, noise=noise, noise_preset=preset)


# --- plan -----------------------------------------------------------------

def cmd_plan(args) -> int:
    sc = _scenario(args)
    g = sc.grasp
    if args.goal is not None:
        offset = np.asarray(args.goal, dtype=float) * 0.01
        label = "custom"
    else:
        if not len(sc.waypoints):
            raise UsageError("scenario has no waypoints; pass --goal")
        if not 0 <= args.waypoint < len(sc.waypoints):
            raise UsageError(f"waypoint index {args.waypoint} out of range 0..{len(sc.waypoints) - 1}")
        offset = sc.waypoints[args.waypoint]
        label = args.waypoint
    goal = goal_from_offset(g.object_pose0, offset)
    steps = args.steps or sc.loop.first_T
    prob, sol = plan(sc.hand, g.Q0, g.object_pose0, goal, steps, sc.planner.first_lambda, sc.planner)
    out = {
        "scenario_id": sc.id,
        "waypoint": label,
        "method": "baseline" if sc.planner.baseline else "proposed",
        "T": steps,
        "goal": {"p_cm": _cm(goal.p), "r_deg": _deg(goal.r)},
        "trajectory": [
            {"t": t + 1, "Q_deg": _deg(sol.Q[t]),
             "object": {"p_cm": _cm(P.p), "r_deg": _deg(P.r)}}
            for t, P in enumerate(sol.object_poses())
        ],
        "costs": {k: float(v) for k, v in sol.cost_breakdown.items()},
        "planned_error_cm": float(sol.planned_error) * 100.0,
        "max_fingertip_drift_cm": float(fingertip_drift(sol.vars, prob).max()) * 100.0,
        "solver": {k: (float(v) if isinstance(v, (float, np.floating)) else v)
                   for k, v in sol.solver_stats.items() if k != "wall_time"},
    }
    path = out_dir(args) / f"{sc.id}_plan_{label}.json"
    path.write_text(json.dumps(out, indent=2) + "\n")
    print(f"planned error {out['planned_error_cm']:.4g} cm "
          f"(J_object {out['costs']['J_object']:.3g}); wrote {path}")
    return 0


# --- run ------------------------------------------------------------------

def _run_job(job):
    sc, group, seed = job
    try:
        return group.label, seed, run_group(sc.hand, sc.grasp, group, sc.noise.with_seed(seed)), None
    except Exception as exc:  # recorded per run; one bad seed does not sink the batch
        return group.label, seed, [], f"{type(exc).__name__}: {exc}"


def _groups(sc: Scenario, args) -> list[ExperimentGroup]:
    if not args.preset:
        return [ExperimentGroup(sc.id, sc.waypoints, sc.loop, sc.planner)]
    groups = experiment_presets(args.preset, iterations=args.iterations).groups
    out = []
    for grp in groups:
        planner = replace(grp.planner, baseline=True) if args.baseline else grp.planner
        loop = replace(grp.loop, N_replan=args.replan_max) if args.replan_max is not None else grp.loop
        out.append(replace(grp, planner=planner, loop=loop))
    return out


def _stats(values) -> dict:
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    if not v.size:
        return {"mean": None, "std": None}
    return {"mean": round(float(v.mean()), 6), "std": round(float(v.std()), 6)}


def cmd_run(args) -> int:
    sc = _scenario(args)
    seeds = args.seed if args.seed else sc.seeds
    groups = _groups(sc, args)
    jobs = [(sc, grp, s) for grp in groups for s in seeds]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            outcomes = list(ex.map(_run_job, jobs))
    else:
        outcomes = [_run_job(j) for j in jobs]

    name = f"{sc.id}_{args.preset}" if args.preset else sc.id
    buf = io.StringIO()
    buf.write(CSV_SCHEMA + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    summary = {"schema": CSV_SCHEMA[2:], "scenario_id": sc.id, "preset": args.preset,
               "noise_preset": sc.noise_preset, "seeds": list(seeds), "groups": {}, "failures": []}
    by_group: dict = {}
    pose0 = sc.grasp.object_pose0
    for (label, seed, results, err), (_, grp, _) in zip(outcomes, jobs):
        sid = f"{name}/{label}" if args.preset else sc.id
        if err is not None:
            summary["failures"].append({"group": label, "seed": seed, "error": err})
        for k, r in enumerate(results):
            goal = r.goal.p - pose0.p
            w.writerow([sid, seed, k, *(f"{x:.4f}" for x in goal * 100),
                        *(f"{e * 100:.6f}" for e in (r.planned_error, r.open_loop_error,
                                                     r.closed_loop_error)),
                        r.replans_used, int(r.dropped),
                        f"{r.wall_time:.3f}" if args.timing else ""])
            by_group.setdefault(label, []).append(r)
    for label, res in by_group.items():
        summary["groups"][label] = {
            "n": len(res),
            "planned_err_cm": _stats([r.planned_error * 100 for r in res]),
            "open_loop_err_cm": _stats([r.open_loop_error * 100 for r in res]),
            "closed_loop_err_cm": _stats([r.closed_loop_error * 100 for r in res]),
            "closed_loop_rot_err_deg": _stats([np.rad2deg(r.closed_loop_rot_error) for r in res]),
            "replans": _stats([r.replans_used for r in res]),
            "drops": int(sum(r.dropped for r in res)),
        }
        if args.timing:
            summary["groups"][label]["wall_time_s"] = _stats([r.wall_time for r in res])

    d = out_dir(args)
    csv_path, json_path = d / f"{name}.csv", d / f"{name}.json"
    csv_path.write_text(buf.getvalue())
    json_path.write_text(json.dumps(summary, indent=2) + "\n")
    for label, s in summary["groups"].items():
        m = s["closed_loop_err_cm"]["mean"]
        print(f"{label:24s} n={s['n']:4d} closed-loop {m if m is None else f'{m:.3f}'} cm "
              f"drops {s['drops']}")
    print(f"wrote {csv_path} and {json_path}")
    for f in summary["failures"]:
        print(f"run failed: group {f['group']} seed {f['seed']}: {f['error']}", file=sys.stderr)
    return 1 if outcomes and len(summary["failures"]) == len(outcomes) else 0


# --- gradcheck / ik / presets ----------------------------------------------

def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report = run_gradcheck(args.trials, args.tol, args.seed_value)
    for wrn in caught:
        print(f"warning: {wrn.message}", file=sys.stderr)
    print(report.summary())
    return 0 if report.passed else 1


def cmd_ik(args) -> int:
    path = Path(args.hand_file) if args.hand_file else default_hand_path()
    if not path.exists():
        raise FileNotFoundError(f"hand file not found: {path}")
    hand = load_hand(path)
    t = np.asarray(args.targets, dtype=float)
    if t.size != 3 * hand.n_fingers:
        raise UsageError(f"expected {3 * hand.n_fingers} target coordinates "
                         f"({hand.n_fingers} fingers x 3), got {t.size}")
    seed = np.deg2rad(args.q_seed) if args.q_seed else np.zeros(hand.dof)
    if seed.size != hand.dof:
        raise UsageError(f"--q-seed needs {hand.dof} values, got {seed.size}")
    try:
        Q = ik_fingertips(hand, t.reshape(-1, 3) * 0.01, seed)
        code = 0
    except IkNotConverged as exc:
        Q, code = exc.q, 1
        print(f"error: {exc}", file=sys.stderr)
    print("Q_deg " + " ".join(f"{v:.6f}" for v in np.rad2deg(Q)))
    for i, (f, q) in enumerate(zip(hand.fingers, hand.split(Q))):
        res = np.linalg.norm(fk_fingertip(hand, i, q).p - t.reshape(-1, 3)[i] * 0.01)
        print(f"{f.name:10s} residual {res * 1000:.4f} mm")
    return code


def cmd_presets(args) -> int:
    for name in PRESET_NAMES:
        p = experiment_presets(name, iterations=args.iterations)
        print(f"{name:18s} {p.n_goals:4d} goals  groups: {', '.join(g.label for g in p.groups)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ingrasp", description="In-grasp object movement planner")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", help="scenario JSON file or shipped name (default: competition)")
        p.add_argument("--baseline", action="store_true", help="rigid-thumb baseline planner")
        p.add_argument("--out-dir", help="output directory (else $INGRASP_OUT, else ./ingrasp-out)")

    p = sub.add_parser("plan", help="solve one trajectory and write it as JSON")
    common(p)
    p.add_argument("--waypoint", type=int, default=0, help="waypoint index (0-based)")
    p.add_argument("--goal", type=float, nargs=3, metavar=("X", "Y", "Z"),
                   help="goal offset in cm instead of a scenario waypoint")
    p.add_argument("--steps", type=int, help="trajectory steps T (default: scenario first_T)")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", help="closed-loop simulation; writes CSV and JSON summary")
    common(p)
    p.add_argument("--preset", choices=PRESET_NAMES, help="run an experiment preset instead")
    p.add_argument("--iterations", type=int, default=5, help="corner-tour repeats for presets")
    p.add_argument("--seed", type=int, action="append", help="seed (repeatable; default: scenario seeds)")
    p.add_argument("--jobs", type=int, default=1, help="parallel runs")
    p.add_argument("--replan-max", type=int, help="override N_replan")
    p.add_argument("--noise-preset", help="override the perturbation preset (none, paper-like)")
    p.add_argument("--timing", action="store_true",
                   help="record wall times (makes output run-dependent)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gradcheck", help="finite-difference check of all analytical gradients")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--seed", dest="seed_value", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ik", help="joint angles placing the fingertips at targets (cm)")
    p.add_argument("--hand-file", help="hand JSON (default: shipped synthetic hand)")
    p.add_argument("--q-seed", type=float, nargs="+", help="initial joint guess (deg)")
    p.add_argument("targets", type=float, nargs="+", help="x y z per finger, in cm")
    p.set_defaults(func=cmd_ik)

    p = sub.add_parser("presets", help="list experiment presets")
    p.add_argument("--iterations", type=int, default=5)
    p.set_defaults(func=cmd_presets)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        ap.error(str(exc))
    except (FileNotFoundError, ScenarioError, UnknownPreset, KeyError) as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return 2
    except IkNotConverged as exc:
        print(f"error: initial grasp: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
