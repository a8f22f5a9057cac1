"""Run the ten competition waypoints through the noisy simulated hand, once
open loop and once with replanning, and print per-waypoint errors.

    python3 demos/closed_loop.py [seed]
"""
import sys
from dataclasses import replace

import numpy as np

from ingrasp import GraspPlant, load_scenario, run_scenario

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
sc = load_scenario("competition")
print(f"scenario {sc.id!r}: {len(sc.waypoints)} waypoints, noise preset {sc.noise_preset!r}")

runs = {}
for n in (0, sc.loop.N_replan):
    # A fresh plant with the same seed sees the same disturbances up to the first replan.
    plant = GraspPlant(sc.hand, sc.grasp, sc.noise.with_seed(seed))
    runs[n] = run_scenario(plant, sc.waypoints, replace(sc.loop, N_replan=n), sc.planner)

print(f"{'wp':>3} {'goal (cm)':>20} {'planned':>8} {'open':>8} {'closed':>8} replans")
for k, (a, b) in enumerate(zip(runs[0], runs[sc.loop.N_replan])):
    goal = np.round(sc.waypoints[k] * 100, 1)
    print(f"{k:3d} {str(goal):>20} {b.planned_error * 1e3:7.2f}mm {a.closed_loop_error * 1e3:7.2f}mm "
          f"{b.closed_loop_error * 1e3:7.2f}mm {b.replans_used:3d}{'  DROPPED' if b.dropped else ''}")

for n, res in runs.items():
    errs = [r.closed_loop_error for r in res]
    print(f"N_replan={n}: mean error {np.mean(errs) * 1e3:.2f} mm, drops {sum(r.dropped for r in res)}")
