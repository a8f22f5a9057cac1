"""Slide a grasped cylinder 2 cm sideways and 1 cm up, then compare with a
planner that welds the object to the thumb tip.

    python3 demos/plan_one_move.py
"""
import numpy as np

from ingrasp import Pose, TrajProblem, cylinder_grasp, default_hand, solve, solve_baseline
from ingrasp.trajopt import fingertip_drift

hand = default_hand()
grasp = cylinder_grasp(hand)  # three fingertips on a 3 cm cylinder, 10 cm in front of the palm
start = grasp.object_pose0
goal = Pose(start.p + [0.02, 0.0, 0.01], start.r)
print("object starts at", np.round(start.p * 100, 2), "cm; goal", np.round(goal.p * 100, 2), "cm")

prob = TrajProblem(hand, grasp, goal, steps=3)
sol = solve(prob)

# Joint angles and object pose are optimized together, one row per step.
for t, (Q, P) in enumerate(zip(sol.Q, sol.object_poses()), 1):
    print(f"step {t}: object {np.round(P.p * 100, 2)} cm, "
          f"index joints {np.round(np.rad2deg(Q[:4]), 1)} deg")

drift = fingertip_drift(sol.vars, prob)
print(f"planned error {sol.planned_error * 1000:.2f} mm, "
      f"worst fingertip drift on the object {drift.max() * 1000:.2f} mm")
print("cost split:", {k: f"{v:.2e}" for k, v in sol.cost_breakdown.items()})

# The rigid-thumb planner can only move the object the way the thumb tip moves.
base = solve_baseline(prob)
print(f"rigid-thumb planner: planned error {base.planned_error * 1000:.2f} mm")
