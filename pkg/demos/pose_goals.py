"""Ask for object rotations as well as translations by weighting the
orientation part of the object cost.

    python3 demos/pose_goals.py
"""
import numpy as np

from ingrasp import GraspPlant, PerturbationConfig, cylinder_grasp, default_hand, reach_waypoint
from ingrasp.pipeline import POSE_GOALS, experiment_presets, goal_from_offset

hand = default_hand()
grasp = cylinder_grasp(hand)
group = experiment_presets("pose_goals").groups[0]
print("object weights:", group.planner.W_o.diag)

for (dp, dr), offset in zip(POSE_GOALS, group.waypoints):
    plant = GraspPlant(hand, grasp, PerturbationConfig())  # noiseless, fresh grasp each time
    goal = goal_from_offset(grasp.object_pose0, offset)
    res = reach_waypoint(plant, goal, group.loop, group.planner)
    print(f"move {dp} cm, turn {dr} deg -> error {res.closed_loop_error * 100:.3f} cm, "
          f"{np.rad2deg(res.closed_loop_rot_error):.2f} deg after {res.replans_used} replans")
