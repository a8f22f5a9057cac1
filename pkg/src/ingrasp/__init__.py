"""Plan and execute in-grasp object motions with a multi-fingered hand."""

from .se3 import Pose, WeightMatrix, exp_so3, log_so3, left_jacobian, left_jacobian_inv, pose_distance
from .hand import HandModel, GraspState, default_hand, load_hand, make_grasp, ik_fingertips
from .trajopt import TrajProblem, TrajSolution, solve, solve_baseline
from .plant import GraspPlant, PerturbationConfig, DroppedObject, perturbation_preset, register_rigid
from .pipeline import (LoopConfig, PlannerConfig, WaypointResult, reach_waypoint, run_scenario,
                       experiment_presets)
from .scenario import Scenario, load_scenario, cylinder_grasp

__version__ = "0.1.0"

__all__ = [
    "Pose", "WeightMatrix", "exp_so3", "log_so3", "left_jacobian", "left_jacobian_inv", "pose_distance",
    "HandModel", "GraspState", "default_hand", "load_hand", "make_grasp", "ik_fingertips",
    "TrajProblem", "TrajSolution", "solve", "solve_baseline",
    "GraspPlant", "PerturbationConfig", "DroppedObject", "perturbation_preset", "register_rigid",
    "LoopConfig", "PlannerConfig", "WaypointResult", "reach_waypoint", "run_scenario", "experiment_presets",
    "Scenario", "load_scenario", "cylinder_grasp",
]
