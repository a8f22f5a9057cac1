"""Closed-loop plan / execute / replan over a sequence of object waypoints."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .hand import HandModel, make_grasp
from .plant import DroppedObject, GraspPlant
from .se3 import Pose, WeightMatrix, exp_so3, pose_distance
from .trajopt import (FIRST_LAMBDA, FIRST_T, REPLAN_LAMBDA, REPLAN_T, W_FINGER,
                      W_OBJECT, SolverFailed, TrajProblem, solve, solve_baseline)


STOP_SLACK = 1e-9  # round-off allowance in the "good enough" test


class PlanFailed(RuntimeError):
    pass


class UnknownPreset(KeyError):
    pass


@dataclass(frozen=True)
class LoopConfig:
    N_replan: int = 4
    time_budget: float = 20.0  # s per waypoint, wall clock
    first_T: int = FIRST_T
    replan_T: int = REPLAN_T
    return_to_initial: bool = True
    error_metric: str = "position"  # or "pose"

    def __post_init__(self):
        if self.N_replan < 0:
            raise ValueError("N_replan must be >= 0")
        if self.time_budget <= 0 or self.first_T < 1 or self.replan_T < 1:
            raise ValueError("budgets and step counts must be positive")
        if self.error_metric not in ("position", "pose"):
            raise ValueError(f"unknown error metric {self.error_metric!r}")


@dataclass(frozen=True)
class PlannerConfig:
    W_o: WeightMatrix = W_OBJECT
    W_f: WeightMatrix = W_FINGER
    first_lambda: float = FIRST_LAMBDA
    replan_lambda: float = REPLAN_LAMBDA
    collision_enabled: bool = True
    baseline: bool = False


@dataclass
class WaypointResult:
    goal: Pose
    planned_error: float
    open_loop_error: float
    closed_loop_error: float
    replans_used: int
    dropped: bool
    wall_time: float
    open_loop_rot_error: float = float("nan")
    closed_loop_rot_error: float = float("nan")
    drift_path: float = 0.0
    failed: bool = False


def position_error(pose: Pose, goal: Pose) -> float:
    return float(np.linalg.norm(pose.p - goal.p))


def rotation_error_angle(pose: Pose, goal: Pose) -> float:
    return float(np.linalg.norm(pose_distance(pose, goal, WeightMatrix())[1][3:]))


def _metric(pose: Pose, goal: Pose, cfg: LoopConfig, planner: PlannerConfig) -> float:
    if cfg.error_metric == "position":
        return position_error(pose, goal)
    return pose_distance(pose, goal, planner.W_o)[0]


def plan(hand: HandModel, Q_now, pose_now: Pose, goal: Pose, steps: int, lam: float,
         planner: PlannerConfig, rng: np.random.Generator | None = None):
    """One trajectory from the current (measured) state to ``goal``."""
    grasp = make_grasp(hand, Q_now, pose_now)
    prob = TrajProblem(hand, grasp, goal, steps=steps, W_o=planner.W_o, W_f=planner.W_f,
                       lam=lam, collision_enabled=planner.collision_enabled)
    try:
        if planner.baseline:
            return prob, solve_baseline(prob)
        return prob, solve(prob, rng=rng)
    except SolverFailed as exc:
        raise PlanFailed(str(exc)) from exc


def _planned_metric(prob, sol, cfg: LoopConfig, planner: PlannerConfig) -> float:
    if cfg.error_metric == "position":
        return sol.planned_error
    return pose_distance(sol.terminal_pose, prob.goal, planner.W_o)[0]


def reach_waypoint(plant: GraspPlant, goal: Pose, cfg: LoopConfig,
                   planner: PlannerConfig = PlannerConfig(), sensed: Pose | None = None,
                   history: list | None = None) -> WaypointResult:
    """Plan, execute, and replan toward ``goal`` until a stop condition holds.

    Stops when the sensed error is at or below the most recent plan's planned
    error, after ``N_replan`` replans, or when the time budget runs out.
    Executed joint commands are appended to ``history`` (for retracing).
    """
    t0 = time.perf_counter()
    hand = plant.hand
    rng = np.random.default_rng(plant.cfg.seed + 7919 * plant.state.steps)
    if sensed is None:
        sensed = plant.sense()
    if history is None:
        history = []

    def execute(sol):
        nonlocal sensed
        for Q in sol.Q:
            sensed = plant.execute_step(Q)
            history.append(Q.copy())

    result = WaypointResult(goal, np.nan, np.nan, np.nan, 0, False, 0.0)
    try:
        prob, sol = plan(hand, plant.read_joints(), sensed, goal, cfg.first_T,
                         planner.first_lambda, planner, rng)
        result.planned_error = sol.planned_error
        execute(sol)
        result.open_loop_error = position_error(plant.state.object_pose_true, goal)
        result.open_loop_rot_error = rotation_error_angle(plant.state.object_pose_true, goal)
        last_planned = _planned_metric(prob, sol, cfg, planner)
        while True:
            if _metric(sensed, goal, cfg, planner) <= last_planned + STOP_SLACK:
                break
            if result.replans_used >= cfg.N_replan:
                break
            if time.perf_counter() - t0 > cfg.time_budget:
                break
            prob, sol = plan(hand, plant.read_joints(), sensed, goal, cfg.replan_T,
                             planner.replan_lambda, planner, rng)
            execute(sol)
            result.replans_used += 1
            last_planned = _planned_metric(prob, sol, cfg, planner)
    except DroppedObject:
        result.dropped = True
    except PlanFailed:
        result.failed = True
    true = plant.state.object_pose_true
    result.closed_loop_error = position_error(true, goal)
    result.closed_loop_rot_error = rotation_error_angle(true, goal)
    if np.isnan(result.open_loop_error):
        result.open_loop_error = result.closed_loop_error
        result.open_loop_rot_error = result.closed_loop_rot_error
    result.drift_path = plant.state.drift_path
    result.wall_time = time.perf_counter() - t0
    return result


def goal_from_offset(pose0: Pose, offset) -> Pose:
    """Goal = initial pose shifted by a 3-vector, or by [dp; dr] for pose goals.

    Rotation offsets are applied in the world frame on top of the initial
    orientation.
    """
    offset = np.asarray(offset, dtype=float)
    if offset.shape == (3,):
        return Pose(pose0.p + offset, pose0.r)
    if offset.shape == (6,):
        return Pose.from_rp(exp_so3(offset[3:]) @ pose0.R, pose0.p + offset[:3])
    raise ValueError(f"waypoint must have 3 or 6 entries, got {offset.shape}")


def run_scenario(plant: GraspPlant, waypoints, cfg: LoopConfig,
                 planner: PlannerConfig = PlannerConfig()) -> list[WaypointResult]:
    """Reach each waypoint in turn (offsets from the initial object pose)."""
    pose0 = plant.grasp.object_pose0
    goals = [goal_from_offset(pose0, w) for w in waypoints]
    results: list[WaypointResult] = []
    sensed = plant.sense() if goals else None
    for k, goal in enumerate(goals):
        if plant.state.dropped:
            true = plant.state.object_pose_true
            err = position_error(true, goal)
            results.append(WaypointResult(goal, np.nan, err, err, 0, True, 0.0,
                                          rotation_error_angle(true, goal),
                                          rotation_error_angle(true, goal),
                                          plant.state.drift_path))
            continue
        history = [plant.read_joints()]
        res = reach_waypoint(plant, goal, cfg, planner, sensed=sensed, history=history)
        results.append(res)
        if res.dropped:
            continue
        sensed = plant.log[-1]["sensed"] if plant.log else plant.sense()
        if cfg.return_to_initial and k < len(goals) - 1:
            try:
                for Q in reversed(history[:-1]):
                    sensed = plant.execute_step(Q)
            except DroppedObject:
                pass
    return results


def cube_corners(side: float) -> np.ndarray:
    """Eight corners of an axis-aligned cube of edge ``side`` centred at the origin."""
    h = 0.5 * side
    return np.array([[sx * h, sy * h, sz * h]
                     for sx, sy, sz in itertools.product((-1, 1), repeat=3)])


def corner_tour(side: float, iterations: int = 5) -> np.ndarray:
    return np.tile(cube_corners(side), (iterations, 1))


# Competition waypoints (cm), reached in order from the initial object position.
COMPETITION_WAYPOINTS_CM = np.array([
    [2.5, 2.5, 0.0], [2.5, 2.5, 2.5], [-2.5, -2.5, -2.5], [-1.3, -2.0, 0.6],
    [-1.2, 0.7, 0.6], [0.6, 0.4, 0.2], [0.9, -1.2, -1.3], [-2.0, 2.0, 2.0],
    [0.0, 0.0, 2.0], [0.0, 0.0, 0.0],
])

# Pose goals: translation (cm), rotation (deg).
POSE_GOALS = [
    ((0.0, -1.0, -1.0), (0.0, 20.0, 0.0)),
    ((-2.0, 0.0, 0.0), (30.0, 0.0, 0.0)),
    ((0.0, 0.0, 2.0), (0.0, 0.0, 40.0)),
]
POSE_GOAL_WEIGHTS = WeightMatrix.from_diag([10, 10, 10, 1, 1, 1])


def pose_goal_offsets() -> np.ndarray:
    return np.array([[*(np.array(t) * 0.01), *np.deg2rad(r)] for t, r in POSE_GOALS])


@dataclass
class ExperimentGroup:
    label: str
    waypoints: np.ndarray  # offsets in meters (and radians for pose goals)
    loop: LoopConfig
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    reset_between: bool = False  # fresh grasp before every waypoint


@dataclass
class ExperimentPreset:
    name: str
    groups: list[ExperimentGroup]

    @property
    def n_goals(self) -> int:
        return sum(len(g.waypoints) for g in self.groups)


PRESET_NAMES = ("traj_steps_study", "replan_study", "baseline_compare", "reachable_space",
                "pose_goals")


def experiment_presets(name: str, iterations: int = 5) -> ExperimentPreset:
    """Scenario bundles for the evaluation studies."""
    base = LoopConfig()
    tour5 = corner_tour(0.05, iterations)
    if name == "traj_steps_study":
        groups = [ExperimentGroup(f"T={T}", tour5, replace(base, first_T=T, N_replan=0))
                  for T in (1, 3, 5, 10)]
    elif name == "replan_study":
        groups = [ExperimentGroup(f"N_replan={n}", tour5, replace(base, N_replan=n))
                  for n in (0, 1, 4, 8)]
    elif name == "baseline_compare":
        groups = []
        for side, n in ((0.03, 8), (0.05, 4)):
            for method, is_base in (("proposed", False), ("baseline", True)):
                groups.append(ExperimentGroup(
                    f"{method}@{side * 100:.0f}cm", corner_tour(side, iterations),
                    replace(base, N_replan=n), PlannerConfig(baseline=is_base)))
    elif name == "reachable_space":
        groups = [ExperimentGroup(f"side={s}cm", corner_tour(s * 0.01, iterations), base,
                                  reset_between=True)
                  for s in (1, 3, 5, 7, 9)]
    elif name == "pose_goals":
        groups = [ExperimentGroup("pose_goals", pose_goal_offsets(),
                                  replace(base, error_metric="pose"),
                                  PlannerConfig(W_o=POSE_GOAL_WEIGHTS))]
    else:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    return ExperimentPreset(name, groups)


def run_group(hand: HandModel, grasp, group: ExperimentGroup, noise) -> list[WaypointResult]:
    """Run one experiment group on a fresh plant (or one per waypoint)."""
    if group.reset_between:
        out = []
        for k, w in enumerate(group.waypoints):
            plant = GraspPlant(hand, grasp, noise.with_seed(noise.seed * 100003 + k))
            out.extend(run_scenario(plant, [w], group.loop, group.planner))
        return out
    plant = GraspPlant(hand, grasp, noise)
    return run_scenario(plant, group.waypoints, group.loop, group.planner)
