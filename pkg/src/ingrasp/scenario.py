"""Scenario files: hand, initial grasp, waypoints, loop settings, noise, seeds.

Files are JSON with unit-suffixed keys (``_cm``, ``_deg``, ``_mm``, ``_s``);
everything is converted to meters/radians here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .hand import GraspState, HandModel, ik_fingertips, load_hand, make_grasp
from .pipeline import LoopConfig, PlannerConfig
from .plant import PerturbationConfig, perturbation_preset
from .se3 import Pose, WeightMatrix

CYLINDER_CENTER = np.array([0.0, 0.10, 0.06])
CYLINDER_RADIUS = 0.03
GRASP_SEED = np.tile([0.0, 0.4, 0.5, 0.4], 3)


class ScenarioError(ValueError):
    pass


def data_path(*parts) -> Path:
    return Path(str(resources.files("ingrasp").joinpath("data", *parts)))


def cylinder_targets(hand: HandModel, center=CYLINDER_CENTER, radius=CYLINDER_RADIUS) -> np.ndarray:
    """Fingertip-center targets around a cylinder whose axis runs along hand x.

    Index and ring press on the -y side, the thumb opposes them on +y.
    """
    c = np.asarray(center, dtype=float)
    r = radius + hand.tip_radius
    targets = {
        "index": c + [0.03, -r, 0.0],
        "ring": c + [-0.03, -r, 0.0],
        "thumb": c + [0.0, r, 0.0],
    }
    return np.array([targets[f.name] for f in hand.fingers])


def cylinder_grasp(hand: HandModel, center=CYLINDER_CENTER, radius=CYLINDER_RADIUS,
                   inset: float = 0.0) -> GraspState:
    Q0 = ik_fingertips(hand, cylinder_targets(hand, center, radius), GRASP_SEED)
    return make_grasp(hand, Q0, Pose(center), inset=inset)


@dataclass
class Scenario:
    id: str
    hand: HandModel
    grasp: GraspState
    waypoints: np.ndarray  # (k, 3) meters or (k, 6) meters + radians
    loop: LoopConfig = field(default_factory=LoopConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    noise: PerturbationConfig = field(default_factory=PerturbationConfig)
    noise_preset: str = "none"
    seeds: list = field(default_factory=lambda: [0])
    hand_file: str = ""


def _pose(d: dict | None) -> Pose:
    if not d:
        return Pose()
    p = np.asarray(d.get("p_cm", [0, 0, 0]), dtype=float) * 0.01
    r = np.deg2rad(np.asarray(d.get("r_deg", [0, 0, 0]), dtype=float))
    return Pose(p, r)


def _resolve(path: str, base: Path) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    for candidate in (base / p, data_path(p.name)):
        if candidate.exists():
            return candidate
    return base / p


def scenario_from_dict(d: dict, base: Path = Path(".")) -> Scenario:
    hand_path = _resolve(d.get("hand_file", "synth-3x4.json"), base)
    if not hand_path.exists():
        raise FileNotFoundError(f"hand file not found: {hand_path}")
    hand = load_hand(hand_path)

    g = d.get("grasp", {"cylinder": {}})
    inset = float(g.get("inset_mm", 0.0)) * 1e-3
    if "Q0" in g:
        Q0 = np.asarray(g["Q0"], dtype=float)
        pose0 = _pose(d.get("object_pose0"))
        grasp = make_grasp(hand, Q0, pose0, inset)
    elif "fingertip_targets_cm" in g:
        targets = np.asarray(g["fingertip_targets_cm"], dtype=float) * 0.01
        seed = np.asarray(g.get("Q_seed", GRASP_SEED), dtype=float)
        Q0 = ik_fingertips(hand, targets, seed)
        grasp = make_grasp(hand, Q0, _pose(d.get("object_pose0")), inset)
    elif "cylinder" in g:
        cyl = g["cylinder"] or {}
        center = np.asarray(cyl.get("center_cm", CYLINDER_CENTER * 100), dtype=float) * 0.01
        radius = float(cyl.get("radius_cm", CYLINDER_RADIUS * 100)) * 0.01
        grasp = cylinder_grasp(hand, center, radius, inset)
    else:
        raise ScenarioError("grasp needs one of Q0, fingertip_targets_cm or cylinder")

    if "pose_goals" in d:
        wps = np.array([[*(np.asarray(p["translation_cm"], float) * 0.01),
                         *np.deg2rad(np.asarray(p["rotation_deg"], float))]
                        for p in d["pose_goals"]]).reshape(-1, 6)
    else:
        wps = np.asarray(d.get("waypoints_cm", []), dtype=float).reshape(-1, 3) * 0.01

    lc = d.get("loop", {})
    loop = LoopConfig(
        N_replan=int(lc.get("N_replan", 4)),
        time_budget=float(lc.get("time_budget_s", 20.0)),
        first_T=int(lc.get("first_T", 3)),
        replan_T=int(lc.get("replan_T", 1)),
        return_to_initial=bool(lc.get("return_to_initial", True)),
        error_metric=lc.get("error_metric", "pose" if wps.shape[1:] == (6,) else "position"),
    )
    if loop.error_metric == "position" and wps.shape[1:] == (6,):
        raise ScenarioError("pose goals require error_metric 'pose'")

    pc = d.get("planner", {})
    defaults = PlannerConfig()
    planner = PlannerConfig(
        W_o=WeightMatrix.from_diag(pc["W_o"]) if "W_o" in pc else defaults.W_o,
        W_f=WeightMatrix.from_diag(pc["W_f"]) if "W_f" in pc else defaults.W_f,
        first_lambda=float(pc.get("first_lambda", defaults.first_lambda)),
        replan_lambda=float(pc.get("replan_lambda", defaults.replan_lambda)),
        collision_enabled=bool(pc.get("collision", True)),
        baseline=bool(pc.get("baseline", False)),
    )
    preset = d.get("noise_preset", "none")
    return Scenario(
        id=d.get("id", "scenario"),
        hand=hand,
        grasp=grasp,
        waypoints=wps,
        loop=loop,
        planner=planner,
        noise=perturbation_preset(preset),
        noise_preset=preset,
        seeds=[int(s) for s in d.get("seeds", [0])],
        hand_file=str(hand_path),
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.exists():
        # bare names resolve to the shipped scenarios
        shipped = data_path("scenarios", path.name if path.suffix else path.name + ".json")
        if not shipped.exists():
            raise FileNotFoundError(f"scenario file not found: {path}")
        path = shipped
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: {exc}") from exc
    return scenario_from_dict(d, path.parent)
