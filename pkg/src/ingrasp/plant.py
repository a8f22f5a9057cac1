"""Quasi-static grasp simulator.

The object pose is whatever rigid transform best maps the (slowly drifting)
object-frame contact points onto the current fingertip centers. Noise knobs
perturb joint tracking, contact locations and the reported object pose.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .hand import GraspState, HandModel, fingertip_positions, fk_fingertip_rp
from .se3 import Pose, exp_so3, log_so3


class DroppedObject(RuntimeError):
    pass


class DegenerateConfiguration(ValueError):
    pass


@dataclass(frozen=True)
class PerturbationConfig:
    joint_tracking_std: float = 0.0  # rad, per joint per command
    contact_drift_std: float = 0.0  # m, per point per step (random walk)
    sensing_std_pos: float = 0.0  # m
    sensing_std_rot: float = 0.0  # rad
    slip_threshold: float = 0.008  # m, per-step contact displacement that drops the object
    rolling_gain: float = 0.0  # fraction of tip radius used for rolling contact shift
    seed: int = 0

    def __post_init__(self):
        for name in ("joint_tracking_std", "contact_drift_std", "sensing_std_pos",
                     "sensing_std_rot", "rolling_gain"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.slip_threshold <= 0:
            raise ValueError("slip_threshold must be > 0")

    def with_seed(self, seed: int) -> "PerturbationConfig":
        return replace(self, seed=int(seed))


PRESETS = {
    "none": PerturbationConfig(),
    "paper-like": PerturbationConfig(
        joint_tracking_std=0.01,
        contact_drift_std=0.0003,
        sensing_std_pos=0.0005,
        sensing_std_rot=0.01,
        slip_threshold=0.008,
        rolling_gain=1.0,
    ),
}


def perturbation_preset(name: str, seed: int = 0) -> PerturbationConfig:
    try:
        return PRESETS[name].with_seed(seed)
    except KeyError:
        raise KeyError(f"unknown noise preset {name!r}; choose from {sorted(PRESETS)}") from None


def register_rigid(points_src, points_dst) -> Pose:
    """Least-squares rigid transform ``G`` with ``G(src) ~ dst`` (Kabsch, no scaling)."""
    A = np.asarray(points_src, dtype=float)
    B = np.asarray(points_dst, dtype=float)
    if A.shape != B.shape or A.ndim != 2 or A.shape[1] != 3 or len(A) < 3:
        raise DegenerateConfiguration(f"need matching (n>=3, 3) point sets, got {A.shape} and {B.shape}")
    ca, cb = A.mean(axis=0), B.mean(axis=0)
    A0, B0 = A - ca, B - cb
    scale = max(np.abs(A0).max(), np.abs(B0).max(), 1e-300)
    sv = np.linalg.svd(A0, compute_uv=False)
    if sv[1] <= 1e-9 * scale * np.sqrt(len(A)):
        raise DegenerateConfiguration("points are collinear or coincident")
    H = A0.T @ B0
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ D @ U.T
    return Pose.from_rp(R, cb - R @ ca)


def registration_residuals(pose: Pose, points_src, points_dst) -> np.ndarray:
    return np.linalg.norm(pose.apply(points_src) - np.asarray(points_dst), axis=1)


@dataclass
class PlantState:
    Q_true: np.ndarray
    object_pose_true: Pose
    grasp_points_current: np.ndarray
    dropped: bool = False
    steps: int = 0
    drift_path: float = 0.0  # accumulated |contact displacement| in the object frame
    tip_rotations: np.ndarray | None = None  # fingertip orientations in the object frame


@dataclass
class GraspPlant:
    """Stateful simulator for one grasp. ``reset`` restores the initial grasp."""

    hand: HandModel
    grasp: GraspState
    cfg: PerturbationConfig = field(default_factory=PerturbationConfig)

    def __post_init__(self):
        if self.hand.n_fingers < 3:
            raise ValueError("rigid registration needs at least three fingers")
        self.reset()

    def reset(self, cfg: PerturbationConfig | None = None) -> PlantState:
        if cfg is not None:
            self.cfg = cfg
        self.rng = np.random.default_rng(self.cfg.seed)
        g = self.grasp
        self.state = PlantState(
            Q_true=g.Q0.copy(),
            object_pose_true=g.object_pose0,
            grasp_points_current=g.grasp_points.copy(),
            tip_rotations=self._tip_rotations(g.Q0, g.object_pose0),
        )
        self.log: list[dict] = []
        return self.state

    def _tip_rotations(self, Q, pose: Pose) -> np.ndarray:
        Rt = pose.R.T
        return np.array([Rt @ fk_fingertip_rp(self.hand, i, q)[0]
                         for i, q in enumerate(self.hand.split(Q))])

    def sense(self) -> Pose:
        """Noisy reading of the object pose (draws from the plant RNG)."""
        c = self.cfg
        true = self.state.object_pose_true
        dp = self.rng.normal(0.0, c.sensing_std_pos, 3) if c.sensing_std_pos else np.zeros(3)
        dr = self.rng.normal(0.0, c.sensing_std_rot, 3) if c.sensing_std_rot else np.zeros(3)
        return Pose.from_rp(exp_so3(dr) @ true.R, true.p + dp)

    def read_joints(self) -> np.ndarray:
        return self.state.Q_true.copy()

    def _rolling_shift(self, tip_rot_new: np.ndarray) -> np.ndarray:
        """Contact-center displacement from rolling a spherical tip on the object.

        A sphere of radius rho turning by dphi relative to the surface (outward
        normal n) without slipping carries its center by rho * dphi x n.
        """
        s = self.state
        rho = self.cfg.rolling_gain * self.hand.tip_radius
        pts = s.grasp_points_current
        normals = pts - pts.mean(axis=0)
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        shift = np.zeros_like(pts)
        for i in range(len(pts)):
            dphi = log_so3(tip_rot_new[i] @ s.tip_rotations[i].T, check=False)
            shift[i] = rho * np.cross(dphi, normals[i])
        return shift

    def execute_step(self, Q_cmd) -> Pose:
        """Command one joint target; returns the sensed object pose."""
        s = self.state
        if s.dropped:
            raise DroppedObject("object already dropped; plant rejects further commands")
        c = self.cfg
        Q_cmd = np.asarray(Q_cmd, dtype=float)
        noise = self.rng.normal(0.0, c.joint_tracking_std, Q_cmd.shape) if c.joint_tracking_std else 0.0
        Q = self.hand.clamp(Q_cmd + noise)
        tips = fingertip_positions(self.hand, Q)

        pts = s.grasp_points_current
        if c.contact_drift_std:
            pts = pts + self.rng.normal(0.0, c.contact_drift_std, pts.shape)
        pose = register_rigid(pts, tips)
        if c.rolling_gain:
            # rolling depends on the tip/object relative rotation, so refit once
            pts = pts + self._rolling_shift(self._tip_rotations(Q, pose))
            pose = register_rigid(pts, tips)
        res = registration_residuals(pose, pts, tips)
        s.Q_true = Q
        s.object_pose_true = pose
        s.steps += 1
        if res.max() > c.slip_threshold:
            s.dropped = True
            self._log(Q_cmd, pose, res)
            raise DroppedObject(
                f"contact slipped {res.max() * 1e3:.1f} mm in one step "
                f"(threshold {c.slip_threshold * 1e3:.1f} mm)")
        # contacts slide to wherever the fingertips actually ended up
        new_pts = pose.inv().apply(tips)
        s.drift_path += float(np.linalg.norm(new_pts - s.grasp_points_current, axis=1).sum())
        s.grasp_points_current = new_pts
        s.tip_rotations = self._tip_rotations(Q, pose)
        sensed = self.sense()
        self._log(Q_cmd, sensed, res)
        return sensed

    def _log(self, Q_cmd, sensed: Pose, res):
        self.log.append({
            "step": self.state.steps,
            "Q_cmd": np.asarray(Q_cmd).copy(),
            "sensed": sensed,
            "residual_max": float(np.max(res)),
        })

    def write_log_csv(self, path) -> None:
        dof = self.hand.dof
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", *[f"q{k}" for k in range(dof)],
                        "x", "y", "z", "rx", "ry", "rz", "residual_max"])
            for row in self.log:
                w.writerow([row["step"], *(f"{v:.9f}" for v in row["Q_cmd"]),
                            *(f"{v:.9f}" for v in row["sensed"].xi),
                            f"{row['residual_max']:.9f}"])


def reset(hand: HandModel, grasp: GraspState, cfg: PerturbationConfig) -> GraspPlant:
    return GraspPlant(hand, grasp, cfg)


def execute_step(plant: GraspPlant, Q_cmd):
    sensed = plant.execute_step(Q_cmd)
    return plant.state, sensed
