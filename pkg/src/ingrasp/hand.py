"""Serial-chain multi-finger hand: FK, space Jacobians, critical points, IK."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .se3 import Pose, skew

IK_MAX_ITER = 100
IK_TOL = 2e-3


class DimensionMismatch(ValueError):
    pass


class IkNotConverged(RuntimeError):
    def __init__(self, message, q=None, residuals=None):
        super().__init__(message)
        self.q = q
        self.residuals = residuals


@dataclass(frozen=True)
class FingerChain:
    """Revolute chain. Joint frame k = frame(k-1) . offset_k . Rot(axis_k, q_k)."""

    name: str
    base_pose: Pose
    axes: np.ndarray  # (k, 3) unit axes in each joint's own frame
    offsets: tuple  # k Poses
    tip_offset: Pose
    limits: np.ndarray  # (k, 2)

    def __post_init__(self):
        axes = np.asarray(self.axes, dtype=float).reshape(-1, 3)
        limits = np.asarray(self.limits, dtype=float).reshape(-1, 2)
        if len(self.offsets) != len(axes) or len(limits) != len(axes):
            raise ValueError(f"finger {self.name}: axes/offsets/limits length mismatch")
        if len(axes) and np.abs(np.linalg.norm(axes, axis=1) - 1.0).max() > 1e-9:
            raise ValueError(f"finger {self.name}: joint axes must be unit vectors")
        if (limits[:, 0] >= limits[:, 1]).any():
            raise ValueError(f"finger {self.name}: joint limits need min < max")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "limits", limits)
        object.__setattr__(self, "offsets", tuple(self.offsets))

    @property
    def dof(self) -> int:
        return len(self.axes)

    def _cache(self):
        c = self.__dict__.get("_kin")
        if c is None:
            K = np.array([skew(a) for a in self.axes]).reshape(-1, 3, 3)
            c = (K, K @ K,
                 np.array([o.R for o in self.offsets]).reshape(-1, 3, 3),
                 np.array([o.p for o in self.offsets]).reshape(-1, 3),
                 self.base_pose.R, self.base_pose.p, self.tip_offset.R, self.tip_offset.p)
            object.__setattr__(self, "_kin", c)
        return c

    def frames(self, q):
        """World rotation/position of every joint frame plus the tip frame.

        Returns ``(Rs, ps, axes)``: entries ``k < dof`` of ``Rs``/``ps`` are
        the frame of joint ``k`` after its rotation, the last entry is the
        tip; ``axes`` holds the joint axes in world coordinates.
        """
        q = np.asarray(q, dtype=float)
        if q.shape != (self.dof,):
            raise DimensionMismatch(
                f"finger {self.name} expects {self.dof} joints, got shape {q.shape}")
        K, K2, offR, offp, R, p, tipR, tipp = self._cache()
        s, c = np.sin(q), np.cos(q)
        Rs, ps, axes = [], [], []
        for k in range(self.dof):
            p = p + R @ offp[k]
            R = R @ offR[k]
            axes.append(R @ self.axes[k])
            R = R @ (_EYE3 + s[k] * K[k] + (1.0 - c[k]) * K2[k])
            Rs.append(R)
            ps.append(p)
        ps.append(p + R @ tipp)
        Rs.append(R @ tipR)
        return Rs, ps, axes

    def point_jacobian(self, q, link: int, local, frames=None):
        """Position and 3 x dof position Jacobian of a point fixed to a link.

        ``link`` counts joints: link k (1-based) moves with joint k; link 0
        is the base.
        """
        Rs, ps, axes = frames if frames is not None else self.frames(q)
        if link == 0:
            x = self.base_pose.apply(local)
        else:
            x = ps[link - 1] + Rs[link - 1] @ np.asarray(local, dtype=float)
        J = np.zeros((3, self.dof))
        for k in range(link):
            J[:, k] = _cross(axes[k], x - ps[k])
        return x, J


def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


_EYE3 = np.eye(3)


@dataclass(frozen=True)
class CollisionPoint:
    finger: int
    link: int
    position: np.ndarray


@dataclass(frozen=True)
class HandModel:
    fingers: tuple
    collision_points: tuple = ()
    min_pair_distance: float = 0.012
    thumb: str | None = None
    tip_radius: float = 0.0
    name: str = "hand"
    pairs: tuple = field(init=False)

    def __post_init__(self):
        if len(self.fingers) < 2:
            raise ValueError("a hand needs at least two fingers")
        object.__setattr__(self, "fingers", tuple(self.fingers))
        object.__setattr__(self, "collision_points", tuple(self.collision_points))
        pts = self.collision_points
        pairs = tuple((a, b) for a in range(len(pts)) for b in range(a + 1, len(pts))
                      if pts[a].finger != pts[b].finger)
        object.__setattr__(self, "pairs", pairs)

    @property
    def n_fingers(self) -> int:
        return len(self.fingers)

    @property
    def dofs(self) -> list[int]:
        return [f.dof for f in self.fingers]

    @property
    def dof(self) -> int:
        return sum(self.dofs)

    @property
    def slices(self) -> list[slice]:
        out, start = [], 0
        for d in self.dofs:
            out.append(slice(start, start + d))
            start += d
        return out

    @property
    def q_min(self) -> np.ndarray:
        return np.concatenate([f.limits[:, 0] for f in self.fingers])

    @property
    def q_max(self) -> np.ndarray:
        return np.concatenate([f.limits[:, 1] for f in self.fingers])

    def finger_index(self, name: str) -> int:
        for i, f in enumerate(self.fingers):
            if f.name == name:
                return i
        raise KeyError(name)

    @property
    def thumb_index(self) -> int:
        if self.thumb is None:
            raise ValueError("hand model does not designate a thumb")
        return self.finger_index(self.thumb)

    def split(self, Q) -> list[np.ndarray]:
        Q = np.asarray(Q, dtype=float)
        if Q.shape != (self.dof,):
            raise DimensionMismatch(f"expected {self.dof} joints, got shape {Q.shape}")
        return [Q[s] for s in self.slices]

    def clamp(self, Q) -> np.ndarray:
        return np.clip(Q, self.q_min, self.q_max)


def fk_fingertip(hand: HandModel, finger: int, q) -> Pose:
    Rs, ps, _ = hand.fingers[finger].frames(q)
    return Pose.from_rp(Rs[-1], ps[-1])


def fk_fingertip_rp(hand: HandModel, finger: int, q):
    """Tip rotation matrix and position without the rotation-vector round trip."""
    Rs, ps, _ = hand.fingers[finger].frames(q)
    return Rs[-1], ps[-1]


def fingertip_positions(hand: HandModel, Q) -> np.ndarray:
    return np.array([fk_fingertip_rp(hand, i, q)[1] for i, q in enumerate(hand.split(Q))])


def tip_jacobian(frames) -> np.ndarray:
    """6 x dof fingertip Jacobian from precomputed ``FingerChain.frames`` output."""
    Rs, ps, axes = frames
    J = np.zeros((6, len(axes)))
    for k in range(len(axes)):
        J[:3, k] = _cross(axes[k], ps[-1] - ps[k])
        J[3:, k] = axes[k]
    return J


def space_jacobian(hand: HandModel, finger: int, q) -> np.ndarray:
    """6 x dof Jacobian: fingertip point velocity over spatial angular velocity."""
    return tip_jacobian(hand.fingers[finger].frames(q))


def fk_and_jacobian(hand: HandModel, finger: int, q):
    """``(R_tip, p_tip, J)`` in one pass over the chain."""
    frames = hand.fingers[finger].frames(q)
    return frames[0][-1], frames[1][-1], tip_jacobian(frames)


def collision_points_world(hand: HandModel, Q, with_jacobian: bool = False, frames=None):
    qs = hand.split(Q)
    if frames is None:
        frames = {}
    xs, Js = [], []
    for cp in hand.collision_points:
        fr = frames.get(cp.finger)
        if fr is None:
            fr = frames[cp.finger] = hand.fingers[cp.finger].frames(qs[cp.finger])
        x, J = hand.fingers[cp.finger].point_jacobian(qs[cp.finger], cp.link, cp.position, fr)
        xs.append(x)
        Js.append(J)
    if with_jacobian:
        return xs, Js
    return xs


def collision_distances(hand: HandModel, Q) -> np.ndarray:
    xs = collision_points_world(hand, Q)
    return np.array([np.linalg.norm(xs[a] - xs[b]) for a, b in hand.pairs])


def collision_distances_and_grad(hand: HandModel, Q, frames=None):
    """Pair distances and their gradient (n_pairs x dof)."""
    xs, Js = collision_points_world(hand, Q, with_jacobian=True, frames=frames)
    slices = hand.slices
    d = np.zeros(len(hand.pairs))
    G = np.zeros((len(hand.pairs), hand.dof))
    for k, (a, b) in enumerate(hand.pairs):
        diff = xs[a] - xs[b]
        dist = np.linalg.norm(diff)
        d[k] = dist
        if dist == 0.0:
            continue
        u = diff / dist
        fa = hand.collision_points[a].finger
        fb = hand.collision_points[b].finger
        G[k, slices[fa]] += u @ Js[a]
        G[k, slices[fb]] -= u @ Js[b]
    return d, G


def _ik_finger(chain: FingerChain, target, q_seed, max_iter: int, damping: float):
    q = np.clip(np.asarray(q_seed, dtype=float).copy(), chain.limits[:, 0], chain.limits[:, 1])
    lam = damping
    target = np.asarray(target, dtype=float)

    def residual(qq):
        _, ps, _ = chain.frames(qq)
        return ps[-1] - target

    err = residual(q)
    iters = 0
    for iters in range(1, max_iter + 1):
        if np.linalg.norm(err) < 1e-10:
            iters -= 1
            break
        _, J = chain.point_jacobian(q, chain.dof, chain.tip_offset.p)
        # damped least squares step, clamped to the joint box
        A = J @ J.T + lam**2 * np.eye(3)
        dq = -J.T @ np.linalg.solve(A, err)
        q_new = np.clip(q + dq, chain.limits[:, 0], chain.limits[:, 1])
        err_new = residual(q_new)
        if np.linalg.norm(err_new) < np.linalg.norm(err):
            q, err = q_new, err_new
            lam = max(lam * 0.5, 1e-6)
        else:
            lam = min(lam * 4.0, 10.0)
    return q, float(np.linalg.norm(err)), iters


def ik_fingertips(hand: HandModel, targets, Q_seed, max_iter: int = IK_MAX_ITER,
                  tol: float = IK_TOL, damping: float = 1e-3, return_info: bool = False):
    """Joint vector placing every fingertip center at its target position.

    Damped least squares per finger with joint-limit clamping. Raises
    ``IkNotConverged`` if any finger's residual exceeds ``tol`` (m).
    """
    targets = np.asarray(targets, dtype=float)
    if targets.shape != (hand.n_fingers, 3):
        raise DimensionMismatch(
            f"expected {hand.n_fingers} targets of 3 coordinates, got shape {targets.shape}")
    qs = hand.split(Q_seed)
    out, residuals, iters = [], [], []
    for chain, target, q0 in zip(hand.fingers, targets, qs):
        q, res, it = _ik_finger(chain, target, q0, max_iter, damping)
        out.append(q)
        residuals.append(res)
        iters.append(it)
    Q = np.concatenate(out)
    residuals = np.array(residuals)
    if residuals.max() > tol:
        raise IkNotConverged(
            f"IK residual {residuals.max() * 1e3:.2f} mm exceeds {tol * 1e3:.1f} mm",
            q=Q, residuals=residuals)
    if return_info:
        return Q, {"residuals": residuals, "iterations": iters}
    return Q


@dataclass(frozen=True)
class GraspState:
    """Initial grasp: joints, object pose and fingertip data in the object frame."""

    Q0: np.ndarray
    object_pose0: Pose
    grasp_points: np.ndarray  # (n, 3) fingertip centers in the object frame
    grasp_rotations: np.ndarray  # (n, 3, 3) fingertip orientations in the object frame

    def __post_init__(self):
        object.__setattr__(self, "Q0", np.asarray(self.Q0, dtype=float))
        object.__setattr__(self, "grasp_points", np.asarray(self.grasp_points, dtype=float))
        object.__setattr__(self, "grasp_rotations", np.asarray(self.grasp_rotations, dtype=float))


def make_grasp(hand: HandModel, Q0, object_pose0: Pose, inset: float = 0.0) -> GraspState:
    """Record fingertip positions/orientations in the object frame.

    A positive ``inset`` moves each stored point that far toward the centroid
    of the grasp points.
    """
    Q0 = np.asarray(Q0, dtype=float)
    inv = object_pose0.inv()
    Rinv = inv.R
    pts, rots = [], []
    for i, q in enumerate(hand.split(Q0)):
        R, p = fk_fingertip_rp(hand, i, q)
        pts.append(Rinv @ p + inv.p)
        rots.append(Rinv @ R)
    pts = np.array(pts)
    if inset:
        c = pts.mean(axis=0)
        d = c - pts
        n = np.linalg.norm(d, axis=1, keepdims=True)
        pts = pts + inset * np.divide(d, n, out=np.zeros_like(d), where=n > 0)
    return GraspState(Q0, object_pose0, pts, np.array(rots))


def _pose_from_json(d) -> Pose:
    if d is None:
        return Pose()
    return Pose(d.get("p", [0.0, 0.0, 0.0]), d.get("r", [0.0, 0.0, 0.0]))


def hand_from_dict(spec: dict) -> HandModel:
    fingers = []
    for f in spec["fingers"]:
        joints = f.get("joints", [])
        fingers.append(FingerChain(
            name=f["name"],
            base_pose=_pose_from_json(f.get("base_pose")),
            axes=np.array([j["axis"] for j in joints], dtype=float).reshape(-1, 3),
            offsets=tuple(_pose_from_json(j.get("offset")) for j in joints),
            tip_offset=_pose_from_json(f.get("tip_offset")),
            limits=np.array(f.get("limits", []), dtype=float).reshape(-1, 2),
        ))
    cps = tuple(CollisionPoint(int(c["finger"]), int(c["link"]), np.asarray(c["position"], dtype=float))
                for c in spec.get("collision_points", []))
    return HandModel(
        fingers=tuple(fingers),
        collision_points=cps,
        min_pair_distance=float(spec.get("min_pair_distance", 0.0)),
        thumb=spec.get("thumb"),
        tip_radius=float(spec.get("tip_radius", 0.0)),
        name=spec.get("name", "hand"),
    )


def load_hand(path) -> HandModel:
    with open(path) as fh:
        return hand_from_dict(json.load(fh))


def default_hand_path() -> Path:
    return Path(str(resources.files("ingrasp") / "data" / "synth-3x4.json"))


def default_hand() -> HandModel:
    return load_hand(default_hand_path())
