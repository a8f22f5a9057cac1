"""SO(3)/SE(3) helpers on the [p; r] product parameterization.

Rotations are stored as axis-angle vectors ``r`` (canonical, ``|r| <= pi``);
matrices are built on demand. Translation is additive, so a pose error is
``e = [p1 - p2; log(R1 R2^T)]`` rather than a coupled se(3) log.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# series fallbacks below these angles
EXP_LOG_EPS = 1e-8
JACOBIAN_EPS = 1e-6
ORTHO_TOL = 1e-8


class NonOrthonormalInput(ValueError):
    pass


def skew(v):
    """Hat operator: 3-vector -> 3x3 skew-symmetric matrix."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(S):
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def exp_so3(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    theta = np.linalg.norm(r)
    K = skew(r)
    if theta < EXP_LOG_EPS:
        return np.eye(3) + K + 0.5 * K @ K
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * K @ K


def log_so3(R, check: bool = True) -> np.ndarray:
    """Principal rotation vector of ``R`` (magnitude in [0, pi])."""
    R = np.asarray(R, dtype=float)
    if check:
        if R.shape != (3, 3):
            raise NonOrthonormalInput(f"expected 3x3 matrix, got {R.shape}")
        if (np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL
                or np.linalg.det(R) < 0.0):
            raise NonOrthonormalInput("matrix is not a proper rotation")
    cos_t = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    w = vee(R - R.T)  # 2 sin(theta) * axis
    sin_t = 0.5 * np.linalg.norm(w)
    theta = np.arctan2(sin_t, cos_t)
    if theta < EXP_LOG_EPS:
        return 0.5 * w
    if cos_t > -0.9:
        return theta / (2.0 * sin_t) * w
    # Near pi the antisymmetric part vanishes; the axis comes from the
    # symmetric part (R + R^T)/2 - cos(t) I = (1 - cos(t)) a a^T.
    B = 0.5 * (R + R.T) - cos_t * np.eye(3)
    vals, vecs = np.linalg.eigh(B)
    axis = vecs[:, np.argmax(vals)]
    s = axis @ w
    if abs(s) > 1e-14:
        axis = axis * np.sign(s)
    else:
        axis = axis * np.sign(axis[np.argmax(np.abs(axis))])
    return theta * axis


def canonical_rotvec(r) -> np.ndarray:
    """Return the equivalent rotation vector with norm <= pi."""
    r = np.asarray(r, dtype=float)
    if np.linalg.norm(r) <= np.pi:
        return r.copy()
    return log_so3(exp_so3(r), check=False)


def left_jacobian(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    theta = np.linalg.norm(r)
    if theta < JACOBIAN_EPS:
        return np.eye(3) + 0.5 * skew(r)
    a = r / theta
    s = np.sin(theta) / theta
    return (s * np.eye(3) + (1.0 - s) * np.outer(a, a)
            + (1.0 - np.cos(theta)) / theta * skew(a))


def left_jacobian_inv(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    theta = np.linalg.norm(r)
    if theta < JACOBIAN_EPS:
        return np.eye(3) - 0.5 * skew(r)
    a = r / theta
    half = 0.5 * theta
    c = half / np.tan(half)
    return c * np.eye(3) + (1.0 - c) * np.outer(a, a) - half * skew(a)


def cross_rows(a, b) -> np.ndarray:
    """Row-wise cross product of (n, 3) arrays (cheaper than np.cross for small n)."""
    return np.stack([a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1],
                     a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2],
                     a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]], axis=1)


def log_so3_batch(Rs) -> np.ndarray:
    """``log_so3`` over a stack of rotations (n, 3, 3), no orthonormality check."""
    Rs = np.asarray(Rs, dtype=float)
    w = np.stack([Rs[:, 2, 1] - Rs[:, 1, 2], Rs[:, 0, 2] - Rs[:, 2, 0],
                  Rs[:, 1, 0] - Rs[:, 0, 1]], axis=1)
    cos_t = np.clip(0.5 * (np.trace(Rs, axis1=1, axis2=2) - 1.0), -1.0, 1.0)
    sin_t = 0.5 * np.sqrt((w * w).sum(axis=1))
    theta = np.arctan2(sin_t, cos_t)
    out = 0.5 * w
    big = theta >= EXP_LOG_EPS
    if big.any():
        out[big] = (theta[big] / (2.0 * sin_t[big]))[:, None] * w[big]
    for k in np.flatnonzero(cos_t <= -0.9):
        out[k] = log_so3(Rs[k], check=False)
    return out


def left_jacobian_inv_rows(rs, vs) -> np.ndarray:
    """Rows ``v_k^T J_l(r_k)^-1`` for stacks ``rs``, ``vs`` of shape (n, 3).

    Uses ``v^T a^ = -(a x v)^T`` so no 3x3 matrices are formed.
    """
    rs = np.asarray(rs, dtype=float)
    vs = np.asarray(vs, dtype=float)
    theta = np.sqrt((rs * rs).sum(axis=1))
    out = vs + 0.5 * cross_rows(rs, vs)
    big = theta >= JACOBIAN_EPS
    if big.any():
        t = theta[big]
        a = rs[big] / t[:, None]
        v = vs[big]
        half = 0.5 * t
        c = half / np.tan(half)
        out[big] = (c[:, None] * v + ((1.0 - c) * (a * v).sum(axis=1))[:, None] * a
                    + half[:, None] * cross_rows(a, v))
    return out


@dataclass(frozen=True)
class Pose:
    """Rigid transform: position ``p`` (m) and rotation vector ``r`` (rad)."""

    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    r: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(3))
        object.__setattr__(self, "r", canonical_rotvec(np.asarray(self.r, dtype=float).reshape(3)))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_rp(cls, R, p) -> "Pose":
        return cls(p, log_so3(R, check=False))

    @classmethod
    def from_matrix(cls, M) -> "Pose":
        M = np.asarray(M, dtype=float)
        return cls(M[:3, 3], log_so3(M[:3, :3]))

    @classmethod
    def from_xi(cls, xi) -> "Pose":
        xi = np.asarray(xi, dtype=float)
        return cls(xi[:3], xi[3:6])

    @property
    def R(self) -> np.ndarray:
        return exp_so3(self.r)

    @property
    def xi(self) -> np.ndarray:
        return np.concatenate([self.p, self.r])

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.p
        return M

    def __matmul__(self, other: "Pose") -> "Pose":
        R = self.R
        return Pose.from_rp(R @ other.R, R @ other.p + self.p)

    def inv(self) -> "Pose":
        Rt = self.R.T
        return Pose(-Rt @ self.p, -self.r)

    def apply(self, points) -> np.ndarray:
        """Map point(s) given in this frame to the parent frame."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.R.T + self.p

    def allclose(self, other: "Pose", atol: float = 1e-10) -> bool:
        return (np.allclose(self.p, other.p, atol=atol)
                and np.allclose(self.R, other.R, atol=atol))


@dataclass(frozen=True)
class WeightMatrix:
    """Diagonal pose weights: ``wp`` on position (1/m^2), ``wr`` on rotation (1/rad^2)."""

    wp: np.ndarray = field(default_factory=lambda: np.ones(3))
    wr: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        wp = np.asarray(self.wp, dtype=float).reshape(3)
        wr = np.asarray(self.wr, dtype=float).reshape(3)
        if (wp < 0).any() or (wr < 0).any():
            raise ValueError("weights must be nonnegative")
        object.__setattr__(self, "wp", wp)
        object.__setattr__(self, "wr", wr)

    @classmethod
    def from_diag(cls, diag) -> "WeightMatrix":
        diag = np.asarray(diag, dtype=float)
        return cls(diag[:3], diag[3:6])

    @property
    def diag(self) -> np.ndarray:
        return np.concatenate([self.wp, self.wr])


def rotation_error(R1, R2) -> np.ndarray:
    """``log(R1 R2^T)``: rotation error expressed in the common frame."""
    return log_so3(R1 @ R2.T, check=False)


def pose_error(T: Pose, T_d: Pose) -> np.ndarray:
    return np.concatenate([T.p - T_d.p, rotation_error(T.R, T_d.R)])


def pose_distance(T: Pose, T_d: Pose, W: WeightMatrix):
    """Weighted half squared distance between poses.

    Returns ``(d, e)`` with ``e = [p_e; r_e]`` so callers can reuse it for
    the gradient.
    """
    e = pose_error(T, T_d)
    return 0.5 * float(e @ (W.diag * e)), e


def error_to_perturbation(e) -> np.ndarray:
    """d e / d phi for a left perturbation phi = [dp; dphi] of the first pose."""
    M = np.eye(6)
    M[3:, 3:] = left_jacobian_inv(e[3:])
    return M


def pose_distance_grad(T: Pose, T_d: Pose, W: WeightMatrix, J_x) -> np.ndarray:
    """Gradient of ``pose_distance`` w.r.t. a variable ``x``.

    ``J_x`` (6 x n) maps ``x_dot`` to the left-perturbation rate of ``T``:
    position velocity on top, spatial angular velocity below.
    """
    e = pose_error(T, T_d)
    row = (W.diag * e) @ error_to_perturbation(e)
    return row @ np.asarray(J_x, dtype=float)


def object_jacobian(r) -> np.ndarray:
    """Space Jacobian of a free pose ``xi = [p; r]``: blockdiag(I, J_l(r))."""
    J = np.eye(6)
    J[3:, 3:] = left_jacobian(r)
    return J


def slerp_rotvec(r0, r1, s: float) -> np.ndarray:
    R0 = exp_so3(r0)
    delta = log_so3(exp_so3(r1) @ R0.T, check=False)
    return log_so3(exp_so3(s * delta) @ R0, check=False)
