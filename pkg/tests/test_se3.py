import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.linalg import expm
from scipy.spatial.transform import Rotation

from ingrasp.se3 import (NonOrthonormalInput, Pose, WeightMatrix, canonical_rotvec, exp_so3,
                         left_jacobian, left_jacobian_inv, log_so3, object_jacobian, pose_distance,
                         pose_distance_grad, skew, slerp_rotvec, vee)

finite = st.floats(-3.0, 3.0, allow_nan=False)
vec3 = arrays(float, 3, elements=finite)


def rotvec_with_angle(rng, theta):
    a = rng.normal(size=3)
    return theta * a / np.linalg.norm(a)


def series_exp(r, terms=20):
    K = skew(r)
    out, term = np.eye(3), np.eye(3)
    for k in range(1, terms):
        term = term @ K / k
        out = out + term
    return out


def test_exp_identity_and_quarter_turn():
    assert np.array_equal(exp_so3(np.zeros(3)), np.eye(3))
    R = exp_so3([0, 0, np.pi / 2])
    assert np.allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_exp_matches_power_series():
    rng = np.random.default_rng(3)
    for _ in range(20):
        r = rotvec_with_angle(rng, 0.3)
        assert np.abs(exp_so3(r) - series_exp(r)).max() < 1e-12
        assert np.abs(exp_so3(r) - expm(skew(r))).max() < 1e-12


def test_exp_small_angle_branch_continuous():
    r = np.array([3e-9, -1e-9, 2e-9])
    assert np.abs(exp_so3(r) - expm(skew(r))).max() < 1e-16


def test_log_examples():
    assert np.array_equal(log_so3(np.eye(3)), np.zeros(3))
    r = np.array([0.1, -0.2, 0.3])
    assert np.abs(log_so3(exp_so3(r)) - r).max() < 1e-10
    theta = np.pi - 1e-4
    out = log_so3(exp_so3([theta, 0, 0]))
    assert abs(np.linalg.norm(out) - theta) < 1e-9
    assert np.allclose(out / np.linalg.norm(out), [1, 0, 0], atol=1e-9)


def test_log_at_pi_and_agrees_with_scipy():
    out = log_so3(np.diag([1.0, -1.0, -1.0]))
    assert np.allclose(np.abs(out), [np.pi, 0, 0])
    rng = np.random.default_rng(0)
    for _ in range(200):
        R = Rotation.random(random_state=rng)
        mine = log_so3(R.as_matrix())
        ref = R.as_rotvec()
        assert np.allclose(exp_so3(mine), R.as_matrix(), atol=1e-12)
        if np.linalg.norm(ref) < np.pi - 1e-6:
            assert np.allclose(mine, ref, atol=1e-10)


def test_log_rejects_non_rotation():
    with pytest.raises(NonOrthonormalInput):
        log_so3(np.eye(3) * 1.01)
    with pytest.raises(NonOrthonormalInput):
        log_so3(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(NonOrthonormalInput):
        log_so3(np.eye(2))


@settings(max_examples=300, deadline=None)
@given(vec3)
def test_round_trip_property(r):
    r = canonical_rotvec(r)
    if np.linalg.norm(r) < np.pi - 1e-4:
        assert np.abs(log_so3(exp_so3(r)) - r).max() < 1e-9
    assert np.linalg.norm(log_so3(exp_so3(r))) <= np.pi + 1e-12


@settings(max_examples=200, deadline=None)
@given(vec3)
def test_exp_is_proper_rotation(r):
    R = exp_so3(r)
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-12
    assert abs(np.linalg.det(R) - 1.0) < 1e-12


def test_skew_vee():
    v = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(vee(skew(v)), v)
    assert np.allclose(skew(v) @ [4, 5, 6], np.cross(v, [4, 5, 6]))


def test_left_jacobian_identity_and_inverse():
    assert np.array_equal(left_jacobian(np.zeros(3)), np.eye(3))
    assert np.array_equal(left_jacobian_inv(np.zeros(3)), np.eye(3))
    rng = np.random.default_rng(5)
    r = rotvec_with_angle(rng, 0.5)
    assert np.abs(left_jacobian(r) @ left_jacobian_inv(r) - np.eye(3)).max() < 1e-10


def test_left_jacobian_finite_difference_definition():
    r = np.array([0.0, 0.0, 0.2])
    h = 1e-6
    R = exp_so3(r)
    J = np.column_stack([log_so3(exp_so3(r + h * d) @ R.T) / h for d in np.eye(3)])
    assert np.abs(J - left_jacobian(r)).max() < 1e-5


def test_left_jacobian_inv_matches_matrix_inverse():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(100):
        r = rotvec_with_angle(rng, rng.uniform(0, np.pi))
        worst = max(worst, np.abs(left_jacobian_inv(r) - np.linalg.inv(left_jacobian(r))).max())
    assert worst < 1e-9


def test_left_jacobian_series_branch():
    r = np.array([4e-7, 1e-7, -3e-7])
    assert np.abs(left_jacobian(r) - left_jacobian(r * 10)).max() < 1e-5
    assert np.abs(left_jacobian(r) @ left_jacobian_inv(r) - np.eye(3)).max() < 1e-12


@settings(max_examples=200, deadline=None)
@given(vec3)
def test_rT_jl_inv_is_rT(r):
    r = canonical_rotvec(r)
    if np.linalg.norm(r) < np.pi - 1e-3:
        assert np.abs(r @ left_jacobian_inv(r) - r).max() < 1e-10
        assert np.abs(r @ left_jacobian(r) - r).max() < 1e-10


def test_bch_linearization():
    rng = np.random.default_rng(11)
    for _ in range(50):
        r = rotvec_with_angle(rng, rng.uniform(0.1, 3.0))
        phi = rotvec_with_angle(rng, 1e-5)
        lhs = log_so3(exp_so3(phi) @ exp_so3(r))
        assert np.linalg.norm(lhs - (left_jacobian_inv(r) @ phi + r)) < 1e-8


def test_pose_composition_and_inverse():
    rng = np.random.default_rng(2)
    A, B, C = (Pose(rng.normal(size=3), rng.normal(size=3)) for _ in range(3))
    assert ((A @ B) @ C).allclose(A @ (B @ C))
    assert (A @ A.inv()).allclose(Pose.identity())
    M = A.matrix()
    assert Pose.from_matrix(M).allclose(A)
    assert Pose.from_xi(A.xi).allclose(A)
    pts = rng.normal(size=(4, 3))
    assert np.allclose(A.apply(pts), pts @ A.R.T + A.p)


def test_pose_canonicalizes_rotation():
    P = Pose(np.zeros(3), [0, 0, 1.5 * np.pi])
    assert np.linalg.norm(P.r) <= np.pi
    assert np.allclose(P.R, exp_so3([0, 0, 1.5 * np.pi]))


def test_weight_matrix_validation():
    with pytest.raises(ValueError):
        WeightMatrix.from_diag([1, 1, -1, 0, 0, 0])
    assert np.array_equal(WeightMatrix.from_diag(range(6)).diag, np.arange(6.0))


def test_pose_distance_examples():
    W = WeightMatrix.from_diag([1, 1, 1, 1, 1, 1])
    T = Pose([0.1, 0.2, 0.3], [0.3, 0.1, 0.0])
    assert pose_distance(T, T, W)[0] == 0.0
    d, e = pose_distance(Pose([1, 0, 0]), Pose(), WeightMatrix.from_diag([2, 2, 2, 1, 1, 1]))
    assert d == pytest.approx(1.0, abs=1e-15)
    assert np.array_equal(e, [1, 0, 0, 0, 0, 0])
    d, _ = pose_distance(Pose(r=[0, 0, np.pi / 2]), Pose(), W)
    assert d == pytest.approx(0.5 * (np.pi / 2) ** 2, rel=1e-12)
    assert d == pytest.approx(1.2337, abs=1e-4)


def test_pose_distance_symmetry():
    rng = np.random.default_rng(4)
    for _ in range(200):
        W = WeightMatrix.from_diag(rng.uniform(0, 10, 6))
        A, B = Pose(rng.normal(size=3), rng.normal(size=3)), Pose(rng.normal(size=3), rng.normal(size=3))
        assert abs(pose_distance(A, B, W)[0] - pose_distance(B, A, W)[0]) < 1e-12


def _fd_grad(xi, goal, W, h=1e-7):
    f = lambda z: pose_distance(Pose.from_xi(z), goal, W)[0]
    return np.array([(f(xi + h * d) - f(xi - h * d)) / (2 * h) for d in np.eye(6)])


def test_pose_distance_grad_matches_fd():
    rng = np.random.default_rng(8)
    for _ in range(100):
        xi = np.concatenate([rng.normal(size=3), rotvec_with_angle(rng, rng.uniform(0.05, 2.5))])
        goal = Pose(rng.normal(size=3), rng.normal(size=3))
        W = WeightMatrix.from_diag(rng.uniform(0.1, 10, 6))
        g = pose_distance_grad(Pose.from_xi(xi), goal, W, object_jacobian(xi[3:]))
        fd = _fd_grad(xi, goal, W)
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-6


def test_pose_distance_grad_zero_and_masking():
    T = Pose([0.1, 0, 0], [0.2, 0.1, 0])
    J = object_jacobian(T.r)
    W = WeightMatrix.from_diag([1, 2, 3, 1, 1, 1])
    assert np.array_equal(pose_distance_grad(T, T, W, J), np.zeros(6))
    Wp = WeightMatrix.from_diag([1, 2, 3, 0, 0, 0])
    g = pose_distance_grad(T, Pose(r=[0, 0, 1.0]), Wp, J)
    assert np.array_equal(g[3:], np.zeros(3))
    g2 = pose_distance_grad(Pose(T.p, [1.0, -0.5, 0.2]), Pose(r=[0, 0, 1.0]), Wp, J)
    assert np.array_equal(g, g2)


def test_slerp_endpoints():
    r0, r1 = np.array([0.1, 0.2, 0.3]), np.array([-0.4, 0.5, 1.0])
    assert np.allclose(slerp_rotvec(r0, r1, 0.0), r0)
    assert np.allclose(slerp_rotvec(r0, r1, 1.0), r1)
    mid = exp_so3(slerp_rotvec(r0, r1, 0.5))
    # equal angular distance to both ends
    d0 = np.linalg.norm(log_so3(mid @ exp_so3(r0).T))
    d1 = np.linalg.norm(log_so3(exp_so3(r1) @ mid.T))
    assert d0 == pytest.approx(d1, rel=1e-9)


def test_batch_helpers_match_scalar_versions():
    from ingrasp.se3 import cross_rows, left_jacobian_inv, left_jacobian_inv_rows, log_so3_batch
    rng = np.random.default_rng(21)
    a, b = rng.normal(size=(50, 3)), rng.normal(size=(50, 3))
    assert np.allclose(cross_rows(a, b), np.cross(a, b), atol=1e-15)
    # mix of generic, tiny and near-pi rotations
    rs = np.vstack([rng.normal(size=(20, 3)), rng.normal(size=(5, 3)) * 1e-9,
                    [[np.pi - 1e-7, 0, 0], [0, 0, -(np.pi - 1e-3)], [0, 0, 0]]])
    Rs = np.array([exp_so3(r) for r in rs])
    assert np.allclose(log_so3_batch(Rs), [log_so3(R) for R in Rs], atol=1e-9)
    vs = rng.normal(size=(len(rs), 3))
    rs_c = log_so3_batch(Rs)
    expect = np.array([v @ left_jacobian_inv(r) for r, v in zip(rs_c, vs)])
    assert np.allclose(left_jacobian_inv_rows(rs_c, vs), expect, atol=1e-9)
