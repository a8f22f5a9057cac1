"""In-grasp trajectory optimization with analytical Lie-group gradients.

Decision variables are the joint trajectory ``Q_1..Q_T`` and, for the
proposed formulation, the object poses ``xi_1..xi_T = [p; r]``. The cost is

    J = J_object + J_finger + J_joint

with joint-limit bounds and fingertip-pair collision inequalities, solved
with SLSQP. ``solve_baseline`` drops the object poses and pins the object to
the thumb tip instead.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize, nnls

from .hand import (GraspState, HandModel, collision_distances_and_grad,
                   fk_and_jacobian, tip_jacobian)
from .se3 import (Pose, WeightMatrix, canonical_rotvec, cross_rows, error_to_perturbation, exp_so3,
                  left_jacobian, left_jacobian_inv_rows, log_so3, log_so3_batch, skew,
                  slerp_rotvec)

# hyper-parameters used for the competition runs
W_OBJECT = WeightMatrix.from_diag([10, 10, 10, 0.01, 0.01, 0.0])
W_FINGER = WeightMatrix.from_diag([10, 10, 10, 0.001, 0.001, 0.001])
FIRST_T, FIRST_LAMBDA = 3, 4e-4
REPLAN_T, REPLAN_LAMBDA = 1, 5e-3

MAX_ITER = 200
FTOL = 1e-12
COLLISION_SLACK = 1e-8
# costs are O(1e-4); scaling keeps SLSQP's identity start Hessian sensible
OBJECTIVE_SCALE = 1e3


class SolverFailed(RuntimeError):
    def __init__(self, message, last=None, stats=None):
        super().__init__(message)
        self.last = last
        self.stats = stats


@dataclass(frozen=True)
class TrajProblem:
    hand: HandModel
    grasp: GraspState
    goal: Pose
    steps: int = FIRST_T
    W_o: WeightMatrix = W_OBJECT
    W_f: WeightMatrix = W_FINGER
    lam: float = FIRST_LAMBDA
    collision_enabled: bool = True

    def __post_init__(self):
        if int(self.steps) < 1:
            raise ValueError("steps must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        object.__setattr__(self, "steps", int(self.steps))
        # per-problem FK memo shared by costs and constraints at one iterate
        object.__setattr__(self, "_kin", {})

    def kinematics(self, Q_t):
        """Finger frames and tip (R, p, J) at ``Q_t``, memoized per finger."""
        hand = self.hand
        frames, tips = {}, []
        for i, (f, q) in enumerate(zip(hand.fingers, hand.split(np.asarray(Q_t, dtype=float)))):
            key = (i, q.tobytes())
            hit = self._kin.get(key)
            if hit is None:
                if len(self._kin) > 512:
                    self._kin.clear()
                fr = f.frames(q)
                hit = self._kin[key] = (fr, (fr[0][-1], fr[1][-1], tip_jacobian(fr)))
            frames[i] = hit[0]
            tips.append(hit[1])
        return frames, tips

    @property
    def n_vars(self) -> int:
        return self.steps * (self.hand.dof + 6)


@dataclass
class TrajVariables:
    Q: np.ndarray  # (T, dof)
    xi: np.ndarray  # (T, 6)

    @property
    def steps(self) -> int:
        return len(self.Q)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.Q.ravel(), self.xi.ravel()])

    @classmethod
    def unflatten(cls, x, steps: int, dof: int) -> "TrajVariables":
        x = np.asarray(x, dtype=float)
        nq = steps * dof
        if x.shape != (nq + 6 * steps,):
            raise ValueError(f"expected {nq + 6 * steps} variables, got {x.shape}")
        return cls(x[:nq].reshape(steps, dof).copy(), x[nq:].reshape(steps, 6).copy())

    def object_pose(self, t: int) -> Pose:
        return Pose.from_xi(self.xi[t])

    def canonicalized(self) -> "TrajVariables":
        xi = self.xi.copy()
        for t in range(len(xi)):
            xi[t, 3:] = canonical_rotvec(xi[t, 3:])
        return TrajVariables(self.Q.copy(), xi)


@dataclass
class TrajSolution:
    vars: TrajVariables
    planned_error: float
    cost_breakdown: dict
    solver_stats: dict = field(default_factory=dict)
    baseline: bool = False

    @property
    def Q(self) -> np.ndarray:
        return self.vars.Q

    def object_poses(self) -> list[Pose]:
        return [self.vars.object_pose(t) for t in range(self.vars.steps)]

    @property
    def terminal_pose(self) -> Pose:
        return self.vars.object_pose(self.vars.steps - 1)


def _tip_terms(prob: TrajProblem, Q_t):
    return prob.kinematics(Q_t)[1]


def _object_term(R_o, p_o, goal_R, goal_p, W: WeightMatrix):
    """Value and d/d(object twist) of the terminal object distance."""
    e = np.concatenate([p_o - goal_p, log_so3(R_o @ goal_R.T, check=False)])
    we = W.diag * e
    return 0.5 * float(e @ we), we @ error_to_perturbation(e)


def _finger_step(prob: TrajProblem, R_o, p_o, tips):
    """Constant-grasp cost at one step.

    Returns the value, the gradient w.r.t. the object twist [p_dot; omega]
    and the per-finger gradients w.r.t. joint angles. Derivatives go through
    the relative Jacobian [-Psi Omega J_o, Omega J_f] of the fingertip in the
    moving object frame.
    """
    W = prob.W_f
    g = prob.grasp
    Rf = np.array([t[0] for t in tips])
    Pf = np.array([t[1] for t in tips])
    p_rel = (Pf - p_o) @ R_o  # rows: R_o^T (p_f - p_o)
    # R_o^T R_f R_grasp^T per finger
    E = np.einsum("ji,njk,nlk->nil", R_o, Rf, g.grasp_rotations)
    r_e = log_so3_batch(E)
    e_p = p_rel - g.grasp_points
    we_p, we_r = W.wp * e_p, W.wr * r_e
    val = 0.5 * float((e_p * we_p).sum() + (r_e * we_r).sum())
    row_p = we_p
    row_r = left_jacobian_inv_rows(r_e, we_r)
    # row . Omega, Omega = blockdiag(R_o^T, R_o^T)
    wp_world, wr_world = row_p @ R_o.T, row_r @ R_o.T
    g_q = [wp_world[i] @ J[:3] + wr_world[i] @ J[3:] for i, (_, _, J) in enumerate(tips)]
    # -row . Psi . Omega, Psi = [[I, -S(p_rel)], [0, I]]
    psi_r = row_r + cross_rows(p_rel, row_p)
    g_obj = -np.concatenate([row_p.sum(axis=0) @ R_o.T, psi_r.sum(axis=0) @ R_o.T])
    return val, g_obj, g_q


def cost_object(vars: TrajVariables, prob: TrajProblem):
    T = vars.steps
    r = vars.xi[T - 1, 3:]
    val, g_tw = _object_term(exp_so3(r), vars.xi[T - 1, :3], prob.goal.R, prob.goal.p, prob.W_o)
    grad = TrajVariables(np.zeros_like(vars.Q), np.zeros_like(vars.xi))
    grad.xi[T - 1, :3] = g_tw[:3]
    grad.xi[T - 1, 3:] = g_tw[3:] @ left_jacobian(r)
    return val, grad.flatten()


def cost_finger(vars: TrajVariables, prob: TrajProblem):
    grad = TrajVariables(np.zeros_like(vars.Q), np.zeros_like(vars.xi))
    total = 0.0
    slices = prob.hand.slices
    for t in range(vars.steps):
        r = vars.xi[t, 3:]
        tips = _tip_terms(prob, vars.Q[t])
        val, g_obj, g_q = _finger_step(prob, exp_so3(r), vars.xi[t, :3], tips)
        total += val
        grad.xi[t, :3] = g_obj[:3]
        grad.xi[t, 3:] = g_obj[3:] @ left_jacobian(r)
        for s, gq in zip(slices, g_q):
            grad.Q[t, s] = gq
    return total, grad.flatten()


def cost_joint(Q, Q0, lam: float):
    """``lam * sum_t |Q_{t+1} - Q_t|^2`` with ``Q_0`` fixed; gradient over ``Q`` (T x dof)."""
    Q = np.asarray(Q, dtype=float)
    D = np.diff(np.vstack([Q0, Q]), axis=0)
    val = lam * float((D * D).sum())
    grad = 2.0 * lam * D
    grad[:-1] -= 2.0 * lam * D[1:]
    return val, grad


def total_cost(x, prob: TrajProblem):
    vars = TrajVariables.unflatten(x, prob.steps, prob.hand.dof)
    v1, g1 = cost_object(vars, prob)
    v2, g2 = cost_finger(vars, prob)
    v3, g3 = cost_joint(vars.Q, prob.grasp.Q0, prob.lam)
    g = g1 + g2
    g[: g3.size] += g3.ravel()
    return v1 + v2 + v3, g


def constraints(vars: TrajVariables, prob: TrajProblem):
    """Bounds and collision inequalities over the flattened variables.

    Returns ``(lower, upper, g, G)``: box bounds (``nan`` for unbounded),
    the collision values ``g = min_pair_distance - dist`` (feasible when
    ``<= 0``) and their Jacobian ``G``.
    """
    hand = prob.hand
    T, dof = vars.steps, hand.dof
    n = T * (dof + 6)
    lower = np.full(n, np.nan)
    upper = np.full(n, np.nan)
    lower[: T * dof] = np.tile(hand.q_min, T)
    upper[: T * dof] = np.tile(hand.q_max, T)
    if not prob.collision_enabled or not hand.pairs:
        return lower, upper, np.zeros(0), np.zeros((0, n))
    npairs = len(hand.pairs)
    g = np.zeros(T * npairs)
    G = np.zeros((T * npairs, n))
    for t in range(T):
        d, Gd = collision_distances_and_grad(hand, vars.Q[t], frames=prob.kinematics(vars.Q[t])[0])
        g[t * npairs:(t + 1) * npairs] = hand.min_pair_distance - d
        G[t * npairs:(t + 1) * npairs, t * dof:(t + 1) * dof] = -Gd
    return lower, upper, g, G


def default_init(prob: TrajProblem) -> TrajVariables:
    """Joints held at ``Q0``; object interpolated linearly toward the goal."""
    T = prob.steps
    p0, r0 = prob.grasp.object_pose0.p, prob.grasp.object_pose0.r
    Q = np.tile(prob.hand.clamp(prob.grasp.Q0), (T, 1))
    xi = np.zeros((T, 6))
    for t in range(T):
        s = (t + 1) / T
        xi[t, :3] = (1 - s) * p0 + s * prob.goal.p
        xi[t, 3:] = slerp_rotvec(r0, prob.goal.r, s)
    return TrajVariables(Q, xi)


def _kkt_residual(grad, x, lower, upper, active_g, active_G):
    free = np.ones(x.size, bool)
    at_lo = ~np.isnan(lower) & (x <= lower + 1e-10)
    at_hi = ~np.isnan(upper) & (x >= upper - 1e-10)
    # bound multipliers absorb the matching gradient component when signed right
    r = grad.copy()
    r[at_lo] = np.minimum(r[at_lo], 0.0)
    r[at_hi] = np.maximum(r[at_hi], 0.0)
    free &= ~(at_lo | at_hi)
    if active_G.shape[0]:
        # grad + sum mu_k dg_k = 0 with mu >= 0 for g <= 0 constraints
        A = -active_G[:, free].T
        mu, res = nnls(A, r[free])
        return float(np.sqrt(res**2 + np.sum(r[~free] ** 2)))
    return float(np.linalg.norm(r))


def _run_slsqp(fun, x0, lower, upper, cons_fun, cons_jac, n_cons, max_iter):
    bounds = [(None if np.isnan(lo) else lo, None if np.isnan(hi) else hi)
              for lo, hi in zip(lower, upper)]
    cons = []
    if n_cons:
        cons.append({"type": "ineq", "fun": cons_fun, "jac": cons_jac})
    def scaled(x):
        f, g = fun(x)
        return OBJECTIVE_SCALE * f, OBJECTIVE_SCALE * g

    with warnings.catch_warnings():
        # SLSQP's line search may step outside the box; scipy clips and warns
        warnings.filterwarnings("ignore", "Values in x were outside bounds", RuntimeWarning)
        res = minimize(scaled, x0, jac=True, method="SLSQP", bounds=bounds, constraints=cons,
                       options={"maxiter": max_iter, "ftol": FTOL * OBJECTIVE_SCALE})
    res.fun = res.fun / OBJECTIVE_SCALE
    return res


def _acceptable(res, f0, cons_val):
    feasible = cons_val.size == 0 or cons_val.max() <= COLLISION_SLACK
    if not feasible or not np.all(np.isfinite(res.x)):
        return False
    # line-search stalls and iteration caps still count when they improved
    return bool(res.success) or (res.status in (8, 9) and res.fun <= f0)


def _solution(prob, vars, fun_parts, stats, baseline=False):
    planned = float(np.linalg.norm(vars.xi[-1, :3] - prob.goal.p))
    return TrajSolution(vars, planned, fun_parts, stats, baseline)


def solve(prob: TrajProblem, seed: TrajVariables | None = None, max_iter: int = MAX_ITER,
          rng: np.random.Generator | None = None) -> TrajSolution:
    """Locally optimal trajectory for ``prob`` (proposed formulation)."""
    t0 = time.perf_counter()
    dof = prob.hand.dof
    attempts = [seed if seed is not None else default_init(prob)]
    if seed is not None:
        attempts.append(default_init(prob))
    jitter = default_init(prob)
    rng = rng if rng is not None else np.random.default_rng(0)
    jitter.xi = jitter.xi + rng.normal(0.0, 1e-3, jitter.xi.shape)
    attempts.append(jitter)

    def fun(x):
        return total_cost(x, prob)

    def cons_vals(x):
        v = TrajVariables.unflatten(x, prob.steps, dof)
        return constraints(v, prob)[2:]

    lower, upper, g0, _ = constraints(attempts[0], prob)
    n_cons = g0.size
    last, total_iter = None, 0
    for k, init in enumerate(attempts):
        x0 = init.flatten()
        x0[: prob.steps * dof] = np.clip(x0[: prob.steps * dof], lower[: prob.steps * dof],
                                         upper[: prob.steps * dof])
        f0 = fun(x0)[0]
        res = _run_slsqp(fun, x0, lower, upper,
                         lambda x: -cons_vals(x)[0], lambda x: -cons_vals(x)[1],
                         n_cons, max_iter)
        total_iter += res.nit
        x = res.x.copy()
        x[: prob.steps * dof] = np.clip(x[: prob.steps * dof], lower[: prob.steps * dof],
                                        upper[: prob.steps * dof])
        g, G = cons_vals(x)
        last = (x, res)
        if _acceptable(res, f0, g):
            break
    else:
        stats = {"iterations": total_iter, "status": int(last[1].status),
                 "message": str(last[1].message), "wall_time": time.perf_counter() - t0}
        raise SolverFailed(f"SLSQP failed: {last[1].message}",
                           last=TrajVariables.unflatten(last[0], prob.steps, dof), stats=stats)
    vars = TrajVariables.unflatten(x, prob.steps, dof).canonicalized()
    x = vars.flatten()
    f, grad = fun(x)
    active = g >= -1e-7
    stats = {
        "iterations": total_iter,
        "restarts": k,
        "status": int(res.status),
        "kkt_residual": _kkt_residual(grad, x, lower, upper, g[active], G[active]),
        "wall_time": time.perf_counter() - t0,
    }
    return _solution(prob, vars, cost_breakdown(vars, prob), stats)


def cost_breakdown(vars: TrajVariables, prob: TrajProblem) -> dict:
    return {
        "J_object": cost_object(vars, prob)[0],
        "J_finger": cost_finger(vars, prob)[0],
        "J_joint": cost_joint(vars.Q, prob.grasp.Q0, prob.lam)[0],
    }


def fingertip_drift(vars: TrajVariables, prob: TrajProblem) -> np.ndarray:
    """Per-step, per-finger object-frame displacement of fingertip centers (T x n)."""
    out = np.zeros((vars.steps, prob.hand.n_fingers))
    for t in range(vars.steps):
        pose = vars.object_pose(t)
        Rt = pose.R.T
        for i, (_, p_f, _) in enumerate(_tip_terms(prob, vars.Q[t])):
            out[t, i] = np.linalg.norm(Rt @ (p_f - pose.p) - prob.grasp.grasp_points[i])
    return out


# --- rigid-thumb baseline -------------------------------------------------

def _thumb_attachment(prob: TrajProblem):
    """Object pose in the thumb-tip frame at the initial grasp."""
    hand, g = prob.hand, prob.grasp
    th = hand.thumb_index
    R_th, p_th, _ = fk_and_jacobian(hand, th, hand.split(g.Q0)[th])
    R_o, p_o = g.object_pose0.R, g.object_pose0.p
    return th, R_th.T @ R_o, R_th.T @ (p_o - p_th)


def baseline_object(prob: TrajProblem, Q_t, tips=None):
    """Object rotation, position and 6 x dof_thumb twist Jacobian from the thumb tip."""
    th, R_rel, p_rel = _thumb_attachment(prob)
    if tips is None:
        tips = _tip_terms(prob, Q_t)
    R_th, p_th, J_th = tips[th]
    R_o = R_th @ R_rel
    p_o = p_th + R_th @ p_rel
    # rigid attachment: v_o = v_th + w_th x (p_o - p_th), w_o = w_th
    J_o = J_th.copy()
    J_o[:3] -= skew(p_o - p_th) @ J_th[3:]
    return R_o, p_o, J_o


def baseline_total_cost(q_flat, prob: TrajProblem):
    hand = prob.hand
    T, dof = prob.steps, hand.dof
    Q = np.asarray(q_flat, dtype=float).reshape(T, dof)
    th = hand.thumb_index
    slices = hand.slices
    grad = np.zeros((T, dof))
    val = 0.0
    for t in range(T):
        tips = _tip_terms(prob, Q[t])
        R_o, p_o, J_o = baseline_object(prob, Q[t], tips)
        v, g_obj, g_q = _finger_step(prob, R_o, p_o, tips)
        val += v
        for s, gq in zip(slices, g_q):
            grad[t, s] += gq
        grad[t, slices[th]] += g_obj @ J_o
        if t == T - 1:
            v, g_tw = _object_term(R_o, p_o, prob.goal.R, prob.goal.p, prob.W_o)
            val += v
            grad[t, slices[th]] += g_tw @ J_o
    vj, gj = cost_joint(Q, prob.grasp.Q0, prob.lam)
    return val + vj, (grad + gj).ravel()


def baseline_variables(prob: TrajProblem, Q) -> TrajVariables:
    Q = np.asarray(Q, dtype=float).reshape(prob.steps, prob.hand.dof)
    xi = np.zeros((prob.steps, 6))
    for t in range(prob.steps):
        R_o, p_o, _ = baseline_object(prob, Q[t])
        xi[t] = Pose.from_rp(R_o, p_o).xi
    return TrajVariables(Q.copy(), xi)


def solve_baseline(prob: TrajProblem, seed=None, max_iter: int = MAX_ITER) -> TrajSolution:
    """Joint-only optimization with the object rigidly attached to the thumb tip."""
    t0 = time.perf_counter()
    hand = prob.hand
    T, dof = prob.steps, hand.dof
    q0 = np.tile(hand.clamp(prob.grasp.Q0), T) if seed is None else np.asarray(seed, float).ravel()
    lower, upper = np.tile(hand.q_min, T), np.tile(hand.q_max, T)

    def cons_vals(q):
        xi = np.zeros((T, 6))
        return constraints(TrajVariables(q.reshape(T, dof), xi), prob)[2:]

    n_cons = cons_vals(q0)[0].size

    def fun(q):
        return baseline_total_cost(q, prob)

    f0 = fun(q0)[0]
    res = _run_slsqp(fun, q0, lower, upper,
                     lambda q: -cons_vals(q)[0], lambda q: -cons_vals(q)[1][:, : T * dof],
                     n_cons, max_iter)
    q = np.clip(res.x, lower, upper)
    g, G = cons_vals(q)
    if not _acceptable(res, f0, g):
        raise SolverFailed(f"SLSQP failed: {res.message}", last=baseline_variables(prob, q),
                           stats={"iterations": res.nit, "status": int(res.status)})
    vars = baseline_variables(prob, q)
    f, grad = fun(q)
    active = g >= -1e-7
    stats = {
        "iterations": res.nit,
        "restarts": 0,
        "status": int(res.status),
        "kkt_residual": _kkt_residual(grad, q, lower, upper, g[active], G[active][:, : T * dof]),
        "wall_time": time.perf_counter() - t0,
    }
    breakdown = cost_breakdown(vars, prob)
    return _solution(prob, vars, breakdown, stats, baseline=True)


def with_goal(prob: TrajProblem, goal: Pose) -> TrajProblem:
    return replace(prob, goal=goal)
