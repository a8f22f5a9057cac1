"""Central finite-difference checks of every analytical gradient in the planner."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .hand import HandModel, default_hand, fk_and_jacobian, make_grasp
from .se3 import Pose, WeightMatrix, log_so3, object_jacobian, pose_distance, pose_distance_grad
from .trajopt import (TrajProblem, TrajVariables, baseline_total_cost, constraints, cost_finger,
                      cost_joint, cost_object, default_init, total_cost)

DEFAULT_TOL = 1e-5
FD_STEP = 1e-6
DIRECTIONS = 4
GRASP_SEED = np.tile([0.0, 0.4, 0.5, 0.4], 3)
CHECKS = ("pose_distance", "tip_jacobian", "cost_object", "cost_finger", "cost_joint",
          "total_cost", "baseline_cost", "collision")


def central_difference(f, x, h: float = FD_STEP) -> np.ndarray:
    """Jacobian of ``f`` at ``x`` (rows = outputs); scalar ``f`` gives a 1-D gradient."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(f(x + e), float) - np.asarray(f(x - e), float)) / (2 * h))
    return np.stack(cols, axis=-1)


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    a, n = np.asarray(analytic, float), np.asarray(numeric, float)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(n), np.linalg.norm(a), floor))


@dataclass
class GradcheckReport:
    trials: int
    tol: float
    errors: dict = field(default_factory=dict)  # check name -> list of relative errors
    worst: tuple = ("", -1, 0.0)  # (check, trial, rel. error)

    @property
    def max_error(self) -> float:
        return self.worst[2]

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol

    def add(self, name: str, trial: int, err: float):
        self.errors.setdefault(name, []).append(err)
        if err > self.worst[2]:
            self.worst = (name, trial, err)

    def summary(self) -> str:
        if not self.trials:
            return "gradcheck: 0 trials, nothing checked (vacuous pass)"
        lines = [f"gradcheck: {self.trials} trials, tol {self.tol:.1e}"]
        for name in CHECKS:
            errs = self.errors.get(name, [])
            if errs:
                lines.append(f"  {name:14s} n={len(errs):4d}  max rel err {max(errs):.3e}")
        check, trial, err = self.worst
        lines.append(f"  worst: {check} (trial {trial}) {err:.3e}")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def random_problem(hand: HandModel, rng: np.random.Generator) -> tuple[TrajProblem, np.ndarray]:
    """A random problem instance and a random point in its variable space."""
    Q0 = hand.clamp(GRASP_SEED + rng.normal(0.0, 0.2, hand.dof))
    pose0 = Pose(rng.normal(0.0, 0.05, 3) + [0, 0.1, 0.06], rng.normal(0.0, 0.5, 3))
    goal = Pose(pose0.p + rng.normal(0.0, 0.02, 3), rng.normal(0.0, 0.5, 3))
    prob = TrajProblem(
        hand, make_grasp(hand, Q0, pose0), goal, steps=int(rng.integers(1, 4)),
        W_o=WeightMatrix.from_diag(rng.uniform(0.01, 10.0, 6)),
        W_f=WeightMatrix.from_diag(rng.uniform(0.01, 10.0, 6)),
        lam=float(rng.uniform(1e-4, 1e-2)),
    )
    x = default_init(prob).flatten()
    x += rng.normal(0.0, 0.05, x.size)
    return prob, x


def _check_instance(prob: TrajProblem, x: np.ndarray, rng, report: GradcheckReport, k: int):
    hand = prob.hand
    T, dof = prob.steps, hand.dof
    unflat = lambda z: TrajVariables.unflatten(z, T, dof)

    # pose distance in twist coordinates
    xi = x[T * dof: T * dof + 6]
    W = prob.W_o
    d_fun = lambda z: pose_distance(Pose.from_xi(z), prob.goal, W)[0]
    g = pose_distance_grad(Pose.from_xi(xi), prob.goal, W, object_jacobian(xi[3:]))
    report.add("pose_distance", k, relative_error(g, central_difference(d_fun, xi)))

    # fingertip space Jacobian: linear part vs d(p), angular part vs log(R(q+dq) R(q)^T)
    i = int(rng.integers(hand.n_fingers))
    q = hand.split(x[:dof])[i]
    R, _, J = fk_and_jacobian(hand, i, q)
    lin = central_difference(lambda z: fk_and_jacobian(hand, i, z)[1], q)
    ang = central_difference(lambda z: log_so3(fk_and_jacobian(hand, i, z)[0] @ R.T, check=False), q)
    report.add("tip_jacobian", k, relative_error(J, np.vstack([lin, ang])))

    for name, fn in (("cost_object", lambda z: cost_object(unflat(z), prob)),
                     ("cost_finger", lambda z: cost_finger(unflat(z), prob))):
        report.add(name, k, relative_error(fn(x)[1], central_difference(lambda z: fn(z)[0], x)))

    # the assembled objective: directional derivatives along random directions
    V = rng.normal(size=(DIRECTIONS, x.size))
    g_tot = total_cost(x, prob)[1]
    fd_dir = central_difference(lambda s: np.array([total_cost(x + s @ V, prob)[0]]),
                                np.zeros(DIRECTIONS))[0]
    report.add("total_cost", k, relative_error(V @ g_tot, fd_dir))

    Q = x[: T * dof].reshape(T, dof)
    gj = cost_joint(Q, prob.grasp.Q0, prob.lam)[1].ravel()
    fdj = central_difference(lambda z: cost_joint(z.reshape(T, dof), prob.grasp.Q0, prob.lam)[0], Q.ravel())
    report.add("cost_joint", k, relative_error(gj, fdj))

    qf = Q.ravel()
    gb = baseline_total_cost(qf, prob)[1]
    report.add("baseline_cost", k, relative_error(gb, central_difference(
        lambda z: baseline_total_cost(z, prob)[0], qf)))

    if hand.pairs:
        # collision values depend on joints only; the object columns must be exactly zero
        G = constraints(unflat(x), prob)[3]
        xi_flat = x[T * dof:]
        fdc = central_difference(lambda z: constraints(unflat(np.concatenate([z, xi_flat])), prob)[2], qf)
        err = relative_error(G[:, : T * dof], fdc) if not G[:, T * dof:].any() else np.inf
        report.add("collision", k, err)


def run_gradcheck(trials: int = 200, tol: float = DEFAULT_TOL, seed: int = 0,
                  hand: HandModel | None = None) -> GradcheckReport:
    if trials < 0:
        raise ValueError("trials must be >= 0")
    report = GradcheckReport(trials, tol)
    if trials == 0:
        warnings.warn("gradcheck with 0 trials checks nothing", RuntimeWarning, stacklevel=2)
        return report
    hand = hand or default_hand()
    rng = np.random.default_rng(seed)
    for k in range(trials):
        prob, x = random_problem(hand, rng)
        _check_instance(prob, x, rng, report, k)
    return report
