"""Trajectory optimization of the nominal control sequence.

Direct single shooting: the decision vector is the stacked control sequence,
states come from rolling the dynamics forward, and the objective is the sum of
planned posterior covariance traces, quadratic control effort and a smooth
obstacle barrier. The terminal goal ball and the control-norm bound are handled
with exterior quadratic penalties whose weight grows geometrically; each
penalty round runs gradient descent with Armijo backtracking on
central-difference gradients.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .filters import (BeliefState, innovation_covariance, predict_covariance,
                      propagate_nominal_covariances, update_covariance)
from .models import NU, UNICYCLE, wrap_angle

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4


@dataclass(frozen=True)
class BarrierParams:
    weight: float = 10.0
    sharpness: float = 20.0

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("barrier weight must be >= 0")
        if self.sharpness <= 0:
            raise ValueError("barrier sharpness must be > 0")


@dataclass(frozen=True)
class OptimizerParams:
    max_outer_iters: int = 6
    max_inner_iters: int = 150
    gradient_tolerance: float = 1e-6
    penalty_weight_initial: float = 10.0
    penalty_growth: float = 10.0
    fd_step: float = 1e-5
    init_strategy: str = "zero"
    # fraction of r_g by which the penalized goal ball is shrunk, so that the
    # exterior penalty's residual violation still lands strictly inside r_g
    goal_tightening: float = 0.05

    def __post_init__(self):
        for name in ("max_outer_iters", "max_inner_iters", "gradient_tolerance",
                     "penalty_weight_initial", "fd_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.penalty_growth > 1:
            raise ValueError("penalty_growth must exceed 1")
        if self.init_strategy not in ("zero", "steer"):
            raise ValueError(f"unknown init_strategy {self.init_strategy!r}")
        if not 0 <= self.goal_tightening < 1:
            raise ValueError("goal_tightening must lie in [0, 1)")


@dataclass(frozen=True, eq=False)
class PlanProblem:
    start: np.ndarray
    goal: np.ndarray
    world: object
    horizon: int = 40
    goal_radius: float = 0.2
    control_radius: float = 1.2
    effort_weight: np.ndarray = field(default_factory=lambda: 0.1 * np.eye(NU))
    barrier: BarrierParams = field(default_factory=BarrierParams)
    optimizer: OptimizerParams = field(default_factory=OptimizerParams)
    model: object = UNICYCLE

    def __post_init__(self):
        object.__setattr__(self, "start", np.array(self.start, dtype=float))
        object.__setattr__(self, "goal", np.array(self.goal, dtype=float))
        object.__setattr__(self, "effort_weight", np.array(self.effort_weight, dtype=float))
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.goal_radius <= 0:
            raise ValueError("goal_radius must be positive")
        if self.control_radius <= 0:
            raise ValueError("control_radius must be positive")
        W = self.effort_weight
        if W.shape != (self.model.nu, self.model.nu) or not np.allclose(W, W.T):
            raise ValueError("effort_weight must be a symmetric nu x nu matrix")
        if np.linalg.eigvalsh(W).min() < -1e-12:
            raise ValueError("effort_weight must be positive semidefinite")

    @property
    def start_belief(self):
        w = self.world
        return BeliefState(self.start.copy(), w.epsilon**2 * np.asarray(w.sigma_x0, dtype=float))

    def with_world(self, world):
        from dataclasses import replace

        return replace(self, world=world)


@dataclass
class CostBreakdown:
    trace_term: float
    effort_term: float
    barrier_term: float
    terminal_residual: float
    control_residual: float
    penalty_weight: float

    @property
    def objective(self):
        return self.trace_term + self.effort_term + self.barrier_term

    @property
    def total(self):
        return self.objective + self.penalty_weight * (self.terminal_residual + self.control_residual)


@dataclass
class NominalPlan:
    controls: np.ndarray
    states: np.ndarray
    covariances: np.ndarray
    cost_breakdown: CostBreakdown
    converged: bool
    iterations: int
    initial_cost: float = float("nan")
    final_cost: float = float("nan")

    @property
    def horizon(self):
        return len(self.controls)


def rollout_nominal(controls, start, world, model=UNICYCLE):
    """Noise-free state sequence x_0..x_K; batches over leading control dims."""
    controls = np.asarray(controls, dtype=float)
    x = np.broadcast_to(np.asarray(start, dtype=float), controls.shape[:-2] + (len(start),))
    states = [x]
    for t in range(controls.shape[-2]):
        x = model.step(x, controls[..., t, :], world.dt)
        states.append(x)
    return np.stack(states, axis=-2)


def _clearances(state, obstacles):
    state = np.asarray(state, dtype=float)
    c = np.array([[o.cx, o.cy] for o in obstacles], dtype=float).reshape(-1, 2)
    edge = np.array([o.radius + o.safety_margin for o in obstacles], dtype=float)
    diff = state[..., None, :2] - c
    d = np.sqrt(np.sum(diff**2, axis=-1))
    return diff, d, d - edge


def barrier_cost(state, obstacles, params=BarrierParams()):
    """Sum over obstacles of M / (1 + exp(k * clearance))."""
    if not obstacles:
        return np.zeros(np.shape(state)[:-1]) if np.ndim(state) > 1 else 0.0
    _, _, clear = _clearances(state, obstacles)
    out = params.weight * np.sum(expit(-params.sharpness * clear), axis=-1)
    return out if np.ndim(out) else float(out)


def barrier_gradient(state, obstacles, params=BarrierParams()):
    """Gradient of ``barrier_cost`` with respect to the full state."""
    state = np.asarray(state, dtype=float)
    g = np.zeros(state.shape)
    if not obstacles:
        return g
    diff, d, clear = _clearances(state, obstacles)
    s = expit(-params.sharpness * clear)
    # d/dc of M*sigmoid(-k c) = -M k s (1 - s); dc/dpos = diff / d
    dc = -params.weight * params.sharpness * s * (1.0 - s)
    unit = diff / np.where(d > 0, d, 1.0)[..., None]
    g[..., :2] = np.sum(dc[..., None] * unit, axis=-2)
    return g


def _residuals(states, controls, problem, tightened):
    r_goal = problem.goal_radius
    if tightened:
        r_goal = r_goal * (1.0 - problem.optimizer.goal_tightening)
    miss = np.linalg.norm(states[..., -1, :2] - problem.goal[:2], axis=-1)
    terminal = np.maximum(0.0, miss - r_goal) ** 2
    over = np.maximum(0.0, np.linalg.norm(controls, axis=-1) - problem.control_radius)
    return terminal, np.sum(over**2, axis=-1)


def _effort(controls, W):
    # elementwise products keep the result independent of batch layout
    return np.sum(controls[..., :, None] * W * controls[..., None, :], axis=(-1, -2))


def evaluate_plan_cost(controls, problem, penalty_weight=None, tightened=False):
    """Cost breakdown of a control sequence.

    ``trace_term`` sums trace(P+_t) for t = 1..K. The penalty residuals use the
    nominal goal radius unless ``tightened`` is set, in which case the
    optimizer's shrunken goal ball is used.
    """
    controls = np.asarray(controls, dtype=float)
    if controls.shape != (problem.horizon, problem.model.nu):
        raise ValueError(f"expected controls of shape {(problem.horizon, problem.model.nu)}")
    if penalty_weight is None:
        penalty_weight = problem.optimizer.penalty_weight_initial
    states = rollout_nominal(controls, problem.start, problem.world, problem.model)
    covs = propagate_nominal_covariances(states, controls, problem.world, problem.model)
    terminal, ctrl = _residuals(states, controls, problem, tightened)
    return CostBreakdown(
        trace_term=float(np.trace(covs[1:], axis1=-2, axis2=-1).sum()),
        effort_term=float(_effort(controls, problem.effort_weight).sum()),
        barrier_term=float(np.sum(barrier_cost(states, problem.world.obstacles, problem.barrier))),
        terminal_residual=float(terminal),
        control_residual=float(ctrl),
        penalty_weight=float(penalty_weight),
    )


def _batched_total(U, problem, penalty_weight, tightened=True):
    """Total penalized cost for a batch of control sequences, shape (m, K, nu)."""
    world, model = problem.world, problem.model
    states = rollout_nominal(U, problem.start, world, model)
    m, K = U.shape[0], U.shape[1]
    P = np.broadcast_to(world.epsilon**2 * np.asarray(world.sigma_x0), (m,) + world.sigma_x0.shape)
    trace = np.zeros(m)
    for t in range(K):
        A, _ = model.jacobians(states[:, t], U[:, t], world.dt)
        P_minus = predict_covariance(P, A, world)
        if np.any(P_minus):
            H = model.measurement_jacobian(states[:, t + 1], world)
            P = update_covariance(P_minus, H, innovation_covariance(P_minus, H, world))
        else:
            P = P_minus
        trace += np.trace(P, axis1=-2, axis2=-1)
    effort = _effort(U, problem.effort_weight).sum(axis=-1)
    barrier = barrier_cost(states, world.obstacles, problem.barrier)
    barrier = barrier.sum(axis=-1) if np.ndim(barrier) else np.zeros(m)
    terminal, ctrl = _residuals(states, U, problem, tightened)
    return trace + effort + barrier + penalty_weight * (terminal + ctrl)


def penalized_cost(controls, problem, penalty_weight):
    """Scalar objective minimized by the optimizer (tightened goal ball)."""
    U = np.asarray(controls, dtype=float)[None]
    return float(_batched_total(U, problem, penalty_weight)[0])


def cost_gradient(controls, problem, penalty_weight=None):
    """Central-difference gradient of the penalized cost, flattened (K*nu,).

    All 2*K*nu perturbed sequences are evaluated as one batch.
    """
    if penalty_weight is None:
        penalty_weight = problem.optimizer.penalty_weight_initial
    u = np.asarray(controls, dtype=float).ravel()
    n = u.size
    h = problem.optimizer.fd_step
    E = h * np.eye(n)
    U = np.concatenate([u + E, u - E]).reshape(2 * n, *np.shape(controls))
    f = _batched_total(U, problem, penalty_weight)
    return (f[:n] - f[n:]) / (2.0 * h)


def initial_guess(problem, strategy=None):
    """Starting control sequence: all zeros, or a turn-then-drive steering law."""
    strategy = strategy or problem.optimizer.init_strategy
    K, nu = problem.horizon, problem.model.nu
    U = np.zeros((K, nu))
    if strategy == "zero":
        return U
    if strategy != "steer":
        raise ValueError(f"unknown init strategy {strategy!r}")
    dt, r_u = problem.world.dt, problem.control_radius
    x = problem.start.copy()
    for t in range(K):
        offset = problem.goal[:2] - x[:2]
        dist = float(np.hypot(*offset))
        if dist < problem.goal_radius * 0.5:
            break
        err = wrap_angle(np.arctan2(offset[1], offset[0]) - x[2])
        if abs(err) > 0.1:
            u = np.array([0.0, err / dt])
        else:
            u = np.array([dist / ((K - t) * dt), err / dt])
        norm = np.linalg.norm(u)
        if norm > r_u:
            u *= r_u / norm
        U[t] = u
        x = problem.model.step(x, u, dt)
    return U


def _descend(u, problem, weight, opt, budget, callback=None):
    """Gradient descent with Armijo backtracking at a fixed penalty weight."""
    f = penalized_cost(u, problem, weight)
    alpha = 1.0
    it = 0
    for it in range(1, budget + 1):
        g = cost_gradient(u, problem, weight).reshape(u.shape)
        gg = float(np.sum(g * g))
        if np.sqrt(gg) <= opt.gradient_tolerance:
            return u, f, it - 1
        alpha = min(alpha * 2.0, 1e6)
        while True:
            cand = u - alpha * g
            fc = penalized_cost(cand, problem, weight)
            if fc <= f - ARMIJO_C * alpha * gg:
                break
            alpha *= 0.5
            if alpha < 1e-14:
                return u, f, it
        assert fc <= f
        u, f = cand, fc
        if callback is not None:
            callback(weight, f)
    return u, f, it


def is_feasible(states, controls, problem):
    miss = np.linalg.norm(states[-1, :2] - problem.goal[:2])
    return bool(miss < problem.goal_radius
                and np.max(np.linalg.norm(controls, axis=-1)) <= problem.control_radius + 1e-6)


def solve_plan(problem, callback=None):
    """Optimize the nominal controls and package the resulting plan.

    ``callback(weight, cost)`` is invoked after every accepted descent step.
    """
    opt = problem.optimizer
    u0 = initial_guess(problem)
    u = u0.copy()
    weight = opt.penalty_weight_initial
    iterations = 0
    for k in range(opt.max_outer_iters):
        weight = opt.penalty_weight_initial * opt.penalty_growth**k
        u, f, n = _descend(u, problem, weight, opt, opt.max_inner_iters, callback)
        iterations += n
        log.info("penalty round %d weight %.3g cost %.6g (%d iters)", k, weight, f, n)
    f_init = penalized_cost(u0, problem, weight)
    f_final = penalized_cost(u, problem, weight)
    if f_final > f_init:
        u, f_final = u0, f_init
    states = rollout_nominal(u, problem.start, problem.world, problem.model)
    covs = propagate_nominal_covariances(states, u, problem.world, problem.model)
    return NominalPlan(
        controls=u,
        states=states,
        covariances=covs,
        cost_breakdown=evaluate_plan_cost(u, problem, weight),
        converged=is_feasible(states, u, problem),
        iterations=iterations,
        initial_cost=f_init,
        final_cost=f_final,
    )
