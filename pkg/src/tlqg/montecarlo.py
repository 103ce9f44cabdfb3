"""Closed-loop stochastic execution and statistics of the realized cost.

A rollout simulates the true state and the EKF estimate side by side under
the feedback policy. Each rollout draws its noise from Philox streams keyed
by ``(seed, stream)``, so results depend only on the seed and never on how
rollouts are grouped or scheduled. Rollouts are processed in fixed-size
chunks in rollout-index order; ``TLQG_THREADS`` sets how many chunks run
concurrently.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .filters import BeliefState, NonPositiveDefiniteError, ekf_step, propagate_nominal_covariances
from .lqr import apply_policy
from .models import DegenerateGeometryError
from .planner import _effort, barrier_cost, barrier_gradient

CHUNK = 256
STREAM_INIT, STREAM_PROCESS, STREAM_MEASUREMENT = 0, 1, 2
MAX_ABORT_FRACTION = 0.01


class StatisticalValidityError(RuntimeError):
    """Too many rollouts aborted for the statistics to be trusted."""


@dataclass
class RolloutResult:
    states: np.ndarray  # (K+1, nx) true states
    estimates: np.ndarray  # (K+1, nx) EKF means
    covariances: np.ndarray  # (K+1, nx, nx) EKF covariances
    controls: np.ndarray  # (K, nu) applied controls
    innovations: np.ndarray  # (K, nz)
    cost: float
    nominal_cost: float
    first_order_error: float
    max_deviation: float
    terminal_error: float
    collided: bool
    seed: int
    aborted: bool = False
    abort_reason: str = ""

    @property
    def trajectory(self):
        return [(x, BeliefState(m, P)) for x, m, P in zip(self.states, self.estimates, self.covariances)]


@dataclass
class CostJacobians:
    mean_grad: np.ndarray  # (K+1, nx)
    cov_grad: np.ndarray  # (K+1, nx*nx), row-major vec
    control_grad: np.ndarray  # (K, nu)

    @property
    def terminal(self):
        return self.mean_grad[-1], self.cov_grad[-1]


@dataclass
class ErrorStats:
    n_samples: int
    mean: float
    std: float
    std_error: float
    skewness: float
    excess_kurtosis: float
    n_aborted: int = 0
    epsilon: float = float("nan")

    def zero_mean_ok(self, k=3.0):
        return abs(self.mean) <= k * self.std_error

    def gaussian_ok(self, max_skew=0.15, max_kurt=0.3):
        return abs(self.skewness) <= max_skew and abs(self.excess_kurtosis) <= max_kurt


@dataclass
class SweepRecord:
    epsilon: float
    exit_probability: float
    n_samples: int
    mean_cost_gap: float
    cost_gap_std_error: float
    n_aborted: int = 0

    @property
    def exit_std_error(self):
        p = self.exit_probability
        return math.sqrt(p * (1.0 - p) / self.n_samples)


@dataclass
class SweepResult:
    records: list
    delta: float

    def slope(self):
        """Least-squares slope of log|mean cost gap| against log epsilon."""
        eps = np.array([r.epsilon for r in self.records])
        gap = np.abs([r.mean_cost_gap for r in self.records])
        if len(eps) < 2 or np.any(gap == 0):
            return None
        return float(np.polyfit(np.log(eps), np.log(gap), 1)[0])

    def exit_monotone(self, k=2.0):
        """Exit probability nonincreasing as epsilon shrinks, up to k combined s.e."""
        for big, small in zip(self.records, self.records[1:]):
            se = math.hypot(big.exit_std_error, small.exit_std_error)
            if small.exit_probability > big.exit_probability + k * se:
                return False
        return True


@dataclass
class PairedComparison:
    n_samples: int
    closed_max_deviation: float
    open_max_deviation: float
    closed_terminal_error: float
    open_terminal_error: float
    terminal_gap: float  # mean(open - closed)
    terminal_gap_std_error: float

    def feedback_helps(self, k=3.0):
        return self.terminal_gap > 0 and self.terminal_gap >= k * self.terminal_gap_std_error


def _sqrtm_psd(S):
    lam, V = np.linalg.eigh(np.asarray(S, dtype=float))
    return V * np.sqrt(np.clip(lam, 0.0, None))


def draw_standard_normals(seed, stream, shape):
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key)).standard_normal(shape)


def _noise(seeds, K, world, model_nx):
    nz = world.sigma_nu.shape[0]
    z0 = np.array([draw_standard_normals(s, STREAM_INIT, (model_nx,)) for s in seeds])
    zw = np.array([draw_standard_normals(s, STREAM_PROCESS, (K, model_nx)) for s in seeds])
    zv = np.array([draw_standard_normals(s, STREAM_MEASUREMENT, (K, nz)) for s in seeds])
    eps = world.epsilon
    init = eps * (z0 @ _sqrtm_psd(world.sigma_x0).T)
    proc = eps * (zw @ (np.asarray(world.G) @ _sqrtm_psd(world.sigma_omega)).T)
    meas = eps * (zv @ _sqrtm_psd(world.sigma_nu).T)
    return init, proc, meas


def stage_costs(covs, controls, estimates, problem):
    """Per-step costs c_0..c_K: trace(P) + u^T Wu u + barrier(xhat).

    The terminal entry carries no control term.
    """
    trace = np.trace(covs, axis1=-2, axis2=-1)
    barrier = barrier_cost(estimates, problem.world.obstacles, problem.barrier)
    c = trace + barrier
    effort = _effort(controls, problem.effort_weight)
    c[..., :-1] += effort
    return c


def _sum(c):
    return np.array([math.fsum(row) for row in np.reshape(c, (-1, c.shape[-1]))]).reshape(c.shape[:-1])


def cost_jacobians(plan, problem):
    """Gradients of each stage cost along the nominal plan."""
    nx = plan.states.shape[-1]
    K = plan.horizon
    return CostJacobians(
        mean_grad=barrier_gradient(plan.states, problem.world.obstacles, problem.barrier),
        cov_grad=np.tile(np.eye(nx).ravel(), (K + 1, 1)),
        control_grad=2.0 * plan.controls @ problem.effort_weight.T,
    )


def _first_order(states_hat, covs, controls, plan, nominal_covs, jac, model):
    dm = model.difference(states_hat, plan.states)
    dP = (covs - nominal_covs).reshape(covs.shape[:-2] + (-1,))
    du = controls - plan.controls
    total = (np.sum(jac.mean_grad * dm, axis=(-1, -2))
             + np.sum(jac.cov_grad * dP, axis=(-1, -2))
             + np.sum(jac.control_grad * du, axis=(-1, -2)))
    return total


def first_order_error(rollout, plan, jacobians, problem=None, nominal_covariances=None):
    """Linearized cost deviation of one rollout around the nominal plan.

    ``nominal_covariances`` must be the planned covariances at the rollout's
    noise level; when omitted they are recomputed from ``problem``.
    """
    from .models import UNICYCLE

    model = problem.model if problem is not None else UNICYCLE
    if nominal_covariances is None:
        if problem is None:
            raise ValueError("need problem or nominal_covariances")
        nominal_covariances = propagate_nominal_covariances(plan.states, plan.controls, problem.world, model)
    return float(_first_order(rollout.estimates, rollout.covariances, rollout.controls,
                              plan, nominal_covariances, jacobians, model))


def _collided(states, obstacles):
    if not obstacles:
        return np.zeros(states.shape[:-2], dtype=bool)
    c = np.array([[o.cx, o.cy] for o in obstacles])
    r = np.array([o.radius for o in obstacles])
    d = np.linalg.norm(states[..., :, None, :2] - c, axis=-1)
    return np.any(d < r, axis=(-1, -2))


class _Context:
    """Per-(plan, gains, problem) quantities shared by every rollout."""

    def __init__(self, plan, gains, problem):
        if gains.horizon != plan.horizon or plan.horizon != problem.horizon:
            raise ValueError("plan, gains and problem horizons disagree")
        self.plan, self.gains, self.problem = plan, gains, problem
        self.model = problem.model
        world = problem.world
        self.nominal_covs = propagate_nominal_covariances(plan.states, plan.controls, world, self.model)
        self.jac = cost_jacobians(plan, problem)
        self.nominal_stage = stage_costs(self.nominal_covs, plan.controls, plan.states, problem)
        self.nominal_cost = float(_sum(self.nominal_stage))

    def run(self, seeds):
        try:
            return self._run_batch(seeds)
        except (DegenerateGeometryError, NonPositiveDefiniteError):
            if len(seeds) == 1:
                raise
        out = []
        for s in seeds:
            try:
                out.extend(self._run_batch([s]))
            except (DegenerateGeometryError, NonPositiveDefiniteError) as exc:
                out.append(self._aborted(s, exc))
        return out

    def _aborted(self, seed, exc):
        nan = float("nan")
        return RolloutResult(
            states=np.empty((0,)), estimates=np.empty((0,)), covariances=np.empty((0,)),
            controls=np.empty((0,)), innovations=np.empty((0,)), cost=nan,
            nominal_cost=self.nominal_cost, first_order_error=nan, max_deviation=nan,
            terminal_error=nan, collided=False, seed=int(seed), aborted=True,
            abort_reason=f"{type(exc).__name__}: {exc}",
        )

    def _run_batch(self, seeds):
        plan, gains, problem, model = self.plan, self.gains, self.problem, self.model
        world = problem.world
        K, n = plan.horizon, len(seeds)
        init, proc, meas = _noise(seeds, K, world, plan.states.shape[-1])
        x = model.normalize(plan.states[0] + init)
        belief = BeliefState(
            np.broadcast_to(plan.states[0], x.shape).copy(),
            np.broadcast_to(self.nominal_covs[0], (n,) + self.nominal_covs[0].shape).copy(),
        )
        X, M, P, U, V = [x], [belief.mean], [belief.cov], [], []
        for t in range(K):
            u = apply_policy(t, plan, gains, belief.mean, problem.control_radius, model)
            x = model.normalize(model.step(x, u, world.dt) + proc[:, t])
            z = model.measure(x, world) + meas[:, t]
            belief, innov = ekf_step(belief, u, z, world, model)
            X.append(x)
            M.append(belief.mean)
            P.append(belief.cov)
            U.append(u)
            V.append(innov)
        X, M, P = np.stack(X, 1), np.stack(M, 1), np.stack(P, 1)
        U, V = np.stack(U, 1), np.stack(V, 1)
        J = _sum(stage_costs(P, U, M, problem))
        J1 = _first_order(M, P, U, plan, self.nominal_covs, self.jac, model)
        dev = np.linalg.norm(model.difference(X, plan.states), axis=-1).max(axis=-1)
        term = np.linalg.norm(X[:, -1, :2] - plan.states[-1, :2], axis=-1)
        hit = _collided(X, world.obstacles)
        return [
            RolloutResult(X[i], M[i], P[i], U[i], V[i], float(J[i]), self.nominal_cost,
                          float(J1[i]), float(dev[i]), float(term[i]), bool(hit[i]), int(s))
            for i, s in enumerate(seeds)
        ]


def worker_count(workers=None):
    if workers is None:
        workers = int(os.environ.get("TLQG_THREADS", "1") or 1)
    return max(1, int(workers))


def run_rollouts(plan, gains, problem, seeds, workers=None):
    """Execute rollouts for every seed; output order follows ``seeds``."""
    ctx = _Context(plan, gains, problem)
    seeds = [int(s) for s in seeds]
    chunks = [seeds[i:i + CHUNK] for i in range(0, len(seeds), CHUNK)]
    workers = worker_count(workers)
    if workers == 1 or len(chunks) == 1:
        parts = [ctx.run(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(ctx.run, chunks))
    return [r for part in parts for r in part]


def simulate_rollout(plan, gains, problem, seed):
    """One closed-loop execution; raises if the rollout hits degenerate geometry."""
    return _Context(plan, gains, problem).run([int(seed)])[0]


def _valid(results):
    ok = [r for r in results if not r.aborted]
    n_abort = len(results) - len(ok)
    if n_abort > MAX_ABORT_FRACTION * len(results):
        raise StatisticalValidityError(f"{n_abort} of {len(results)} rollouts aborted")
    return ok, n_abort


def summarize(values, n_aborted=0, epsilon=float("nan")):
    v = np.asarray(values, dtype=float)
    n = len(v)
    if n < 2:
        raise ValueError("need at least two samples")
    mean = math.fsum(v) / n
    std = float(np.std(v, ddof=1))
    if std > 0:
        skew = float(stats.skew(v))
        kurt = float(stats.kurtosis(v))
    else:
        skew = kurt = 0.0
    return ErrorStats(n, mean, std, std / math.sqrt(n), skew, kurt, n_aborted, epsilon)


def _at_epsilon(problem, epsilon):
    if epsilon is None:
        return problem
    return problem.with_world(problem.world.with_epsilon(epsilon))


def estimate_error_stats(plan, gains, problem, n, seed, epsilon=None, workers=None):
    """Moments of the first-order cost error over ``n`` rollouts (seeds seed+i)."""
    if n < 100:
        raise ValueError(f"need at least 100 samples, got {n}")
    problem = _at_epsilon(problem, epsilon)
    ok, n_abort = _valid(run_rollouts(plan, gains, problem, range(seed, seed + n), workers))
    return summarize([r.first_order_error for r in ok], n_abort, problem.world.epsilon)


def epsilon_sweep(plan, gains, problem, epsilons, delta, n, seed, workers=None):
    """Exit probabilities and mean cost gaps over a decreasing epsilon grid.

    Every noise level reuses the same seeds, so the underlying standard-normal
    draws are shared across the grid.
    """
    eps = [float(e) for e in epsilons]
    if any(e <= 0 for e in eps) or any(b <= a for a, b in zip(eps[1:], eps)):
        raise ValueError("epsilons must be positive and strictly decreasing")
    records = []
    for e in eps:
        prob = _at_epsilon(problem, e)
        ok, n_abort = _valid(run_rollouts(plan, gains, prob, range(seed, seed + n), workers))
        exits = sum(r.max_deviation > delta / 2.0 for r in ok)
        gaps = np.array([r.cost - r.nominal_cost for r in ok])
        records.append(SweepRecord(e, exits / len(ok), len(ok), math.fsum(gaps) / len(gaps),
                                   float(np.std(gaps, ddof=1) / math.sqrt(len(gaps))), n_abort))
    return SweepResult(records, float(delta))


def compare_openloop_closedloop(plan, gains, problem, n, seed, epsilon=None, workers=None):
    """Paired closed-loop vs. zero-gain execution on identical noise streams."""
    if n < 100:
        raise ValueError(f"need at least 100 samples, got {n}")
    problem = _at_epsilon(problem, epsilon)
    seeds = range(seed, seed + n)
    closed = run_rollouts(plan, gains, problem, seeds, workers)
    opened = run_rollouts(plan, gains.zeroed(), problem, seeds, workers)
    pairs = [(c, o) for c, o in zip(closed, opened) if not (c.aborted or o.aborted)]
    if len(pairs) < (1 - MAX_ABORT_FRACTION) * n:
        raise StatisticalValidityError("too many aborted rollout pairs")
    c_dev = np.array([c.max_deviation for c, _ in pairs])
    o_dev = np.array([o.max_deviation for _, o in pairs])
    c_term = np.array([c.terminal_error for c, _ in pairs])
    o_term = np.array([o.terminal_error for _, o in pairs])
    diff = o_term - c_term
    m = len(pairs)
    return PairedComparison(
        n_samples=m,
        closed_max_deviation=float(c_dev.mean()),
        open_max_deviation=float(o_dev.mean()),
        closed_terminal_error=float(c_term.mean()),
        open_terminal_error=float(o_term.mean()),
        terminal_gap=float(diff.mean()),
        terminal_gap_std_error=float(diff.std(ddof=1) / math.sqrt(m)) if m > 1 else 0.0,
    )
