"""End-to-end acceptance checks on the bundled scenario.

Each test prints one ``criterion N: PASS|FAIL`` line; the lines are also
collected into the terminal summary.
"""

import time

import numpy as np
import pytest
from conftest import FIG1_TIMING, small_problem

from tlqg.cli import SLOPE_RANGE, main
from tlqg.config import bundled_scenario
from tlqg.filters import innovation_covariance, joseph_update, update_covariance
from tlqg.lqr import CostWeights, backward_riccati
from tlqg.models import (Landmark, Obstacle, WorldModel, dynamics_jacobians, measure, measurement_jacobian,
                         step_dynamics, wrap_angle)
from tlqg.montecarlo import (compare_openloop_closedloop, cost_jacobians, epsilon_sweep,
                             estimate_error_stats, stage_costs)
from tlqg.planner import _clearances, cost_gradient, initial_guess, penalized_cost

pytestmark = pytest.mark.slow


def record(log, n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    log.append(line)
    assert ok, line


@pytest.fixture(scope="module")
def sweep(fig1_plan, fig1_gains, fig1_config):
    ex = fig1_config.experiment
    return epsilon_sweep(fig1_plan, fig1_gains, fig1_config.problem, (0.16, 0.08, 0.04, 0.02), 0.1, 1000,
                         ex.seed)


def test_01_zero_mean(fig1_plan, fig1_gains, fig1_config, acceptance_log):
    t0 = time.perf_counter()
    st = estimate_error_stats(fig1_plan, fig1_gains, fig1_config.problem, 2000, fig1_config.experiment.seed,
                              epsilon=0.05)
    dt = time.perf_counter() - t0
    ok = abs(st.mean) <= 3 * st.std / np.sqrt(2000) and dt < 60
    record(acceptance_log, 1, ok, f"eps=0.05 n=2000 |mean|={abs(st.mean):.3g} 3*se={3 * st.std_error:.3g} "
                                  f"runtime={dt:.1f}s (<60s)")


def test_02_gaussianity(fig1_plan, fig1_gains, fig1_config, acceptance_log):
    st = estimate_error_stats(fig1_plan, fig1_gains, fig1_config.problem, 5000, fig1_config.experiment.seed,
                              epsilon=0.02)
    ok = abs(st.skewness) <= 0.15 and abs(st.excess_kurtosis) <= 0.3
    record(acceptance_log, 2, ok, f"eps=0.02 n=5000 skew={st.skewness:.4f} (<=0.15) "
                                  f"excess_kurtosis={st.excess_kurtosis:.4f} (<=0.3)")


def test_03_second_order_gap(sweep, acceptance_log):
    slope = sweep.slope()
    ok = slope is not None and SLOPE_RANGE[0] <= slope <= SLOPE_RANGE[1]
    gaps = ", ".join(f"{r.epsilon:g}:{r.mean_cost_gap:.3g}" for r in sweep.records)
    record(acceptance_log, 3, ok, f"log-log slope={slope:.4f} in [1.6, 2.4]; mean gaps {gaps}")


def test_04_exit_monotone(sweep, acceptance_log):
    probs = ", ".join(f"{r.epsilon:g}:{r.exit_probability:.4f}" for r in sweep.records)
    record(acceptance_log, 4, sweep.exit_monotone(k=2.0), f"delta=0.1 exit probabilities {probs} "
                                                          f"nonincreasing within 2 s.e.")


def test_05_feedback_helps(fig1_plan, fig1_gains, fig1_config, acceptance_log):
    cmp = compare_openloop_closedloop(fig1_plan, fig1_gains, fig1_config.problem, 500,
                                      fig1_config.experiment.seed, epsilon=0.1)
    ok = (cmp.closed_terminal_error < cmp.open_terminal_error
          and cmp.terminal_gap >= 3 * cmp.terminal_gap_std_error)
    record(acceptance_log, 5, ok, f"eps=0.1 n=500 closed={cmp.closed_terminal_error:.4f} "
                                  f"open={cmp.open_terminal_error:.4f} gap={cmp.terminal_gap:.4f} "
                                  f"3*se={3 * cmp.terminal_gap_std_error:.4f}")


def test_06_filter_algebra(acceptance_log):
    rng = np.random.default_rng(6)
    worst, trace_ok = 0.0, True
    lms = [Landmark(f"l{i}", *rng.uniform(-3, 3, 2)) for i in range(2)]
    for _ in range(1000):
        M = rng.normal(size=(3, 3))
        P = M @ M.T + 0.05 * np.eye(3)
        N = rng.normal(size=(4, 4))
        w = WorldModel(landmarks=lms, epsilon=rng.uniform(0.1, 2), sigma_nu=0.1 * (N @ N.T + 0.1 * np.eye(4)))
        H = rng.normal(size=(4, 3))
        plain = update_covariance(P, H, innovation_covariance(P, H, w))
        worst = max(worst, float(np.max(np.abs(plain - joseph_update(P, H, w)))))
        trace_ok &= bool(np.trace(plain) <= np.trace(P) + 1e-12)
    record(acceptance_log, 6, worst <= 1e-10 and trace_ok,
           f"1000 SPD instances max|plain-joseph|={worst:.2e} (<=1e-10) trace nonincreasing={trace_ok}")


def _central(f, x, h, wrap=None):
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        d = np.asarray(f(x + e)) - np.asarray(f(x - e))
        if wrap is not None:
            d = d.copy()
            d[wrap] = wrap_angle(d[wrap])
        cols.append(np.ravel(d) / (2 * h))
    return np.stack(cols, axis=-1)


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1.0))


def _richardson(f, u, h=1e-4):
    g = np.zeros(u.size)
    for i in range(u.size):
        e = np.zeros(u.size)
        e[i] = h
        e = e.reshape(u.shape)
        g[i] = (-f(u + 2 * e) + 8 * f(u + e) - 8 * f(u - e) + f(u - 2 * e)) / (12 * h)
    return g


def test_07_jacobians(fig1_config, fig1_plan, acceptance_log):
    rng = np.random.default_rng(7)
    prob = fig1_config.problem
    world = prob.world
    worst = {"A": 0.0, "B": 0.0, "H": 0.0, "cost_gradient": 0.0, "CostJacobians": 0.0}
    for _ in range(100):
        s = np.array([*rng.uniform(0, 4, 2), rng.uniform(-np.pi, np.pi)])
        u = rng.uniform(-1, 1, 2)
        A, B = dynamics_jacobians(s, u)
        worst["A"] = max(worst["A"], _rel(_central(lambda p: step_dynamics(p, u), s, 1e-6, 2), A))
        worst["B"] = max(worst["B"], _rel(_central(lambda q: step_dynamics(s, q), u, 1e-6, 2), B))
        Hfd = _central(lambda p: measure(p, world), s, 1e-6, slice(1, None, 2))
        worst["H"] = max(worst["H"], _rel(Hfd, measurement_jacobian(s, world)))

    # 100 short-horizon problems plus a few full fig1 samples for the cost gradient
    small_world = WorldModel(landmarks=[Landmark("a", 1.0, 1.0), Landmark("b", 3.0, -1.0)],
                             obstacles=[Obstacle(2.0, 0.5, 0.2, 0.1)])
    small = small_problem(small_world)
    for _ in range(100):
        U = rng.uniform(-0.6, 0.6, (5, 2))
        ref = _richardson(lambda v: penalized_cost(v, small, 100.0), U)
        worst["cost_gradient"] = max(worst["cost_gradient"], _rel(cost_gradient(U, small, 100.0), ref))
    for _ in range(3):
        U = fig1_plan.controls + rng.normal(size=fig1_plan.controls.shape) * 0.02
        ref = _richardson(lambda v: penalized_cost(v, prob, 1000.0), U)
        worst["cost_gradient"] = max(worst["cost_gradient"], _rel(cost_gradient(U, prob, 1000.0), ref))

    # stage t depends only on step-t quantities, so one coordinate is perturbed at every step at once
    h = 1e-6
    for _ in range(100):
        X = fig1_plan.states + rng.normal(size=fig1_plan.states.shape) * 0.1
        U = fig1_plan.controls + rng.normal(size=fig1_plan.controls.shape) * 0.1
        P = fig1_plan.covariances
        plan = type(fig1_plan)(U, X, P, None, True, 0)
        jac = cost_jacobians(plan, prob)
        fd_m = np.zeros_like(X)
        for i in range(3):
            e = np.zeros_like(X)
            e[:, i] = h
            fd_m[:, i] = (stage_costs(P, U, X + e, prob) - stage_costs(P, U, X - e, prob)) / (2 * h)
        fd_p = np.zeros((len(P), 9))
        for i in range(9):
            E = np.zeros((len(P), 9))
            E[:, i] = h
            E = E.reshape(P.shape)
            fd_p[:, i] = (stage_costs(P + E, U, X, prob) - stage_costs(P - E, U, X, prob)) / (2 * h)
        fd_u = np.zeros_like(U)
        for i in range(2):
            e = np.zeros_like(U)
            e[:, i] = h
            fd_u[:, i] = (stage_costs(P, U + e, X, prob) - stage_costs(P, U - e, X, prob))[:-1] / (2 * h)
        err = max(_rel(jac.mean_grad, fd_m), _rel(jac.cov_grad, fd_p), _rel(jac.control_grad, fd_u))
        worst["CostJacobians"] = max(worst["CostJacobians"], err)
    ok = all(v <= 1e-5 for v in worst.values())
    record(acceptance_log, 7, ok, "max relative error vs central differences (<=1e-5): "
           + ", ".join(f"{k}={v:.2e}" for k, v in worst.items()))


def test_08_lqr(acceptance_log):
    w = CostWeights(Wx=[[1.0]], Wu=[[1.0]])
    one = backward_riccati([np.eye(1)], [np.eye(1)], w)
    long = backward_riccati([np.eye(1)] * 200, [np.eye(1)] * 200, w)
    golden = (1 + np.sqrt(5)) / 2
    err_one = abs(one.riccati[0, 0, 0] - 1.5)
    err_lim = abs(long.riccati[0, 0, 0] - golden)
    rng = np.random.default_rng(8)
    K = 20
    A_seq = [np.eye(3) + 0.2 * rng.normal(size=(3, 3)) for _ in range(K)]
    B_seq = [rng.normal(size=(3, 2)) for _ in range(K)]
    wts = CostWeights()
    sched = backward_riccati(A_seq, B_seq, wts)
    x0 = rng.normal(size=3)
    x, cost = x0.copy(), 0.0
    for t in range(K):
        u = -sched.gains[t] @ x
        cost += x @ wts.Wx @ x + u @ wts.Wu @ u
        x = A_seq[t] @ x + B_seq[t] @ u
    cost += x @ wts.Wx @ x
    expected = x0 @ sched.riccati[0] @ x0
    err_val = abs(cost - expected) / max(1.0, abs(expected))
    ok = err_one <= 1e-12 and err_lim <= 1e-9 and err_val <= 1e-9
    record(acceptance_log, 8, ok, f"|P0-1.5|={err_one:.1e} |P0-golden|={err_lim:.1e} (<=1e-9) "
                                  f"policy cost vs x0'P0x0 rel={err_val:.1e} (<=1e-9)")


def test_09_planner_feasibility(fig1_run, fig1_config, acceptance_log):
    code, plan, _ = fig1_run
    prob = fig1_config.problem
    miss = float(np.linalg.norm(plan.states[-1, :2] - prob.goal[:2]))
    umax = float(np.max(np.linalg.norm(plan.controls, axis=1)))
    clear = _clearances(plan.states, prob.world.obstacles)[2]
    violations = int(np.sum(clear <= 0))
    u0 = initial_guess(prob)
    weight = plan.cost_breakdown.penalty_weight
    not_worse = penalized_cost(plan.controls, prob, weight) <= penalized_cost(u0, prob, weight)
    secs = FIG1_TIMING.get("plan_seconds", float("nan"))
    ok = (code == 0 and plan.converged and miss < prob.goal_radius and umax <= prob.control_radius
          and violations == 0 and not_worse and secs < 300)
    record(acceptance_log, 9, ok, f"converged={plan.converged} |x_K-x_g|={miss:.4f} (<0.2) max|u|={umax:.3f} "
                                  f"(<=1.2) barrier_violations={violations} min_clearance={clear.min():.3f} "
                                  f"cost<=initial={not_worse} runtime={secs:.1f}s (<300s)")


def test_10_determinism(fig1_run, tmp_path, monkeypatch, acceptance_log):
    cfg = str(bundled_scenario("fig1"))
    _, _, first = fig1_run
    plan_csv = str(first / "plan.csv")
    checks = {}
    assert main(["plan", "--config", cfg, "--out", str(tmp_path / "plan2")]) == 0
    checks["plan"] = (first / "plan.csv").read_bytes() == (tmp_path / "plan2" / "plan.csv").read_bytes()
    outputs = {}
    for threads in ("1", "4"):
        monkeypatch.setenv("TLQG_THREADS", threads)
        for rep in ("a", "b"):
            d = tmp_path / f"t{threads}{rep}"
            main(["simulate", "--config", cfg, "--out", str(d), "--plan", plan_csv])
            main(["validate", "--config", cfg, "--out", str(d), "--plan", plan_csv, "--epsilon", "0.05",
                  "--samples", "600"])
            main(["sweep", "--config", cfg, "--out", str(d), "--plan", plan_csv, "--samples", "300"])
            outputs[threads + rep] = {n: (d / n).read_bytes()
                                      for n in ("exec.csv", "estimate.csv", "theorem3.csv", "sweep.csv")}
    for name in ("exec.csv", "estimate.csv", "theorem3.csv", "sweep.csv"):
        checks[name] = len({o[name] for o in outputs.values()}) == 1
    record(acceptance_log, 10, all(checks.values()),
           "byte-identical across runs and TLQG_THREADS in {1,4}: "
           + ", ".join(f"{k}={v}" for k, v in checks.items()))
