"""Command-line front end: ``tlqg plan|simulate|validate|sweep``.

Exit codes: 0 when every requested check passes, 1 when a check fails or a
run aborts, 2 for usage and configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import svg
from .config import ConfigError, parse_config
from .filters import NonPositiveDefiniteError, propagate_nominal_covariances
from .lqr import plan_gains
from .models import DegenerateGeometryError
from .montecarlo import StatisticalValidityError, epsilon_sweep, estimate_error_stats, simulate_rollout
from .planner import (NominalPlan, _clearances, barrier_cost, evaluate_plan_cost, is_feasible,
                      penalized_cost, rollout_nominal, solve_plan)

log = logging.getLogger("tlqg")

PLAN_COLUMNS = ["t", "x", "y", "theta", "v", "omega", "trace_P", "barrier"]
EXEC_COLUMNS = ["t", "x", "y", "theta", "v", "omega", "innovation_norm"]
ESTIMATE_COLUMNS = ["t", "x_hat", "y_hat", "theta_hat", "trace_P", "P_xx", "P_xy", "P_yy"]
THEOREM3_COLUMNS = ["epsilon", "n_samples", "n_aborted", "mean", "std", "std_error", "skewness",
                    "excess_kurtosis", "zero_mean_pass", "gaussian_pass"]
SWEEP_COLUMNS = ["epsilon", "n_samples", "n_aborted", "exit_probability", "exit_std_error",
                 "mean_cost_gap", "cost_gap_std_error"]

ZERO_MEAN_K = 3.0
MAX_SKEW = 0.15
MAX_EXCESS_KURTOSIS = 0.3
SLOPE_RANGE = (1.6, 2.4)


class UsageError(ValueError):
    pass


def fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def write_csv(path, columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    svg.atomic_write(path, buf.getvalue())


def write_json(path, obj):
    svg.atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _cost_dict(cb):
    return {
        "trace_term": cb.trace_term,
        "effort_term": cb.effort_term,
        "barrier_term": cb.barrier_term,
        "terminal_residual": cb.terminal_residual,
        "control_residual": cb.control_residual,
        "penalty_weight": cb.penalty_weight,
        "total": cb.total,
    }


def _with_epsilon(problem, epsilon):
    if epsilon is None:
        return problem
    return problem.with_world(problem.world.with_epsilon(epsilon))


def plan_rows(plan, problem):
    bar = barrier_cost(plan.states, problem.world.obstacles, problem.barrier)
    K = plan.horizon
    for t in range(K + 1):
        x, y, th = plan.states[t]
        v, w = plan.controls[t] if t < K else (None, None)
        yield [t, x, y, th, v, w, float(np.trace(plan.covariances[t])), float(bar[t])]


def load_plan(path, problem):
    """Rebuild a NominalPlan from the controls stored in plan.csv."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"plan file not found: {path} (run `tlqg plan` first)")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    controls = np.array([[float(r["v"]), float(r["omega"])] for r in rows if r["v"] != ""])
    if len(controls) != problem.horizon:
        raise UsageError(f"plan horizon {len(controls)} does not match config horizon {problem.horizon}")
    states = rollout_nominal(controls, problem.start, problem.world, problem.model)
    covs = propagate_nominal_covariances(states, controls, problem.world, problem.model)
    weight = problem.optimizer.penalty_weight_initial * problem.optimizer.penalty_growth ** (
        problem.optimizer.max_outer_iters - 1)
    return NominalPlan(controls, states, covs, evaluate_plan_cost(controls, problem, weight),
                       is_feasible(states, controls, problem), 0,
                       final_cost=penalized_cost(controls, problem, weight))


def plan_report(plan, problem):
    miss = float(np.linalg.norm(plan.states[-1, :2] - problem.goal[:2]))
    umax = float(np.max(np.linalg.norm(plan.controls, axis=-1)))
    if problem.world.obstacles:
        clear = _clearances(plan.states, problem.world.obstacles)[2]
        min_clear, violations = float(clear.min()), int(np.sum(np.any(clear <= 0, axis=-1)))
    else:
        min_clear, violations = None, 0
    return {
        "converged": bool(plan.converged),
        "iterations": int(plan.iterations),
        "cost_breakdown": _cost_dict(plan.cost_breakdown),
        "initial_guess_cost": plan.initial_cost,
        "final_penalized_cost": plan.final_cost,
        "improved_on_initial_guess": bool(plan.final_cost <= plan.initial_cost),
        "terminal_distance": miss,
        "goal_radius": problem.goal_radius,
        "terminal_constraint_met": miss < problem.goal_radius,
        "max_control_norm": umax,
        "control_radius": problem.control_radius,
        "control_constraint_met": umax <= problem.control_radius + 1e-6,
        "min_obstacle_clearance": min_clear,
        "barrier_violations": violations,
        "epsilon": problem.world.epsilon,
        "horizon": problem.horizon,
    }


def cmd_plan(cfg, out_dir, epsilon=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = _with_epsilon(cfg.problem, epsilon)
    plan = solve_plan(problem)
    write_csv(out / "plan.csv", PLAN_COLUMNS, plan_rows(plan, problem))
    svg.write_svg(svg.plan_figure(problem, plan), out / "plan.svg")
    report = plan_report(plan, problem)
    write_json(out / "report.json", report)
    ok = report["converged"] and report["barrier_violations"] == 0
    print(f"plan: converged={plan.converged} terminal_distance={report['terminal_distance']:.4f} "
          f"cost={plan.cost_breakdown.total:.6g}")
    return (0 if ok else 1), plan


def _plan_for(cfg, out, plan_path):
    if plan_path is not None:
        return load_plan(plan_path, cfg.problem)
    return solve_plan(cfg.problem)


def cmd_simulate(cfg, out_dir, plan_path=None, seed=None, epsilon=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plan = load_plan(plan_path or out / "plan.csv", cfg.problem)
    gains = plan_gains(plan, cfg.problem, cfg.feedback)
    if epsilon is None:
        epsilon = cfg.experiment.simulate_epsilon
    problem = _with_epsilon(cfg.problem, epsilon)
    seed = cfg.experiment.seed if seed is None else seed
    try:
        r = simulate_rollout(plan, gains, problem, seed)
    except (DegenerateGeometryError, NonPositiveDefiniteError) as exc:
        print(f"simulate: rollout aborted ({type(exc).__name__}: {exc})", file=sys.stderr)
        return 1, None
    K = plan.horizon
    innov = np.linalg.norm(r.innovations, axis=-1)
    rows = []
    for t in range(K + 1):
        v, w = r.controls[t] if t < K else (None, None)
        rows.append([t, *r.states[t], v, w, innov[t - 1] if t > 0 else None])
    write_csv(out / "exec.csv", EXEC_COLUMNS, rows)
    write_csv(out / "estimate.csv", ESTIMATE_COLUMNS, (
        [t, *r.estimates[t], float(np.trace(r.covariances[t])), r.covariances[t][0, 0],
         r.covariances[t][0, 1], r.covariances[t][1, 1]] for t in range(K + 1)))
    svg.write_svg(svg.exec_figure(problem, plan, r), out / "exec.svg")
    print(f"simulate: epsilon={problem.world.epsilon:g} seed={seed} cost={r.cost:.6g} "
          f"nominal_cost={r.nominal_cost:.6g} max_deviation={r.max_deviation:.4g} collided={r.collided}")
    return 0, r


def cmd_validate(cfg, out_dir, plan_path=None, seed=None, epsilon=None, samples=None):
    cases = [(c.epsilon, c.n_samples) for c in cfg.experiment.validate]
    if epsilon is not None:
        cases = [(epsilon, cases[0][1] if cases else 2000)]
    if samples is not None:
        cases = [(e, samples) for e, _ in cases]
    for _, n in cases:
        if n < 100:
            raise UsageError(f"validate needs at least 100 samples per epsilon, got {n}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plan = _plan_for(cfg, out, plan_path)
    gains = plan_gains(plan, cfg.problem, cfg.feedback)
    seed = cfg.experiment.seed if seed is None else seed
    rows, entries = [], []
    for eps, n in cases:
        st = estimate_error_stats(plan, gains, cfg.problem, n, seed, epsilon=eps)
        zm = st.zero_mean_ok(ZERO_MEAN_K)
        ga = st.gaussian_ok(MAX_SKEW, MAX_EXCESS_KURTOSIS)
        rows.append([eps, st.n_samples, st.n_aborted, st.mean, st.std, st.std_error,
                     st.skewness, st.excess_kurtosis, zm, ga])
        entries.append({"epsilon": eps, "n_samples": st.n_samples, "n_aborted": st.n_aborted,
                        "mean": st.mean, "std": st.std, "std_error": st.std_error,
                        "skewness": st.skewness, "excess_kurtosis": st.excess_kurtosis,
                        "zero_mean_pass": zm, "gaussian_pass": ga})
        print(f"validate: eps={eps:g} n={st.n_samples} mean={st.mean:.3g} se={st.std_error:.3g} "
              f"skew={st.skewness:.3f} kurt={st.excess_kurtosis:.3f} zero_mean={zm} gaussian={ga}")
    write_csv(out / "theorem3.csv", THEOREM3_COLUMNS, rows)
    all_pass = all(e["zero_mean_pass"] and e["gaussian_pass"] for e in entries)
    write_json(out / "theorem3.json", {
        "thresholds": {"zero_mean_std_errors": ZERO_MEAN_K, "max_abs_skewness": MAX_SKEW,
                       "max_abs_excess_kurtosis": MAX_EXCESS_KURTOSIS},
        "seed": seed,
        "cases": entries,
        "all_pass": all_pass,
    })
    return (0 if all_pass else 1), entries


def cmd_sweep(cfg, out_dir, plan_path=None, seed=None, samples=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ex = cfg.experiment
    n = ex.sweep_samples if samples is None else samples
    if n < 100:
        raise UsageError(f"sweep needs at least 100 samples per epsilon, got {n}")
    plan = _plan_for(cfg, out, plan_path)
    gains = plan_gains(plan, cfg.problem, cfg.feedback)
    seed = ex.seed if seed is None else seed
    sw = epsilon_sweep(plan, gains, cfg.problem, ex.sweep_epsilons, ex.delta, n, seed)
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, (
        [r.epsilon, r.n_samples, r.n_aborted, r.exit_probability, r.exit_std_error,
         r.mean_cost_gap, r.cost_gap_std_error] for r in sw.records))
    svg.write_svg(svg.sweep_figure(sw), out / "sweep.svg")
    slope = sw.slope()
    slope_ok = slope is None or SLOPE_RANGE[0] <= slope <= SLOPE_RANGE[1]
    monotone = sw.exit_monotone()
    write_json(out / "sweep.json", {
        "delta": sw.delta,
        "seed": seed,
        "fitted_slope": slope,
        "slope_range": list(SLOPE_RANGE),
        "slope_pass": slope_ok,
        "exit_probability_nonincreasing": monotone,
        "all_pass": bool(slope_ok and monotone),
    })
    print(f"sweep: slope={slope if slope is None else round(slope, 4)} slope_pass={slope_ok} "
          f"exit_monotone={monotone}")
    return (0 if slope_ok and monotone else 1), sw


def build_parser():
    ap = argparse.ArgumentParser(prog="tlqg", description="Trajectory-optimized LQG planning toolkit")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("plan", "optimize the nominal trajectory"),
                        ("simulate", "execute the plan once under noise"),
                        ("validate", "first-order cost error statistics"),
                        ("sweep", "noise-level sweep of exit probability and cost gap")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--epsilon", type=float, default=None)
        p.add_argument("--samples", type=int, default=None)
        p.add_argument("-v", "--verbose", action="store_true")
        if name != "plan":
            p.add_argument("--plan", default=None,
                           help="plan.csv to execute (simulate defaults to <out>/plan.csv; "
                                "validate and sweep re-plan when omitted)")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
        if args.epsilon is not None and args.epsilon < 0:
            raise UsageError("--epsilon must be non-negative")
        if args.command == "plan":
            code, _ = cmd_plan(cfg, args.out, args.epsilon)
        elif args.command == "simulate":
            code, _ = cmd_simulate(cfg, args.out, args.plan, args.seed, args.epsilon)
        elif args.command == "validate":
            code, _ = cmd_validate(cfg, args.out, args.plan, args.seed, args.epsilon, args.samples)
        else:
            if args.epsilon is not None:
                raise UsageError("--epsilon does not apply to sweep; edit experiment.sweep_epsilons")
            code, _ = cmd_sweep(cfg, args.out, args.plan, args.seed, args.samples)
    except (ConfigError, UsageError, FileNotFoundError) as exc:
        print(f"tlqg: error: {exc}", file=sys.stderr)
        return 2
    except (StatisticalValidityError, DegenerateGeometryError, NonPositiveDefiniteError) as exc:
        print(f"tlqg: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return code


if __name__ == "__main__":
    sys.exit(main())
