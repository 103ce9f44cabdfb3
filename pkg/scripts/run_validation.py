"""Monte Carlo checks on the bundled scenario: first-order error moments,
the noise-level sweep and the paired open- vs closed-loop comparison."""

import argparse
import json
import sys
from pathlib import Path

from tlqg.cli import PLAN_COLUMNS, cmd_sweep, cmd_validate, load_plan, plan_rows, write_csv
from tlqg.config import bundled_scenario, parse_config
from tlqg.lqr import plan_gains
from tlqg.montecarlo import compare_openloop_closedloop
from tlqg.planner import solve_plan


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/validation")
    ap.add_argument("--plan", default=None, help="reuse an existing plan.csv")
    args = ap.parse_args()

    cfg = parse_config(bundled_scenario("fig1"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    plan_path = args.plan
    if plan_path is None:
        plan = solve_plan(cfg.problem)
        plan_path = out / "plan.csv"
        write_csv(plan_path, PLAN_COLUMNS, plan_rows(plan, cfg.problem))
    plan = load_plan(plan_path, cfg.problem)

    codes = [cmd_validate(cfg, out, plan_path)[0], cmd_sweep(cfg, out, plan_path)[0]]

    ex = cfg.experiment
    cmp = compare_openloop_closedloop(plan, plan_gains(plan, cfg.problem, cfg.feedback), cfg.problem,
                                      ex.compare_samples, ex.seed, epsilon=ex.compare_epsilon)
    helps = cmp.feedback_helps(3.0)
    print(f"compare: eps={ex.compare_epsilon:g} closed={cmp.closed_terminal_error:.4f} "
          f"open={cmp.open_terminal_error:.4f} gap={cmp.terminal_gap:.4f} "
          f"se={cmp.terminal_gap_std_error:.4f} feedback_helps={helps}")
    (out / "compare.json").write_text(json.dumps(vars(cmp) | {"feedback_helps": helps}, indent=2) + "\n")
    codes.append(0 if helps else 1)
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
