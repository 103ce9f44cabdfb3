"""Plan the bundled scenario and execute it once, writing CSV and SVG outputs."""

import argparse
import sys

from tlqg.cli import cmd_plan, cmd_simulate
from tlqg.config import bundled_scenario, parse_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/fig1")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--epsilon", type=float, default=None, help="execution noise level")
    args = ap.parse_args()

    cfg = parse_config(bundled_scenario("fig1"))
    code, plan = cmd_plan(cfg, args.out)
    if code:
        return code
    code, _ = cmd_simulate(cfg, args.out, seed=args.seed, epsilon=args.epsilon)
    print(f"outputs in {args.out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
