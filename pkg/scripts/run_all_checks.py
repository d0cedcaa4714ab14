#!/usr/bin/env python3
"""Run every bundled experiment config and summarize the verdicts.

Writes one output directory per experiment under --out (default
results/) and prints a final table.  Exit code 0 iff every experiment's
contracts passed.  Expect the full sweep to take several minutes at the
bundled trial counts.  --quick shrinks the Monte Carlo runs to exercise
the plumbing; the calibration pass contracts are tuned for the full
trial counts and can fail spuriously at the reduced ones.
"""

import argparse
import os
import sys

from optstop.cli import parse_config_text, run

HERE = os.path.dirname(os.path.abspath(__file__))

EXPERIMENTS = [
    ("exact-calibration", "exact_calibration.cfg"),
    ("exact-markov", "exact_markov.cfg"),
    ("exact-expectation", "exact_expectation.cfg"),
    ("mc-strong-calibration", "mc_strong_calibration.cfg"),
    ("mc-type1", "mc_type1.cfg"),
    ("mc-bf-mean", "mc_bf_mean.cfg"),
    ("mc-marginal-calibration", "mc_marginal_calibration.cfg"),
    ("invariance-check", "invariance_check.cfg"),
]

QUICK_OVERRIDES = {"n_trials": "20000", "trials": "2000"}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results")
    parser.add_argument("--seed", type=int, default=3)
    parser.add_argument(
        "--quick",
        action="store_true",
        help="smaller Monte Carlo runs (plumbing smoke; statistical "
        "contracts are tuned for the full trial counts)",
    )
    args = parser.parse_args()

    outcomes = []
    for kind, cfg_name in EXPERIMENTS:
        with open(os.path.join(HERE, "configs", cfg_name)) as fh:
            config = parse_config_text(fh.read())
        if args.quick:
            for key, value in QUICK_OVERRIDES.items():
                if key in config:
                    config[key] = value
        out_dir = os.path.join(args.out, kind)
        print(f"=== {kind} -> {out_dir}")
        code = run(kind, config, args.seed, out_dir)
        outcomes.append((kind, code))
        print()

    print("summary:")
    for kind, code in outcomes:
        print(f"  {kind:28s} {'PASS' if code == 0 else 'FAIL (exit %d)' % code}")
    return 0 if all(code == 0 for _, code in outcomes) else 2


if __name__ == "__main__":
    sys.exit(main())
