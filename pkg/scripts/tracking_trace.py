"""Cumulative phase and SOP innovations against the tracker's estimates for one trial.

Writes the trace CSV and prints how far the estimates wander from the truth.

    python3 scripts/tracking_trace.py --out trace.csv
"""

import argparse
import sys

import numpy as np

from polartrack import cli
from polartrack import harness as hx


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--format", default="PM-16-QAM")
    ap.add_argument("--symbols", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="trace.csv")
    args = ap.parse_args()
    cfg = hx.recipe("demo", args.format, n_symbols=args.symbols, seed=args.seed)
    trace, res = hx.tracking_demo(cfg)
    cli.write_csv(args.out, cli.DEMO_HEADER, ((int(r[0]), *r[1:]) for r in trace))
    gap = trace[:, 5:] - trace[:, 1:5]
    gap -= gap[0]
    print(f"SER {res.ser:.2e}, cycle slip {res.cycle_slip}, longest error run {res.longest_run}")
    for name, g in zip(("theta", "alpha1", "alpha2", "alpha3"), gap.T):
        print(f"{name:7s} estimate minus truth: std {np.std(g):.3f} rad, max |.| {np.max(np.abs(g)):.3f} rad")
    return 0


if __name__ == "__main__":
    sys.exit(main())
