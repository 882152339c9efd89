"""1 dB penalty thresholds for every format, receiver and linewidth axis.

Each cell is a log-bisection at the AWGN anchor + 1 dB; the companion
linewidth follows the sweep recipes.  Prints a table and writes a CSV.

    python3 scripts/tolerance_table.py --formats PM-QPSK --symbols 1000000 --trials 2
"""

import argparse
import sys

from polartrack import cli
from polartrack import harness as hx
from polartrack.constellations import FORMATS

AXES = {"delta_p_t": ("pol", 1e-7, 1e-2), "delta_nu_t": ("lw", 1e-6, 1e-2)}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--formats", nargs="+", default=list(FORMATS), choices=FORMATS)
    ap.add_argument("--algorithms", nargs="+", default=["proposed-jones", "kabsch", "cma-bps"])
    ap.add_argument("--symbols", type=int, default=1_000_000)
    ap.add_argument("--trials", type=int, default=1)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--ratio", type=float, default=1.1)
    ap.add_argument("--out", default="tolerance_table.csv")
    args = ap.parse_args()
    rows = []
    for fmt in args.formats:
        for alg in args.algorithms:
            for axis, (kind, lo, hi) in AXES.items():
                cfg = hx.recipe(kind, fmt, algorithm=alg, n_symbols=args.symbols, n_trials=args.trials,
                                workers=args.workers, axis=None, grid=(),
                                snr_db=hx.awgn_anchor_snr(fmt) + 1.0)
                res = hx.find_1db_tolerance(cfg, axis, lo=lo, hi=hi, ratio=args.ratio, snr_db=cfg.snr_db)
                rows.append((fmt, alg, axis, res.threshold, res.label, res.status, res.snr_db))
                print(f"{fmt:11s} {alg:15s} {axis:10s} {res.label:>10s}", flush=True)
    cli.write_csv(args.out, ("format", "algorithm", "axis", "threshold", "label", "status", "snr_db"), rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
