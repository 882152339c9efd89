"""Windowed SER after a blind start, proposed tracker next to MMA+BPS.

    python3 scripts/convergence_curves.py --formats PM-16-QAM --trials 1000
"""

import argparse
from pathlib import Path
import sys

from polartrack import cli
from polartrack.constellations import FORMATS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--formats", nargs="+", default=["PM-QPSK", "PM-16-QAM", "PM-64-QAM"], choices=FORMATS)
    ap.add_argument("--algorithms", nargs="+", default=["proposed-jones", "cma-bps"])
    ap.add_argument("--symbols", type=int, default=10_000)
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--outdir", default="results")
    args = ap.parse_args()
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    failed = 0
    for fmt in args.formats:
        for alg in args.algorithms:
            path = out / f"converge_{fmt}_{alg}.csv"
            failed += cli.main(["converge", "--format", fmt, "--algorithm", alg, "--symbols", str(args.symbols),
                                "--trials", str(args.trials), "--workers", str(args.workers),
                                "--out", str(path)]) != 0
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
