"""SER sweeps (SOP drift, laser linewidth, SNR) for several formats and receivers.

Writes one CSV per (sweep, format, algorithm) into --outdir, using the CLI
recipes so the files match ``polartrack sweep-*`` output exactly.

    python3 scripts/run_sweeps.py --formats PM-QPSK PM-16-QAM --symbols 1000000
"""

import argparse
from pathlib import Path
import sys

from polartrack import cli
from polartrack.constellations import FORMATS

SWEEPS = ("sweep-pol", "sweep-lw", "sweep-snr")
ALGORITHMS = ("proposed-jones", "kabsch", "cma-bps")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--formats", nargs="+", default=list(FORMATS), choices=FORMATS)
    ap.add_argument("--algorithms", nargs="+", default=list(ALGORITHMS))
    ap.add_argument("--sweeps", nargs="+", default=list(SWEEPS), choices=SWEEPS)
    ap.add_argument("--symbols", type=int, default=1_000_000)
    ap.add_argument("--trials", type=int, default=1)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--outdir", default="results")
    args = ap.parse_args()
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    failed = 0
    for sweep in args.sweeps:
        for fmt in args.formats:
            for alg in args.algorithms:
                path = out / f"{sweep}_{fmt}_{alg}.csv"
                argv = [sweep, "--format", fmt, "--algorithm", alg, "--symbols", str(args.symbols),
                        "--trials", str(args.trials), "--workers", str(args.workers), "--seed", str(args.seed),
                        "--out", str(path)]
                print(f"{sweep} {fmt} {alg} -> {path}", file=sys.stderr)
                failed += cli.main(argv) != 0
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
