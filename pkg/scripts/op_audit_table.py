"""Counted real operations per symbol for the instrumented trackers.

    python3 scripts/op_audit_table.py
"""

import sys

from polartrack.constellations import FORMATS
from polartrack.opcount import INSTRUMENTED, op_count_audit, reference_trend


def main():
    print(f"{'algorithm':16s} {'format':11s} {'P':>3s} {'ops':>8s} {'trend':>7s} {'cmp':>4s} {'mem':>4s}")
    for alg in INSTRUMENTED:
        for fmt in FORMATS:
            for p in (1, 4, 16):
                r = op_count_audit(alg, fmt, p)
                print(f"{alg:16s} {fmt:11s} {p:3d} {r.operations:8.1f} {reference_trend(p):7.1f} "
                      f"{r.comparisons:4d} {r.memory_units:4d}")
    r = op_count_audit("proposed-jones", "PM-16-QAM", factored=True)
    print(f"\nproposed-jones with column-product reuse: {r.full_step} ops per full step")
    return 0


if __name__ == "__main__":
    sys.exit(main())
