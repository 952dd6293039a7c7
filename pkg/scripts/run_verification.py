#!/usr/bin/env python3
"""Full analysis-verification sweep into results/verification/.

Runs the `verify` subcommand for the rotating pulse at eps=1e-3 (three
levels of constants plus the two-level saturation ratios on mesh levels
2-4) and prints a drift table: max/min of each measured constant across
levels.  Constants tied to scale-invariant inequalities should drift by
less than a factor 2; the bubble c2 rows should be level-stable to 1%.
"""

import argparse
import csv
import sys
from collections import defaultdict
from pathlib import Path

from sthdg.cli import main as cli_main

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("results/verification"))
    ap.add_argument("--eps", type=float, default=1e-3)
    ap.add_argument("--levels", type=int, default=3)
    args = ap.parse_args()

    rc = cli_main([
        "verify", "--problem", "rotating-pulse", "--eps", str(args.eps),
        "--dim", "2", "--ps", "1", "--cycles", str(args.levels),
        "--out", str(args.out),
    ])
    if rc != 0:
        sys.exit(rc)

    by_name = defaultdict(list)
    with open(args.out / "constants.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            by_name[row["inequality"]].append(float(row["constant"]))

    print(f"{'constant':28s} {'min':>12s} {'max':>12s} {'drift':>8s}")
    for name in sorted(by_name):
        vals = by_name[name]
        lo, hi = min(vals), max(vals)
        drift = hi / lo if lo > 0 else float("inf")
        print(f"{name:28s} {lo:12.5g} {hi:12.5g} {drift:8.3f}")
