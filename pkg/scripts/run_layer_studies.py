#!/usr/bin/env python3
"""Boundary- and interior-layer AMR studies with efficiency-index report.

Boundary layer at eps=1e-2 checks the asymptotic error slope; the interior
layer runs at eps in {1e-2, 1e-3} and reports the worst efficiency index
(expected to stay well below the a-priori bound).
"""

import argparse
import sys
from pathlib import Path

from sthdg.adapt import loglog_slope
from sthdg.cli import main as cli_main


def study(problem: str, eps: float, cycles: int, out_root: Path):
    out = out_root / f"{problem.replace('-', '_')}_{eps:g}"
    rc = cli_main([
        "study", "--problem", problem, "--eps", str(eps),
        "--dim", "2", "--ps", "1", "--cycles", str(cycles),
        "--mode", "amr", "--dt-policy", "h",
        "--slabs", "2", "--cells", "2", "--out", str(out),
    ])
    if rc != 0:
        sys.exit(rc)
    rows = [ln.split(",") for ln in
            (out / "study.csv").read_text().splitlines()[1:]]
    return ([int(r[2]) for r in rows], [float(r[4]) for r in rows],
            [float(r[5]) for r in rows])


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cycles", type=int, default=8)
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args()

    ns, errs, effs = study("boundary-layer", 1e-2, args.cycles, args.out)
    print(f"boundary-layer eps=1e-2: slope last 3 = "
          f"{loglog_slope(ns, errs, 3):.4f}, eff range "
          f"[{min(effs):.2f}, {max(effs):.2f}]")

    for eps in (1e-2, 1e-3):
        cyc = min(args.cycles, 7)
        ns, errs, effs = study("interior-layer", eps, cyc, args.out)
        print(f"interior-layer eps={eps:g}: max efficiency index "
              f"{max(effs):.2f} over {cyc} cycles")
