"""Fixed-fraction marking and the solve-estimate-mark-refine loop.

Marking sorts elements by their estimator value eta_K descending (ties
broken by ascending element id) and refines the top 25% while coarsening
the bottom 10% by element count.  Coarsening only takes effect for
complete sibling groups; the mesh layer drops partial groups.

`run_study` drives uniform or adaptive cycles and records one StudyRecord
per solve.  CSV output is deterministic: the wall_ms column is written as 0
(timings vary run to run and the table must be byte-identical across
reruns); true timings go into the run manifest instead.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .assembly import assemble
from .estimator import EstimateResult, efficiency_index, error_norms, estimate
from .mesh import SpaceTimeMesh
from .problem import ProblemSpec
from .solver import solve

CSV_HEADER = "cycle,n_elements,n_dofs,eta,true_error,eff_index,wall_ms"


@dataclass
class StudyRecord:
    cycle: int
    n_elements: int
    n_dofs: int
    eta: float
    true_error: float  # nan when the problem has no exact solution
    eff_index: float
    wall_ms: float

    def csv_row(self) -> str:
        def num(v: float) -> str:
            if math.isnan(v):
                return "nan"
            return f"{v:.12g}"

        return (
            f"{self.cycle},{self.n_elements},{self.n_dofs},"
            f"{num(self.eta)},{num(self.true_error)},{num(self.eff_index)},0"
        )


def mark(
    est: EstimateResult,
    refine_fraction: float = 0.25,
    coarsen_fraction: float = 0.10,
) -> tuple[list[int], list[int]]:
    """Element ids to refine (top fraction by eta_K) and to coarsen (bottom)."""
    if not est.per_element:
        raise ValueError("cannot mark an empty estimate")
    if not (0 <= refine_fraction <= 1 and 0 <= coarsen_fraction <= 1):
        raise ValueError("fractions must lie in [0, 1]")
    if refine_fraction + coarsen_fraction > 1:
        raise ValueError("refine and coarsen fractions overlap")
    order = sorted(est.per_element, key=lambda eid: (-est.per_element[eid].eta_K, eid))
    n = len(order)
    n_ref = math.ceil(refine_fraction * n)
    n_coar = math.floor(coarsen_fraction * n)
    refine = order[:n_ref]
    coarsen = order[n - n_coar:] if n_coar else []
    return refine, coarsen


def write_csv(records: list[StudyRecord], path) -> None:
    lines = [CSV_HEADER] + [r.csv_row() for r in records]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def run_study(
    spec: ProblemSpec,
    mode: str,
    cycles: int,
    p_s: int,
    n_slabs: int,
    n_cells,
    policy: str = "h",
    solver_mode: str = "auto",
    refine_fraction: float = 0.25,
    coarsen_fraction: float = 0.10,
    csv_path=None,
    on_cycle=None,
) -> tuple[list[StudyRecord], SpaceTimeMesh]:
    """Run an AMR or uniform refinement study.

    Records are appended (and the CSV rewritten, when csv_path is given)
    after every solve, so partial results survive a solver failure: the
    exception propagates after the flush.
    """
    if mode not in ("amr", "uniform"):
        raise ValueError(f"mode must be 'amr' or 'uniform', got {mode!r}")
    if cycles < 1:
        raise ValueError("need at least one cycle")
    mesh = SpaceTimeMesh.build(
        spec.d, n_slabs, n_cells, t_final=spec.t_final,
        x_lo=spec.x_lo, x_hi=spec.x_hi, policy=policy,
        dirichlet_lateral=spec.dirichlet_lateral,
    )
    records: list[StudyRecord] = []
    for cycle in range(cycles):
        t0 = time.perf_counter()
        try:
            sys = assemble(spec, mesh, p_s)
            x, rep = solve(sys, mode=solver_mode)
        except Exception:
            if csv_path is not None:
                write_csv(records, csv_path)
            raise
        est = estimate(sys, x)
        if spec.has_exact():
            nb = error_norms(sys, x)
            err = nb.sT_norm()
            eff = efficiency_index(est.eta, err)
        else:
            err = math.nan
            eff = math.nan
        rec = StudyRecord(
            cycle=cycle, n_elements=mesh.n_elements, n_dofs=sys.n_dofs,
            eta=est.eta, true_error=err, eff_index=eff,
            wall_ms=1e3 * (time.perf_counter() - t0),
        )
        records.append(rec)
        if csv_path is not None:
            write_csv(records, csv_path)
        if on_cycle is not None:
            on_cycle(cycle, mesh, sys, x, est, rec)
        if cycle < cycles - 1:
            if mode == "amr":
                refine, coarsen = mark(est, refine_fraction, coarsen_fraction)
                mesh.refine_and_coarsen(refine, coarsen)
            else:
                mesh.refine_uniform(1)
    return records, mesh


def loglog_slope(ns: list[int], errs: list[float], last: int) -> float:
    """Least-squares slope of log(err) vs log(N) over the last `last` points."""
    x = np.log(np.array(ns[-last:], dtype=float))
    y = np.log(np.array(errs[-last:], dtype=float))
    A = np.vstack([x, np.ones_like(x)]).T
    sl, _ = np.linalg.lstsq(A, y, rcond=None)[0]
    return float(sl)
