import warnings

import numpy as np
import pytest

from sthdg.assembly import FieldEval, assemble
from sthdg.mesh import SpaceTimeMesh
from sthdg.solver import SolverError, slab_index_sets, solve

from conftest import poly_problem, regression_systems


def test_solve_reports_and_mode_dispatch():
    spec = poly_problem(1)
    mesh = SpaceTimeMesh.build(1, 3, 2)
    sys = assemble(spec, mesh, 1)

    x_auto, rep_auto = solve(sys)
    assert rep_auto.method == "slab-lu"
    assert rep_auto.n_blocks == 3
    assert sum(rep_auto.block_sizes) == sys.n_dofs
    assert rep_auto.residual <= 1e-10

    x_mono, rep_mono = solve(sys, mode="monolithic")
    assert rep_mono.method == "lu"
    assert np.allclose(x_auto, x_mono, atol=1e-9)

    single = assemble(spec, SpaceTimeMesh.build(1, 1, 2), 1)
    _, rep = solve(single)
    assert rep.method == "lu"


def test_slab_blocks_partition_dofs():
    spec = poly_problem(2)
    mesh = SpaceTimeMesh.build(2, 2, 2)
    mesh.refine_and_coarsen([mesh.element_ids()[0]])
    sys = assemble(spec, mesh, 1)
    blocks = slab_index_sets(sys)
    allidx = np.concatenate(blocks)
    assert len(allidx) == sys.n_dofs
    assert len(np.unique(allidx)) == sys.n_dofs


def test_slab_matches_monolithic_on_regressions():
    for spec, mesh, p_s in regression_systems():
        sys = assemble(spec, mesh, p_s)
        xs, _ = solve(sys, mode="slab")
        xm, _ = solve(sys, mode="monolithic")
        scale = max(1.0, float(np.max(np.abs(xm))))
        assert np.max(np.abs(xs - xm)) <= 1e-8 * scale, spec.name


def test_solve_is_deterministic():
    spec = poly_problem(2)
    mesh = SpaceTimeMesh.build(2, 2, 2)
    sys1 = assemble(spec, mesh, 1)
    sys2 = assemble(spec, mesh, 1)
    x1, _ = solve(sys1)
    x2, _ = solve(sys2)
    assert x1.tobytes() == x2.tobytes()


def test_linear_solution_is_reproduced_exactly():
    # u = t + x1 lies in the trial space for any p_s >= 1
    from sthdg.problem import get_problem

    spec = get_problem("linear", eps=1.0, d=1)
    mesh = SpaceTimeMesh.build(1, 2, 2)
    sys = assemble(spec, mesh, 1)
    x, _ = solve(sys)
    ev = FieldEval(sys.dofmap, x)
    for eid in sys.dofmap.elem_ids:
        el = mesh.elements[eid]
        ref = np.array([[0.0, 0.0], [-0.5, 0.3], [1.0, -1.0]])
        pts = el.lo + 0.5 * (ref + 1) * (el.hi - el.lo)
        vals, grad, dt = ev.element_at(eid, ref)
        assert np.allclose(vals, pts[:, 0] + pts[:, 1], atol=1e-10)
        assert np.allclose(grad[:, 0], 1.0, atol=1e-9)
        assert np.allclose(dt, 1.0, atol=1e-9)


def test_unknown_mode_rejected():
    spec = poly_problem(1)
    sys = assemble(spec, SpaceTimeMesh.build(1, 1, 1), 1)
    with pytest.raises(ValueError):
        solve(sys, mode="cg")


def test_singular_system_raises_solver_error():
    spec = poly_problem(1)
    sys = assemble(spec, SpaceTimeMesh.build(1, 1, 2), 1)
    free = np.flatnonzero(sys.free_mask())
    A = sys.A.tolil()
    A[free[0], :] = 0.0
    A[:, free[0]] = 0.0
    sys.A = A.tocsr()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(SolverError):
            solve(sys, mode="monolithic")
