import numpy as np
import pytest

from sthdg.assembly import FieldEval, assemble
from sthdg.mesh import SpaceTimeMesh
from sthdg.problem import get_problem
from sthdg.solver import solve
from sthdg.vtk_io import (
    center_values,
    elements_at_time,
    slice_values,
    write_mesh_vtk,
    write_slice_vtk,
)


def _sections(text):
    out = {}
    for line in text.splitlines():
        head = line.split(" ")[0]
        if head in ("POINTS", "CELLS", "CELL_TYPES", "CELL_DATA", "SCALARS"):
            out.setdefault(head, []).append(line)
    return out


def test_mesh_vtk_structure(tmp_path):
    mesh = SpaceTimeMesh.build(1, 2, 2)
    p = tmp_path / "mesh.vtk"
    write_mesh_vtk(p, mesh, {"eta": {e: 0.5 for e in mesh.element_ids()}})
    text = p.read_text()
    lines = text.splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert lines[2] == "ASCII"
    assert "DATASET UNSTRUCTURED_GRID" in text
    sec = _sections(text)
    assert sec["POINTS"][0] == "POINTS 9 float"  # 3x3 grid, corners dedup
    assert sec["CELL_TYPES"][0] == "CELL_TYPES 4"
    assert sec["CELL_DATA"][0] == "CELL_DATA 4"
    names = {s.split(" ")[1]: s.split(" ")[2] for s in sec["SCALARS"]}
    assert names["level"] == "int"
    assert names["slab"] == "int"
    assert names["eta"] == "float"
    # quad cells for d = 1
    idx = lines.index("CELL_TYPES 4")
    assert lines[idx + 1 : idx + 5] == ["9"] * 4


def test_mesh_vtk_d2_hexahedra(tmp_path):
    mesh = SpaceTimeMesh.build(2, 1, 2)
    p = tmp_path / "mesh.vtk"
    write_mesh_vtk(p, mesh)
    text = p.read_text()
    sec = _sections(text)
    assert sec["POINTS"][0] == "POINTS 18 float"  # 3x3x2 grid
    assert text.splitlines()[text.splitlines().index("CELL_TYPES 4") + 1] == "12"


def test_mesh_vtk_is_deterministic(tmp_path):
    mesh = SpaceTimeMesh.build(2, 2, 2)
    mesh.refine_and_coarsen([mesh.element_ids()[0]])
    vals = {e: float(i) for i, e in enumerate(mesh.element_ids())}
    p1, p2 = tmp_path / "a.vtk", tmp_path / "b.vtk"
    write_mesh_vtk(p1, mesh, {"v": vals})
    write_mesh_vtk(p2, mesh, {"v": vals})
    assert p1.read_bytes() == p2.read_bytes()


def test_elements_at_time_top_closure():
    mesh = SpaceTimeMesh.build(1, 2, 2)
    assert len(elements_at_time(mesh, 0.0)) == 2
    assert len(elements_at_time(mesh, 0.25)) == 2
    # the slab interface belongs to the upper slab
    at_half = elements_at_time(mesh, 0.5)
    assert len(at_half) == 2
    assert all(mesh.elements[e].slab == 1 for e in at_half)
    # final time keeps the top slab (closed from above)
    at_end = elements_at_time(mesh, 1.0)
    assert len(at_end) == 2
    assert all(mesh.elements[e].slab == 1 for e in at_end)
    assert elements_at_time(mesh, 2.0) == []


def test_slice_vtk(tmp_path):
    mesh = SpaceTimeMesh.build(2, 2, 2)
    p = tmp_path / "slice.vtk"
    eids = write_slice_vtk(p, mesh, 0.75)
    assert len(eids) == 4
    text = p.read_text()
    sec = _sections(text)
    assert sec["POINTS"][0] == "POINTS 9 float"
    idx = text.splitlines().index("CELL_TYPES 4")
    assert text.splitlines()[idx + 1] == "9"  # VTK_QUAD
    with pytest.raises(ValueError):
        write_slice_vtk(tmp_path / "bad.vtk", mesh, 3.0)


def test_center_and_slice_values():
    spec = get_problem("linear", eps=1.0, d=1)
    mesh = SpaceTimeMesh.build(1, 2, 2)
    sys = assemble(spec, mesh, 1)
    x, _ = solve(sys)
    ev = FieldEval(sys.dofmap, x)
    cv = center_values(mesh, ev)
    for eid, v in cv.items():
        c = mesh.elements[eid].center()
        assert abs(v - (c[0] + c[1])) < 1e-9
    sv = slice_values(mesh, ev, 0.5)
    assert set(sv) == set(elements_at_time(mesh, 0.5))
    for eid, v in sv.items():
        el = mesh.elements[eid]
        xc = 0.5 * (el.lo[1] + el.hi[1])
        assert abs(v - (0.5 + xc)) < 1e-9


def test_missing_cell_values_default_to_zero(tmp_path):
    mesh = SpaceTimeMesh.build(1, 1, 2)
    first = mesh.element_ids()[0]
    p = tmp_path / "partial.vtk"
    write_mesh_vtk(p, mesh, {"v": {first: 2.5}})
    lines = p.read_text().splitlines()
    i = lines.index("SCALARS v float 1")
    assert lines[i + 1] == "LOOKUP_TABLE default"
    vals = sorted(lines[i + 2 : i + 4])
    assert vals == ["0", "2.5"]
