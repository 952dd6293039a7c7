"""Assembly of the space-time HDG system.

Unknowns are element fields (tensor-product polynomials, degree p_t = 1 in
time and p_s per spatial axis) plus single-valued facet fields.  With the
HDG jump [[v]] := v - mu (element trace minus facet value) the bilinear form
is the sum of a diffusive part

    a_d(u,v) = (eps grad u, grad v)_T
             + <eps alpha h^-1 [[u]], [[v]]>_Q
             - <eps [[u]], grad_n v>_Q - <eps grad_n u, [[v]]>_Q

with grad the spatial gradient, alpha = 8 p_s^2 the interior-penalty weight
(h taken from the facet's owning, i.e. fine, side), and an advective part

    a_c(u,v) = -(beta u, grad_st v)_T
             + <zeta+ (beta.n) lambda, mu>_bdyN
             + <(beta.n) lambda + beta_s [[u]], [[v]]>_dT

where beta_s := sup_F |beta.n| per facet and zeta+ is the pointwise outflow
indicator.  The right-hand side is (f, v)_T + <g, mu>_bdyN.  Dirichlet facet
unknowns are constrained to the facet-wise L2 projection of the boundary
data; `apply_dirichlet` replaces their rows by the identity.

Dof ordering: all element dofs first (elements sorted by id), then facet
dofs (facets sorted by id).

Everything is batched over groups of entities that share the same reference
data (element shape class, or facet-to-element trace map), so the per-entity
work is pure numpy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import fe
from .mesh import Element, Facet, SpaceTimeMesh
from .problem import ProblemSpec

P_T = 1  # temporal degree is fixed by the method

_CHUNK = 4096


def penalty_alpha(p_s: int) -> float:
    return 8.0 * p_s * p_s


# ----------------------------------------------------------------------
# dof map
# ----------------------------------------------------------------------


@dataclass
class DofMap:
    mesh: SpaceTimeMesh
    p_s: int
    elem_ids: list[int]
    facet_ids: list[int]
    elem_offset: dict[int, int]
    facet_offset: dict[int, int]
    n_elem_dofs: int
    n_dofs: int

    @property
    def d(self) -> int:
        return self.mesh.d

    @property
    def elem_degrees(self) -> tuple[int, ...]:
        return (P_T,) + (self.p_s,) * self.d

    def facet_degrees(self, f: Facet) -> tuple[int, ...]:
        # free-axis order is ascending global axis; axis 0 (time) first when
        # present
        if f.is_R:
            return (self.p_s,) * self.d
        return (P_T,) + (self.p_s,) * (self.d - 1)

    @property
    def n_elem_basis(self) -> int:
        return (P_T + 1) * (self.p_s + 1) ** self.d

    def facet_n_basis(self, f: Facet) -> int:
        if f.is_R:
            return (self.p_s + 1) ** self.d
        return (P_T + 1) * (self.p_s + 1) ** (self.d - 1)

    def elem_dofs(self, eid: int) -> np.ndarray:
        o = self.elem_offset[eid]
        return np.arange(o, o + self.n_elem_basis)

    def facet_dofs(self, fid: int) -> np.ndarray:
        f = self.mesh.facets[fid]
        o = self.facet_offset[fid]
        return np.arange(o, o + self.facet_n_basis(f))


def build_dofmap(mesh: SpaceTimeMesh, p_s: int) -> DofMap:
    if p_s < 1:
        raise ValueError(f"spatial degree must be >= 1, got {p_s}")
    elem_ids = mesh.element_ids()
    facet_ids = mesh.facet_ids()
    nbe = (P_T + 1) * (p_s + 1) ** mesh.d
    elem_offset = {eid: i * nbe for i, eid in enumerate(elem_ids)}
    n_elem = nbe * len(elem_ids)
    facet_offset = {}
    off = n_elem
    for fid in facet_ids:
        facet_offset[fid] = off
        f = mesh.facets[fid]
        off += (p_s + 1) ** mesh.d if f.is_R else (P_T + 1) * (p_s + 1) ** (mesh.d - 1)
    return DofMap(
        mesh=mesh, p_s=p_s, elem_ids=elem_ids, facet_ids=facet_ids,
        elem_offset=elem_offset, facet_offset=facet_offset,
        n_elem_dofs=n_elem, n_dofs=off,
    )


# ----------------------------------------------------------------------
# reference data caches
# ----------------------------------------------------------------------

_trace_cache: dict[tuple, fe.BasisValues] = {}


def trace_map(f: Facet, el: Element) -> tuple[float, tuple[float, ...], tuple[float, ...]]:
    """Affine map from facet reference coords to element reference coords.

    Returns (fixed, alphas, betas): the element ref coordinate along the
    facet's frozen axis is `fixed` (+-1), and along the i-th free axis it is
    alphas[i] + betas[i] * xhat_facet[i].
    """
    free = f.free_axes()
    half_el = 0.5 * (el.hi - el.lo)
    mid_el = 0.5 * (el.hi + el.lo)
    half_f = 0.5 * (f.hi - f.lo)
    mid_f = 0.5 * (f.hi + f.lo)
    alphas = tuple((mid_f[a] - mid_el[a]) / half_el[a] for a in free)
    betas = tuple(half_f[a] / half_el[a] for a in free)
    fixed = (f.coord - mid_el[f.axis]) / half_el[f.axis]
    return float(np.sign(fixed)), alphas, betas


def elem_trace_basis(
    degrees: tuple[int, ...], axis: int, fixed: float,
    alphas: tuple[float, ...], betas: tuple[float, ...], nq: int,
) -> fe.BasisValues:
    """Element basis evaluated at facet quadrature points (reference level)."""
    key = (degrees, axis, fixed, alphas, betas, nq)
    hit = _trace_cache.get(key)
    if hit is not None:
        return hit
    k = len(degrees)
    rule = fe.tensor_rule((nq,) * (k - 1)) if k > 1 else fe.tensor_rule(())
    pts = np.empty((rule.points.shape[0] if k > 1 else 1, k))
    free = [a for a in range(k) if a != axis]
    pts[:, axis] = fixed
    for i, a in enumerate(free):
        pts[:, a] = alphas[i] + betas[i] * rule.points[:, i]
    out = fe.get_basis(degrees).eval(pts)
    _trace_cache[key] = out
    return out


_facet_basis_cache: dict[tuple, fe.BasisValues] = {}


def facet_basis_at_rule(degrees: tuple[int, ...], nq: int) -> fe.BasisValues:
    key = (degrees, nq)
    hit = _facet_basis_cache.get(key)
    if hit is None:
        rule = fe.tensor_rule((nq,) * len(degrees))
        hit = fe.get_basis(degrees).eval(rule.points)
        _facet_basis_cache[key] = hit
    return hit


def facet_rule(n_free_axes: int, nq: int) -> fe.TensorRule:
    return fe.tensor_rule((nq,) * n_free_axes)


def facet_phys_points(f: Facet, ref: np.ndarray) -> np.ndarray:
    """Map facet-reference points (nq, k-1) to physical (nq, k)."""
    k = f.lo.shape[0]
    free = f.free_axes()
    pts = np.empty((ref.shape[0], k))
    pts[:, f.axis] = f.coord
    mid = 0.5 * (f.lo + f.hi)
    half = 0.5 * (f.hi - f.lo)
    for i, a in enumerate(free):
        pts[:, a] = mid[a] + half[a] * ref[:, i]
    return pts


# ----------------------------------------------------------------------
# facet beta_s (sup |beta.n|, one value per facet shared by both sides)
# ----------------------------------------------------------------------


def compute_beta_sup(spec: ProblemSpec, mesh: SpaceTimeMesh, nq: int) -> dict[int, float]:
    out: dict[int, float] = {}
    d1 = mesh.d + 1
    corners_cache: dict[int, np.ndarray] = {}
    q_by_axis: dict[int, list[Facet]] = {}
    for f in mesh.facets.values():
        if f.is_R:
            out[f.fid] = 1.0  # beta.n = +-1 exactly on horizontal facets
        else:
            q_by_axis.setdefault(f.axis, []).append(f)
    for axis, facets in q_by_axis.items():
        rule = facet_rule(d1 - 1, nq)
        if d1 - 1 not in corners_cache:
            grid = np.array(np.meshgrid(*([[-1.0, 1.0]] * (d1 - 1)), indexing="ij"))
            corners_cache[d1 - 1] = grid.reshape(d1 - 1, -1).T
        ref = np.vstack([rule.points, corners_cache[d1 - 1]])
        pts = np.concatenate([facet_phys_points(f, ref) for f in facets])
        bvals = spec.beta(pts)[:, axis]
        m = ref.shape[0]
        for i, f in enumerate(facets):
            out[f.fid] = float(np.max(np.abs(bvals[i * m : (i + 1) * m])))
    return out


# ----------------------------------------------------------------------
# assembled system
# ----------------------------------------------------------------------


@dataclass
class AssembledSystem:
    A: sp.csr_matrix  # raw bilinear form, no boundary-row replacement
    b: np.ndarray
    dofmap: DofMap
    dirichlet_idx: np.ndarray  # constrained dof indices
    dirichlet_values: np.ndarray
    beta_sup: dict[int, float]
    spec: ProblemSpec
    quad_n: int

    @property
    def n_dofs(self) -> int:
        return self.dofmap.n_dofs

    def free_mask(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.dirichlet_idx] = False
        return mask


def apply_dirichlet(sys: AssembledSystem) -> tuple[sp.csr_matrix, np.ndarray]:
    """Replace constrained rows by identity with projected boundary values."""
    n = sys.n_dofs
    free = sys.free_mask().astype(float)
    D_free = sp.diags(free)
    dir_ind = np.zeros(n)
    dir_ind[sys.dirichlet_idx] = 1.0
    A_bc = (D_free @ sys.A + sp.diags(dir_ind)).tocsr()
    b_bc = free * sys.b
    b_bc[sys.dirichlet_idx] = sys.dirichlet_values
    return A_bc, b_bc


@dataclass
class _SideItem:
    f: Facet
    el: Element
    sign: int  # outward normal sign of this element along f.axis


def iter_facet_sides(mesh: SpaceTimeMesh):
    for fid in mesh.facet_ids():
        f = mesh.facets[fid]
        yield _SideItem(f, mesh.elements[f.owner], f.owner_side)
        if f.neighbor is not None:
            yield _SideItem(f, mesh.elements[f.neighbor], -f.owner_side)


def default_quad_n(p_s: int) -> int:
    return max(P_T, p_s) + 2


def assemble(
    spec: ProblemSpec, mesh: SpaceTimeMesh, p_s: int, quad_n: int | None = None,
    beta_sup_override: dict[int, float] | None = None,
    penalty_h_override: dict[int, float] | None = None,
) -> AssembledSystem:
    """Assemble the raw system.

    beta_sup_override / penalty_h_override replace the per-facet upwind
    constant and the penalty length scale for selected facets.  The subgrid
    construction uses them to inherit beta_s and h from the parent facet so
    the refined form agrees exactly with the coarse one on restricted
    fields.
    """
    if spec.d != mesh.d:
        raise ValueError("problem and mesh dimensions differ")
    if (mesh.dirichlet_lateral != spec.dirichlet_lateral):
        raise ValueError("mesh and problem disagree on lateral boundary type")
    dm = build_dofmap(mesh, p_s)
    nq = default_quad_n(p_s) if quad_n is None else quad_n
    d = mesh.d
    d1 = d + 1
    eps = spec.eps
    alpha = penalty_alpha(p_s)
    beta_sup = compute_beta_sup(spec, mesh, nq + 2)
    if beta_sup_override:
        beta_sup.update(beta_sup_override)
    pen_h = penalty_h_override or {}

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    b = np.zeros(dm.n_dofs)

    def scatter(r2d: np.ndarray, c2d: np.ndarray, block: np.ndarray):
        m, nr, nc = block.shape
        rows.append(np.repeat(r2d[:, :, None], nc, axis=2).reshape(-1))
        cols.append(np.repeat(c2d[:, None, :], nr, axis=1).reshape(-1))
        vals.append(block.reshape(-1))

    # ---------------- volume terms ---------------------------------
    vol_rule = fe.tensor_rule((nq,) * d1)
    wq = vol_rule.weights
    basis = fe.get_basis(dm.elem_degrees)
    BV = basis.eval(vol_rule.points)
    V, G = BV.values, BV.grad  # (nqv, nb), (nqv, nb, d1)
    nb = dm.n_elem_basis

    classes: dict[bytes, list[int]] = {}
    for eid in dm.elem_ids:
        el = mesh.elements[eid]
        classes.setdefault((el.hi - el.lo).tobytes(), []).append(eid)

    for ids in classes.values():
        for start in range(0, len(ids), _CHUNK):
            chunk = ids[start : start + _CHUNK]
            m = len(chunk)
            els = [mesh.elements[e] for e in chunk]
            half = 0.5 * (els[0].hi - els[0].lo)
            jac = float(np.prod(half))
            mids = np.array([0.5 * (e.lo + e.hi) for e in els])
            pts = mids[:, None, :] + half[None, None, :] * vol_rule.points[None, :, :]
            flat = pts.reshape(-1, d1)
            fv = spec.f(flat).reshape(m, -1)
            bbar = spec.beta_bar(flat).reshape(m, -1, d)

            # diffusion: eps sum_a (1/s_a^2) int dGa_j dGa_i   (spatial axes)
            Ad = np.zeros((nb, nb))
            for a in range(1, d1):
                Ga = G[:, :, a]
                Ad += (eps / half[a] ** 2) * np.einsum("q,qi,qj->ij", wq, Ga, Ga)
            # advection: -(beta u, grad_st v): -int phi_j (beta . grad phi_i)
            Bdot = np.broadcast_to((G[:, :, 0] / half[0])[None], (m, len(wq), nb)).copy()
            for a in range(1, d1):
                Bdot += bbar[:, :, a - 1, None] * (G[None, :, :, a] / half[a])
            Aa = -np.einsum("q,qj,mqi->mij", wq, V, Bdot)
            block = jac * (Ad[None, :, :] + Aa)
            base = np.array([dm.elem_offset[e] for e in chunk])
            dof2d = base[:, None] + np.arange(nb)[None, :]
            scatter(dof2d, dof2d, block)
            np.add.at(b, dof2d.reshape(-1), (jac * np.einsum("q,mq,qi->mi", wq, fv, V)).reshape(-1))

    # ---------------- facet terms -----------------------------------
    frule = facet_rule(d, nq)
    wfq = frule.weights
    nqf = len(wfq)

    groups: dict[tuple, list[_SideItem]] = {}
    for it in iter_facet_sides(mesh):
        fixed, alphas, betas = trace_map(it.f, it.el)
        key = (it.f.axis, it.sign, fixed, alphas, betas, it.f.boundary,
               dm.facet_degrees(it.f))
        groups.setdefault(key, []).append(it)

    for key, items in groups.items():
        axis, sign, fixed, alphas, betas, boundary, fdeg = key
        EB = elem_trace_basis(dm.elem_degrees, axis, fixed, alphas, betas, nq)
        FB = facet_basis_at_rule(fdeg, nq)
        E = EB.values  # (nqf, nb)
        Fb = FB.values  # (nqf, nbf)
        nbf = Fb.shape[1]
        is_Q = axis >= 1
        neumann_bdy = boundary in ("initial", "final", "neumann")

        for start in range(0, len(items), _CHUNK):
            ch = items[start : start + _CHUNK]
            m = len(ch)
            jacF = np.array([0.5 ** d * np.prod(np.delete(it.f.hi - it.f.lo, axis)) for it in ch])
            pts = np.stack([facet_phys_points(it.f, frule.points) for it in ch])
            flat = pts.reshape(-1, d1)
            bn = sign * spec.beta(flat)[:, axis].reshape(m, nqf)
            bs = np.array([beta_sup[it.f.fid] for it in ch])
            we = wfq[None, :] * jacF[:, None]

            ebase = np.array([dm.elem_offset[it.el.eid] for it in ch])
            fbase = np.array([dm.facet_offset[it.f.fid] for it in ch])
            edofs = ebase[:, None] + np.arange(nb)[None, :]
            fdofs = fbase[:, None] + np.arange(nbf)[None, :]

            # advective flux: ((bn) lambda + bs (u - lambda), v - mu)
            w_bs = we * bs[:, None]
            w_mix = we * (bn - bs[:, None])
            scatter(edofs, edofs, np.einsum("mq,qi,qj->mij", w_bs, E, E))
            scatter(edofs, fdofs, np.einsum("mq,qi,qj->mij", w_mix, E, Fb))
            scatter(fdofs, edofs, -np.einsum("mq,qi,qj->mij", w_bs, Fb, E))
            scatter(fdofs, fdofs, -np.einsum("mq,qi,qj->mij", w_mix, Fb, Fb))

            if is_Q:
                pen = np.array([
                    eps * alpha / pen_h.get(it.f.fid, mesh.elements[it.f.owner].h)
                    for it in ch
                ])
                wp = we * pen[:, None]
                scatter(edofs, edofs, np.einsum("mq,qi,qj->mij", wp, E, E))
                scatter(edofs, fdofs, -np.einsum("mq,qi,qj->mij", wp, E, Fb))
                scatter(fdofs, edofs, -np.einsum("mq,qi,qj->mij", wp, Fb, E))
                scatter(fdofs, fdofs, np.einsum("mq,qi,qj->mij", wp, Fb, Fb))

                s_ax = np.array([0.5 * (it.el.hi[axis] - it.el.lo[axis]) for it in ch])
                Gn = EB.grad[:, :, axis]  # (nqf, nb), d/d(ref axis)
                wg = we * (sign * eps / s_ax)[:, None]
                # -<eps [[u]], grad_n v>
                scatter(edofs, edofs, -np.einsum("mq,qi,qj->mij", wg, Gn, E))
                scatter(edofs, fdofs, np.einsum("mq,qi,qj->mij", wg, Gn, Fb))
                # -<eps grad_n u, [[v]]>
                scatter(edofs, edofs, -np.einsum("mq,qj,qi->mij", wg, Gn, E))
                scatter(fdofs, edofs, np.einsum("mq,qj,qi->mij", wg, Gn, Fb))

            if neumann_bdy:
                zp = (bn >= 0).astype(float)
                scatter(fdofs, fdofs, np.einsum("mq,qi,qj->mij", we * zp * bn, Fb, Fb))
                normal = np.zeros(d1)
                normal[axis] = sign
                g = spec.neumann_data(flat, normal).reshape(m, nqf)
                np.add.at(b, fdofs.reshape(-1), np.einsum("mq,qi->mi", we * g, Fb).reshape(-1))

    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dm.n_dofs, dm.n_dofs),
    ).tocsr()

    # ---------------- Dirichlet values ------------------------------
    dir_fids = [fid for fid in dm.facet_ids if mesh.facets[fid].boundary == "dirichlet"]
    dir_idx: list[np.ndarray] = []
    dir_vals: list[np.ndarray] = []
    if dir_fids:
        bygroup: dict[tuple, list[int]] = {}
        for fid in dir_fids:
            bygroup.setdefault(dm.facet_degrees(mesh.facets[fid]), []).append(fid)
        for fdeg, fids in bygroup.items():
            FB = facet_basis_at_rule(fdeg, nq)
            rule = facet_rule(len(fdeg), nq)
            Gram = FB.values.T @ (FB.values * rule.weights[:, None])
            pts = np.concatenate(
                [facet_phys_points(mesh.facets[fid], rule.points) for fid in fids]
            )
            gv = spec.dirichlet_data(pts).reshape(len(fids), -1)
            rhs = np.einsum("q,qi,mq->mi", rule.weights, FB.values, gv)
            coeffs = np.linalg.solve(Gram, rhs.T).T
            for i, fid in enumerate(fids):
                dir_idx.append(dm.facet_dofs(fid))
                dir_vals.append(coeffs[i])
    dirichlet_idx = np.concatenate(dir_idx) if dir_idx else np.empty(0, dtype=int)
    dirichlet_values = np.concatenate(dir_vals) if dir_vals else np.empty(0)

    return AssembledSystem(
        A=A, b=b, dofmap=dm, dirichlet_idx=dirichlet_idx,
        dirichlet_values=dirichlet_values, beta_sup=beta_sup, spec=spec, quad_n=nq,
    )


# ----------------------------------------------------------------------
# field evaluation
# ----------------------------------------------------------------------


class FieldEval:
    """Point evaluation of a discrete solution (element and facet parts)."""

    def __init__(self, dofmap: DofMap, x: np.ndarray):
        self.dm = dofmap
        self.x = np.asarray(x)
        self._basis = fe.get_basis(dofmap.elem_degrees)

    def elem_coeffs(self, eid: int) -> np.ndarray:
        o = self.dm.elem_offset[eid]
        return self.x[o : o + self.dm.n_elem_basis]

    def facet_coeffs(self, fid: int) -> np.ndarray:
        f = self.dm.mesh.facets[fid]
        o = self.dm.facet_offset[fid]
        return self.x[o : o + self.dm.facet_n_basis(f)]

    def element_at(self, eid: int, ref_pts: np.ndarray):
        """values, spatial gradient, time derivative at element ref points."""
        el = self.dm.mesh.elements[eid]
        bv = self._basis.eval(ref_pts)
        c = self.elem_coeffs(eid)
        half = 0.5 * (el.hi - el.lo)
        vals = bv.values @ c
        dt = (bv.grad[:, :, 0] @ c) / half[0]
        grad = np.stack([(bv.grad[:, :, a] @ c) / half[a] for a in range(1, self.dm.d + 1)], axis=-1)
        return vals, grad, dt

    def facet_at(self, fid: int, ref_pts: np.ndarray) -> np.ndarray:
        f = self.dm.mesh.facets[fid]
        fb = fe.get_basis(self.dm.facet_degrees(f))
        return fb.eval(ref_pts).values @ self.facet_coeffs(fid)
