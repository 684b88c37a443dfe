"""GIFT Helmholtz solver: NURBS geometry, PHT-spline field, multi-patch.

The weak form is

    a(u, v) = int grad u . grad v - k^2 int u v + sum_edges alpha int u v
    l(v)    = sum_edges int g v - int s v

for ``Laplacian(u) + k^2 u = s`` with ``du/dn + alpha u = g`` on Robin-type
edges (Neumann is ``alpha = 0``; BGT1 is ``alpha = 1/(2R) - ik``). No
conjugation appears, so the matrix is complex symmetric.

Patches are coupled C0 across interfaces by eliminating trace-carrying
DOFs on one side; the global matrix is ``T^T A T`` with the sparse
prolongation ``T`` from global to patch-local DOFs.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, GeometryError, NumericalError
from .pht import EDGES, PhtMesh, bernstein3
from .spline import KnotVector, NurbsPatch

N_GAUSS = 5  # p + 2 for cubic PHT
_GX, _GW = np.polynomial.legendre.leggauss(N_GAUSS)


# ------------------------------------------------------------ boundary kinds
@dataclass(frozen=True)
class Dirichlet:
    g: Callable | complex = 0.0


@dataclass(frozen=True)
class Neumann:
    """Prescribed normal derivative ``du/dn = flux(x, n)`` (or a constant)."""

    flux: Callable | complex = 0.0


@dataclass(frozen=True)
class Robin:
    """``du/dn + alpha u = f``."""

    alpha: complex
    f: Callable | complex = 0.0


@dataclass(frozen=True)
class BGT1:
    R: float


@dataclass(frozen=True)
class Symmetry:
    pass


def apply_bgt1(R: float, k: float) -> complex:
    """First-order BGT impedance ``1/(2R) - ik``."""
    if R <= 0:
        raise ValueError("radius must be positive")
    return complex(0.5 / R, -k)


@dataclass(frozen=True)
class Interface:
    """Two patch edges glued together; orientation is detected from geometry."""

    a: tuple[int, str]
    b: tuple[int, str]


@dataclass
class HelmholtzProblem:
    patches: Sequence[NurbsPatch]
    meshes: Sequence[PhtMesh]
    k: float
    boundary: Mapping[tuple[int, str], object]
    interfaces: Sequence[Interface] = ()
    source: Callable | None = None

    def __post_init__(self):
        if self.k <= 0:
            raise ConfigError("wavenumber must be positive")
        if len(self.patches) != len(self.meshes):
            raise ConfigError("one PHT mesh per patch is required")
        glued = set()
        for itf in self.interfaces:
            if itf.a == itf.b or itf.a[0] == itf.b[0] and itf.a[1] == itf.b[1]:
                raise ConfigError("an edge cannot be paired with itself")
            for e in (itf.a, itf.b):
                if e in glued:
                    raise ConfigError("edge %r appears in two interfaces" % (e,))
                glued.add(e)
        for p in range(len(self.patches)):
            for e in EDGES:
                key = (p, e)
                has_bc = key in self.boundary
                if has_bc and key in glued:
                    raise ConfigError("edge %r is both an interface and a boundary" % (key,))
                if not has_bc and key not in glued:
                    raise ConfigError("edge %r has no boundary condition" % (key,))

    def with_meshes(self, meshes) -> "HelmholtzProblem":
        return HelmholtzProblem(self.patches, list(meshes), self.k, self.boundary, self.interfaces, self.source)

    def with_patches(self, patches) -> "HelmholtzProblem":
        return HelmholtzProblem(list(patches), self.meshes, self.k, self.boundary, self.interfaces, self.source)


# ------------------------------------------------------------------ helpers
def _ref_tables():
    B, dB, _ = bernstein3(_GX)
    # tensor index 4*j + k (u index j, v index k); quadrature index qu*N + qv
    Bt = np.einsum("jx,ky->jkxy", B, B).reshape(16, -1)
    Bu = np.einsum("jx,ky->jkxy", dB, B).reshape(16, -1)
    Bv = np.einsum("jx,ky->jkxy", B, dB).reshape(16, -1)
    W = np.outer(_GW, _GW).ravel()
    return Bt, Bu, Bv, W


_BT, _BU, _BV, _W2 = _ref_tables()


def _edge_local(edge: str, s: np.ndarray):
    """Local cell coordinates of points on a cell side touching an edge."""
    one = np.ones_like(s)
    return {
        "v0": (s, -one),
        "v1": (s, one),
        "u0": (-one, s),
        "u1": (one, s),
    }[edge]


def _tensor(su, sv):
    Bu, dBu, _ = bernstein3(su)
    Bv, dBv, _ = bernstein3(sv)
    B = np.einsum("jq,kq->jkq", Bu, Bv).reshape(16, -1)
    Du = np.einsum("jq,kq->jkq", dBu, Bv).reshape(16, -1)
    Dv = np.einsum("jq,kq->jkq", Bu, dBv).reshape(16, -1)
    return B, Du, Dv


def _outward_normal(edge: str, J: np.ndarray):
    if edge in ("v0", "v1"):
        t = J[:, :, 0]
    else:
        t = J[:, :, 1]
    speed = np.hypot(t[:, 0], t[:, 1])
    if edge in ("v0", "u1"):
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
    else:
        n = np.stack([-t[:, 1], t[:, 0]], axis=1)
    return n / speed[:, None], speed


def _evaluate_data(g, x, n=None):
    if callable(g):
        return np.asarray(g(x, n) if n is not None else g(x), dtype=complex)
    return np.full(x.shape[0], complex(g))


def _call_flux(g, x, n):
    if callable(g):
        return np.asarray(g(x, n), dtype=complex)
    return np.full(x.shape[0], complex(g))


def _call_point(g, x):
    if callable(g):
        return np.asarray(g(x), dtype=complex)
    return np.full(x.shape[0], complex(g))


# --------------------------------------------------------- quadrature data
@dataclass
class VolumeData:
    """Per-cell quadrature data for one patch (shape prefixes ``(nc, q)``)."""

    x: np.ndarray
    W: np.ndarray
    gx: np.ndarray  # physical x-derivative of Bernstein tensors (nc, 16, q)
    gy: np.ndarray
    C: np.ndarray
    idx: np.ndarray

    def values(self, coef: np.ndarray) -> np.ndarray:
        cc = np.where(self.idx >= 0, coef[np.maximum(self.idx, 0)], 0.0)
        ord_ = np.einsum("cn,cnk->ck", cc, self.C)
        return ord_ @ _BT

    def gradients(self, coef: np.ndarray):
        cc = np.where(self.idx >= 0, coef[np.maximum(self.idx, 0)], 0.0)
        ord_ = np.einsum("cn,cnk->ck", cc, self.C)
        return np.einsum("ck,ckq->cq", ord_, self.gx), np.einsum("ck,ckq->cq", ord_, self.gy)


def _cell_geometry(patch: NurbsPatch, rect: np.ndarray):
    """Quadrature points, weights and physical gradients on the given cells."""
    nc = rect.shape[0]
    hu = rect[:, 2] - rect[:, 0]
    hv = rect[:, 3] - rect[:, 1]
    qu = np.repeat(_GX, N_GAUSS)
    qv = np.tile(_GX, N_GAUSS)
    u = rect[:, 0:1] + 0.5 * (qu[None, :] + 1) * hu[:, None]
    v = rect[:, 1:2] + 0.5 * (qv[None, :] + 1) * hv[:, None]
    x, J = patch.map(u.ravel(), v.ravel())
    nq = qu.size
    x = x.reshape(nc, nq, 2)
    J = J.reshape(nc, nq, 2, 2)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(det <= 0):
        raise GeometryError("nonpositive Jacobian determinant at a quadrature point")
    inv00 = J[..., 1, 1] / det
    inv01 = -J[..., 0, 1] / det
    inv10 = -J[..., 1, 0] / det
    inv11 = J[..., 0, 0] / det
    Gu = _BU[None, :, :] * (2.0 / hu)[:, None, None]
    Gv = _BV[None, :, :] * (2.0 / hv)[:, None, None]
    # grad_x = J^{-T} grad_xi
    gx = inv00[:, None, :] * Gu + inv10[:, None, :] * Gv
    gy = inv01[:, None, :] * Gu + inv11[:, None, :] * Gv
    W = _W2[None, :] * det * (0.25 * hu * hv)[:, None]
    return x, W, gx, gy


def volume_data(patch: NurbsPatch, mesh: PhtMesh) -> VolumeData:
    arr = mesh.cell_arrays()
    x, W, gx, gy = _cell_geometry(patch, arr["rect"])
    return VolumeData(x, W, gx, gy, arr["C"], arr["idx"])


@dataclass
class EdgeData:
    """Quadrature data on one patch edge (shape prefixes ``(ne, q)``)."""

    x: np.ndarray
    n: np.ndarray
    W: np.ndarray
    B: np.ndarray  # (ne, 16, q) Bernstein tensor values on the cell side
    gx: np.ndarray
    gy: np.ndarray
    C: np.ndarray
    idx: np.ndarray
    t: np.ndarray  # edge coordinate of each point

    def ordinates(self, coef):
        cc = np.where(self.idx >= 0, coef[np.maximum(self.idx, 0)], 0.0)
        return np.einsum("cn,cnk->ck", cc, self.C)

    def values(self, coef):
        return np.einsum("ck,ckq->cq", self.ordinates(coef), self.B)

    def gradients(self, coef):
        o = self.ordinates(coef)
        return np.einsum("ck,ckq->cq", o, self.gx), np.einsum("ck,ckq->cq", o, self.gy)


def edge_data(patch: NurbsPatch, mesh: PhtMesh, edge: str, n_gauss: int = N_GAUSS) -> EdgeData:
    gx_, gw_ = np.polynomial.legendre.leggauss(n_gauss)
    cells = mesh.edge_cells(edge)
    arr = mesh.cell_arrays()
    pos = [mesh._active_index[c] for c in cells]
    rect = arr["rect"][pos]
    ne = len(cells)
    hu = rect[:, 2] - rect[:, 0]
    hv = rect[:, 3] - rect[:, 1]
    su, sv = _edge_local(edge, gx_)
    B, Du, Dv = _tensor(su, sv)
    u = rect[:, 0:1] + 0.5 * (su[None, :] + 1) * hu[:, None]
    v = rect[:, 1:2] + 0.5 * (sv[None, :] + 1) * hv[:, None]
    x, J = patch.map(u.ravel(), v.ravel())
    nrm, speed = _outward_normal(edge, J)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(det <= 0):
        raise GeometryError("nonpositive Jacobian determinant on a patch edge")
    q = gx_.size
    h_along = hu if edge in ("v0", "v1") else hv
    W = (gw_[None, :] * 0.5 * h_along[:, None]) * speed.reshape(ne, q)
    J = J.reshape(ne, q, 2, 2)
    det = det.reshape(ne, q)
    Gu = Du[None] * (2.0 / hu)[:, None, None]
    Gv = Dv[None] * (2.0 / hv)[:, None, None]
    inv00 = J[..., 1, 1] / det
    inv01 = -J[..., 0, 1] / det
    inv10 = -J[..., 1, 0] / det
    inv11 = J[..., 0, 0] / det
    gx = inv00[:, None, :] * Gu + inv10[:, None, :] * Gv
    gy = inv01[:, None, :] * Gu + inv11[:, None, :] * Gv
    t = (u if edge in ("v0", "v1") else v)
    return EdgeData(
        x.reshape(ne, q, 2),
        nrm.reshape(ne, q, 2),
        W,
        np.broadcast_to(B[None], (ne, 16, q)),
        gx,
        gy,
        arr["C"][pos],
        arr["idx"][pos],
        t,
    )


def _scatter(C, idx, Eb, n):
    """Assemble element Bernstein matrices ``Eb`` (nc, 16, 16) into (n, n)."""
    Ke = np.einsum("cak,ckl,cbl->cab", C, Eb, C)
    rows = np.broadcast_to(idx[:, :, None], Ke.shape)
    cols = np.broadcast_to(idx[:, None, :], Ke.shape)
    mask = (rows >= 0) & (cols >= 0)
    return sp.coo_matrix((Ke[mask], (rows[mask], cols[mask])), shape=(n, n)).tocsr()


def _scatter_vec(C, idx, eb, n):
    fe = np.einsum("cak,ck->ca", C, eb)
    mask = idx >= 0
    return np.bincount(idx[mask], weights=fe[mask].real, minlength=n) + 1j * np.bincount(
        idx[mask], weights=fe[mask].imag, minlength=n
    )


# ------------------------------------------------------------ DOF merging
@dataclass
class DofMap:
    offsets: np.ndarray  # local offset of each patch (len = npatch + 1)
    T: sp.csr_matrix  # (n_local, n_global)
    n_identified: int

    @property
    def n_local(self) -> int:
        return int(self.offsets[-1])

    @property
    def n_global(self) -> int:
        return self.T.shape[1]

    def local(self, x: np.ndarray, patch: int) -> np.ndarray:
        full = self.T @ x
        return full[self.offsets[patch] : self.offsets[patch + 1]]


def _edge_param_points(edge: str, t: np.ndarray):
    one = np.ones_like(t)
    return {"v0": (t, 0 * one), "v1": (t, one), "u0": (0 * one, t), "u1": (one, t)}[edge]


def interface_orientation(pa: NurbsPatch, ea: str, pb: NurbsPatch, eb: str, tol: float = 1e-9) -> bool:
    """True when the two edge parameterizations run in opposite directions."""
    t = np.linspace(0.0, 1.0, 11)
    xa = pa.evaluate(*_edge_param_points(ea, t))
    xb = pb.evaluate(*_edge_param_points(eb, t))
    same = np.abs(xa - xb).max()
    rev = np.abs(xa - xb[::-1]).max()
    scale = max(1.0, np.abs(xa).max())
    if same < tol * scale:
        return False
    if rev < tol * scale:
        return True
    raise GeometryError("interface edges do not coincide (gap %.3e)" % min(same, rev))


def merge_interfaces(problem: HelmholtzProblem) -> DofMap:
    """Prolongation from global DOFs to patch-local DOFs with C0 gluing."""
    key = (tuple(id(m) for m in problem.meshes), tuple(problem.interfaces), tuple(id(p) for p in problem.patches))
    hit = _DOF_CACHE.get(key)
    if hit is not None:
        return hit[0]
    meshes = problem.meshes
    offsets = np.concatenate([[0], np.cumsum([m.n_basis for m in meshes])])
    rows = []
    for itf in problem.interfaces:
        (ia, ea), (ib, eb) = itf.a, itf.b
        rev = interface_orientation(problem.patches[ia], ea, problem.patches[ib], eb)
        da = meshes[ia].edge_trace_data(ea)
        db = meshes[ib].edge_trace_data(eb)
        ta = np.array([d[0] for d in da])
        tb = np.array([1.0 - d[0] if rev else d[0] for d in db])
        order_b = np.argsort(tb)
        tb = tb[order_b]
        if ta.size != tb.size or np.abs(ta - tb).max() > 1e-12:
            raise GeometryError("non-conforming interface meshes between %r and %r" % (itf.a, itf.b))
        for (t, ja, Ma), kb in zip(da, order_b):
            _, jb, Mb = db[kb]
            Mb = Mb.copy()
            if rev:
                Mb[1] *= -1.0
            for r in range(2):
                row = {}
                for q in range(2):
                    if Ma[r, q] != 0.0:
                        row[int(offsets[ia] + ja[q])] = row.get(int(offsets[ia] + ja[q]), 0.0) + Ma[r, q]
                    if Mb[r, q] != 0.0:
                        row[int(offsets[ib] + jb[q])] = row.get(int(offsets[ib] + jb[q]), 0.0) - Mb[r, q]
                rows.append(row)
    expr = _eliminate(rows)
    n_loc = int(offsets[-1])
    free = [d for d in range(n_loc) if d not in expr]
    gidx = {d: g for g, d in enumerate(free)}
    ti, tj, tv = [], [], []
    for d in range(n_loc):
        if d in expr:
            for f, c in sorted(expr[d].items()):
                ti.append(d)
                tj.append(gidx[f])
                tv.append(c)
        else:
            ti.append(d)
            tj.append(gidx[d])
            tv.append(1.0)
    T = sp.csr_matrix((tv, (ti, tj)), shape=(n_loc, len(free)))
    dm = DofMap(offsets, T, len(expr))
    _DOF_CACHE[key] = (dm, problem.meshes, problem.patches)
    while len(_DOF_CACHE) > 16:
        _DOF_CACHE.popitem(last=False)
    return dm


_DOF_CACHE: "OrderedDict" = OrderedDict()


def _eliminate(rows: list[dict]) -> dict:
    """Solve homogeneous constraints by elimination; returns slave expressions."""
    expr: dict[int, dict[int, float]] = {}
    users: dict[int, set] = {}
    for row in rows:
        red: dict[int, float] = {}
        for d, c in row.items():
            if d in expr:
                for f, cf in expr[d].items():
                    red[f] = red.get(f, 0.0) + c * cf
            else:
                red[d] = red.get(d, 0.0) + c
        if not red:
            continue
        big = max(abs(c) for c in red.values())
        red = {d: c for d, c in red.items() if abs(c) > 1e-13 * big}
        if not red or big == 0.0:
            continue
        big = max(abs(c) for c in red.values())
        piv = max(d for d, c in red.items() if abs(c) >= 0.1 * big)
        cp = red.pop(piv)
        new = {d: -c / cp for d, c in red.items()}
        for e in users.pop(piv, set()):
            ce = expr[e].pop(piv)
            for d, c in new.items():
                expr[e][d] = expr[e].get(d, 0.0) + ce * c
                users.setdefault(d, set()).add(e)
        expr[piv] = new
        for d in new:
            users.setdefault(d, set()).add(piv)
    return expr


# ------------------------------------------------------------- assembly
@dataclass
class AssembledSystem:
    """Global matrices of one discretization (after interface merging)."""

    problem: HelmholtzProblem
    dofs: DofMap
    K: sp.csr_matrix
    M: sp.csr_matrix
    Mb: sp.csr_matrix  # sum of alpha-weighted boundary masses
    A: sp.csr_matrix
    b: np.ndarray
    volumes: list = field(default_factory=list)
    dirichlet: dict = field(default_factory=dict)

    @property
    def n_dofs(self) -> int:
        return self.dofs.n_global


_PATCH_CACHE: "OrderedDict" = OrderedDict()


_LOCAL_CACHE: "OrderedDict" = OrderedDict()


def affected_cells(patch: NurbsPatch, old_points, old_weights, rect: np.ndarray) -> np.ndarray:
    """Mask of cells whose geometry depends on a control point that changed."""
    moved = np.any(patch.points != old_points, axis=-1) | (patch.weights != old_weights)
    mask = np.zeros(rect.shape[0], dtype=bool)
    tu, tv = patch.knots_u.array, patch.knots_v.array
    pu, pv = patch.degrees
    for i, j in zip(*np.nonzero(moved)):
        lo_u, hi_u = tu[i], tu[i + pu + 1]
        lo_v, hi_v = tv[j], tv[j + pv + 1]
        mask |= (rect[:, 0] < hi_u) & (rect[:, 2] > lo_u) & (rect[:, 1] < hi_v) & (rect[:, 3] > lo_v)
    return mask


def _element_blocks(W, gx, gy):
    Kb = np.einsum("cq,ciq,cjq->cij", W, gx, gx) + np.einsum("cq,ciq,cjq->cij", W, gy, gy)
    Mb = np.einsum("cq,iq,jq->cij", W, _BT, _BT)
    return Kb, Mb


def _patch_blocks(patch: NurbsPatch, mesh: PhtMesh):
    """Stiffness and mass of one patch.

    Cached on geometry and mesh. When only some control points moved since
    the last assembly on the same mesh, element matrices are recomputed for
    the cells in their support and reused elsewhere.
    """
    key = (id(mesh), patch.points.tobytes(), patch.weights.tobytes(), patch.knots_u, patch.knots_v)
    hit = _PATCH_CACHE.get(key)
    if hit is not None:
        _PATCH_CACHE.move_to_end(key)
        return hit[0]
    lkey = (id(mesh), patch.knots_u, patch.knots_v)
    prev = _LOCAL_CACHE.get(lkey)
    arr = mesh.cell_arrays()
    if prev is not None and prev[0] is mesh and prev[1].shape == patch.points.shape:
        _, P0, w0, vd0, Kb, Mb = prev
        sel = affected_cells(patch, P0, w0, arr["rect"])
        x, W, gx, gy = (a.copy() for a in (vd0.x, vd0.W, vd0.gx, vd0.gy))
        Kb, Mb = Kb.copy(), Mb.copy()
        if np.any(sel):
            xs, Ws, gxs, gys = _cell_geometry(patch, arr["rect"][sel])
            x[sel], W[sel], gx[sel], gy[sel] = xs, Ws, gxs, gys
            Kb[sel], Mb[sel] = _element_blocks(Ws, gxs, gys)
        vd = VolumeData(x, W, gx, gy, arr["C"], arr["idx"])
    else:
        vd = volume_data(patch, mesh)
        Kb, Mb = _element_blocks(vd.W, vd.gx, vd.gy)
    _LOCAL_CACHE[lkey] = (mesh, patch.points.copy(), patch.weights.copy(), vd, Kb, Mb)
    _LOCAL_CACHE.move_to_end(lkey)
    while len(_LOCAL_CACHE) > 4:
        _LOCAL_CACHE.popitem(last=False)
    n = mesh.n_basis
    out = (vd, _scatter(vd.C, vd.idx, Kb, n), _scatter(vd.C, vd.idx, Mb, n))
    _PATCH_CACHE[key] = (out, mesh)
    while len(_PATCH_CACHE) > 12:
        _PATCH_CACHE.popitem(last=False)
    return out


def assemble_system(problem: HelmholtzProblem) -> AssembledSystem:
    dm = merge_interfaces(problem)
    n_loc = dm.n_local
    Kl, Ml, Bl = [], [], []
    bl = np.zeros(n_loc, dtype=complex)
    volumes = []
    k2 = problem.k**2
    for p, (patch, mesh) in enumerate(zip(problem.patches, problem.meshes)):
        vd, K, M = _patch_blocks(patch, mesh)
        volumes.append(vd)
        Kl.append(K)
        Ml.append(M)
        n = mesh.n_basis
        Bp = sp.csr_matrix((n, n), dtype=complex)
        o = dm.offsets[p]
        if problem.source is not None:
            s = _call_point(problem.source, vd.x.reshape(-1, 2)).reshape(vd.W.shape)
            eb = np.einsum("cq,cq,kq->ck", vd.W, s, _BT)
            bl[o : o + n] -= _scatter_vec(vd.C, vd.idx, eb, n)
        for e in EDGES:
            bc = problem.boundary.get((p, e))
            if bc is None or isinstance(bc, (Symmetry, Dirichlet)):
                continue
            ed = edge_data(patch, mesh, e)
            xq = ed.x.reshape(-1, 2)
            nq = ed.n.reshape(-1, 2)
            if isinstance(bc, Neumann):
                alpha, g = 0.0, _call_flux(bc.flux, xq, nq)
            elif isinstance(bc, Robin):
                alpha = complex(bc.alpha)
                g = _call_flux(bc.f, xq, nq) if callable(bc.f) else np.full(xq.shape[0], complex(bc.f))
            elif isinstance(bc, BGT1):
                alpha, g = apply_bgt1(bc.R, problem.k), np.zeros(xq.shape[0], dtype=complex)
            else:
                raise ConfigError("unknown boundary kind %r" % (bc,))
            g = g.reshape(ed.W.shape)
            if np.any(g != 0):
                eb = np.einsum("cq,cq,ckq->ck", ed.W, g, ed.B)
                bl[o : o + n] += _scatter_vec(ed.C, ed.idx, eb, n)
            if alpha != 0:
                Eb = np.einsum("cq,ciq,cjq->cij", ed.W, ed.B, ed.B)
                Bp = Bp + alpha * _scatter(ed.C, ed.idx, Eb, n)
        Bl.append(Bp)
    T = dm.T
    Kg = (T.T @ sp.block_diag(Kl, format="csr") @ T).tocsr()
    Mg = (T.T @ sp.block_diag(Ml, format="csr") @ T).tocsr()
    Bg = (T.T @ sp.block_diag(Bl, format="csr") @ T).tocsr()
    A = (Kg - k2 * Mg + Bg).tocsr()
    b = T.T @ bl
    return AssembledSystem(problem, dm, Kg, Mg, Bg, A, b, volumes)


def assemble(problem: HelmholtzProblem):
    """Global complex matrix and load vector (interfaces merged, no Dirichlet)."""
    sysm = assemble_system(problem)
    return sysm.A, sysm.b


# ------------------------------------------------------------- Dirichlet
def dirichlet_values(sysm: AssembledSystem) -> dict:
    """L2 edge projection of Dirichlet data onto the PHT traces.

    Returns ``{global_dof: value}``.
    """
    problem = sysm.problem
    dm = sysm.dofs
    T = dm.T.tocsc()
    edges = [(p, e, bc) for (p, e), bc in sorted(problem.boundary.items()) if isinstance(bc, Dirichlet)]
    if not edges:
        return {}
    n_loc = dm.n_local
    Ml = sp.csr_matrix((n_loc, n_loc))
    bl = np.zeros(n_loc, dtype=complex)
    local_dofs = set()
    for p, e, bc in edges:
        patch, mesh = problem.patches[p], problem.meshes[p]
        o = dm.offsets[p]
        ed = edge_data(patch, mesh, e)
        n = mesh.n_basis
        Eb = np.einsum("cq,ciq,cjq->cij", ed.W, ed.B, ed.B)
        Me = _scatter(ed.C, ed.idx, Eb, n)
        pad = sp.csr_matrix((Me.data, Me.indices + o, Me.indptr), shape=(n, n_loc))
        Ml = Ml + sp.vstack([sp.csr_matrix((o, n_loc)), pad, sp.csr_matrix((n_loc - o - n, n_loc))]).tocsr()
        g = _call_point(bc.g, ed.x.reshape(-1, 2)).reshape(ed.W.shape)
        eb = np.einsum("cq,cq,ckq->ck", ed.W, g, ed.B)
        bl[o : o + n] += _scatter_vec(ed.C, ed.idx, eb, n)
        local_dofs.update(int(o + i) for i in mesh.edge_functions(e))
    Mg = (dm.T.T @ Ml @ dm.T).tocsr()
    bg = dm.T.T @ bl
    rows = sorted(local_dofs)
    D = np.unique(dm.T[rows].nonzero()[1])
    MDD = Mg[D][:, D].toarray()
    if np.linalg.cond(MDD) > 1e14:
        raise NumericalError("singular Dirichlet edge mass matrix")
    vals = np.linalg.solve(MDD, bg[D])
    del T
    return {int(d): complex(v) for d, v in zip(D, vals)}


def impose_dirichlet(A: sp.spmatrix, b: np.ndarray, values: Mapping[int, complex]):
    """Eliminate prescribed DOFs; returns ``(A_ff, b_f, free, fixed, x_fixed)``."""
    n = A.shape[0]
    fixed = np.array(sorted(values), dtype=np.int64)
    xd = np.array([values[i] for i in fixed], dtype=complex)
    mask = np.ones(n, dtype=bool)
    mask[fixed] = False
    free = np.nonzero(mask)[0]
    A = A.tocsr()
    Aff = A[free][:, free]
    bf = b[free] - (A[free][:, fixed] @ xd if fixed.size else 0.0)
    return Aff, bf, free, fixed, xd


# ------------------------------------------------------------------ solve
def sparse_lu(A: sp.spmatrix):
    """SuperLU with a symmetric-structure ordering.

    The assembled matrices are structurally symmetric, so minimum degree on
    ``A + A^T`` with preference for diagonal pivots gives far less fill than
    column ordering; the small threshold still pivots away tiny diagonals.
    """
    return spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=1e-3, options={"SymmetricMode": True})


class Factorization:
    """Sparse LU of a complex matrix with residual-checked solves."""

    def __init__(self, A: sp.spmatrix):
        self.A = A.tocsc().astype(complex)
        try:
            self.lu = sparse_lu(self.A)
        except RuntimeError as exc:
            raise NumericalError("sparse factorization failed: %s (n = %d)" % (exc, A.shape[0])) from exc
        diag = np.abs(self.lu.U.diagonal())
        self.min_pivot = float(diag.min()) if diag.size else 0.0
        self.max_pivot = float(diag.max()) if diag.size else 0.0
        if diag.size and (self.min_pivot == 0.0 or self.min_pivot < 1e-15 * self.max_pivot):
            raise NumericalError(
                "numerically singular matrix: pivot ratio %.3e" % (self.min_pivot / max(self.max_pivot, 1e-300))
            )

    def solve(self, b: np.ndarray, trans: str = "N") -> np.ndarray:
        x = self.lu.solve(b, trans=trans)
        Aop = self.A if trans == "N" else self.A.T
        r = b - Aop @ x
        nb = np.linalg.norm(b)
        if nb > 0 and np.linalg.norm(r) > 1e-10 * nb:
            x = x + self.lu.solve(r, trans=trans)
            r = b - Aop @ x
        self.last_residual = float(np.linalg.norm(r) / nb) if nb > 0 else 0.0
        return x


@dataclass
class DiscreteSolution:
    """Global coefficients with access to the problem and its assembled system."""

    system: AssembledSystem
    coefficients: np.ndarray
    residual: float = 0.0
    factor: Factorization | None = None
    free: np.ndarray | None = None

    @property
    def problem(self) -> HelmholtzProblem:
        return self.system.problem

    @property
    def n_dofs(self) -> int:
        return self.coefficients.size

    def local(self, patch: int) -> np.ndarray:
        return self.system.dofs.local(self.coefficients, patch)


def solve(A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    """Direct sparse solve with residual check ``||Ax - b|| / ||b|| < 1e-10``."""
    fac = Factorization(sp.csc_matrix(A))
    x = fac.solve(np.asarray(b, dtype=complex))
    if fac.last_residual > 1e-10:
        raise NumericalError("residual %.3e above tolerance" % fac.last_residual)
    return x


def solve_problem(problem: HelmholtzProblem, system: AssembledSystem | None = None) -> DiscreteSolution:
    sysm = assemble_system(problem) if system is None else system
    values = dirichlet_values(sysm)
    sysm.dirichlet = values
    Aff, bf, free, fixed, xd = impose_dirichlet(sysm.A, sysm.b, values)
    fac = Factorization(Aff)
    xf = fac.solve(bf)
    x = np.zeros(sysm.n_dofs, dtype=complex)
    x[free] = xf
    x[fixed] = xd
    if fac.last_residual > 1e-10:
        raise NumericalError("residual %.3e above tolerance" % fac.last_residual)
    return DiscreteSolution(sysm, x, fac.last_residual, fac, free)


# ------------------------------------------------------------ evaluation
def evaluate_param(sol: DiscreteSolution, patch: int, u, v, grad: bool = False, coef=None):
    """Field (and physical gradient) at parametric points of one patch."""
    problem = sol.problem
    mesh = problem.meshes[patch]
    geo = problem.patches[patch]
    c = sol.local(patch) if coef is None else coef
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    arr = mesh.cell_arrays()
    cells = np.array([mesh._active_index[mesh.find_cell(a, b)] for a, b in zip(u, v)], dtype=np.int64)
    rect = arr["rect"][cells]
    hu = rect[:, 2] - rect[:, 0]
    hv = rect[:, 3] - rect[:, 1]
    su = 2 * (u - rect[:, 0]) / hu - 1
    sv = 2 * (v - rect[:, 1]) / hv - 1
    B, Du, Dv = _tensor(su, sv)
    idx = arr["idx"][cells]
    cc = np.where(idx >= 0, c[np.maximum(idx, 0)], 0.0)
    ords = np.einsum("pn,pnk->pk", cc, arr["C"][cells])
    val = np.einsum("pk,kp->p", ords, B)
    if not grad:
        return val
    gu = np.einsum("pk,kp->p", ords, Du) * 2 / hu
    gv = np.einsum("pk,kp->p", ords, Dv) * 2 / hv
    _, J = geo.map(u, v)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    gxv = (J[:, 1, 1] * gu - J[:, 1, 0] * gv) / det
    gyv = (-J[:, 0, 1] * gu + J[:, 0, 0] * gv) / det
    return val, np.stack([gxv, gyv], axis=-1)


def point_load(sol: DiscreteSolution, points, weights) -> np.ndarray:
    """Global vector ``r`` with ``r @ coef = sum_j w_j u(x_j)`` for any coefficients."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    weights = np.broadcast_to(np.asarray(weights, dtype=complex), (points.shape[0],))
    pid, uv = locate(sol.problem, points)
    dm = sol.system.dofs
    local = np.zeros(dm.n_local, dtype=complex)
    for p in np.unique(pid):
        sel = np.nonzero(pid == p)[0]
        mesh = sol.problem.meshes[p]
        arr = mesh.cell_arrays()
        cells = np.array([mesh._active_index[mesh.find_cell(a, b)] for a, b in uv[sel]], dtype=np.int64)
        rect = arr["rect"][cells]
        su = 2 * (uv[sel, 0] - rect[:, 0]) / (rect[:, 2] - rect[:, 0]) - 1
        sv = 2 * (uv[sel, 1] - rect[:, 1]) / (rect[:, 3] - rect[:, 1]) - 1
        B, _, _ = _tensor(su, sv)
        contrib = np.einsum("pnk,kp->pn", arr["C"][cells], B) * weights[sel, None]
        idx = arr["idx"][cells]
        ok = idx >= 0
        np.add.at(local, dm.offsets[p] + idx[ok], contrib[ok])
    return dm.T.T @ local


def invert_map(patch: NurbsPatch, points: np.ndarray, n_seed: int = 21, max_iter: int = 50, tol: float = 1e-12):
    """Parametric coordinates of physical points by Newton iteration.

    Returns ``(uv, ok)``; ``ok`` is False where the point is not inside the
    patch or Newton did not converge.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    s = np.linspace(0, 1, n_seed)
    su, sv = np.meshgrid(s, s, indexing="ij")
    seeds = patch.evaluate(su.ravel(), sv.ravel())
    d2 = ((points[:, None, :] - seeds[None, :, :]) ** 2).sum(-1)
    best = d2.argmin(axis=1)
    uv = np.stack([su.ravel()[best], sv.ravel()[best]], axis=1)
    scale = max(1.0, float(np.abs(seeds).max()))
    ok = np.zeros(points.shape[0], dtype=bool)
    for _ in range(max_iter):
        x, J = patch.map(uv[:, 0], uv[:, 1])
        r = points - x
        err = np.hypot(r[:, 0], r[:, 1])
        ok = err < tol * scale
        if ok.all():
            break
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        du = (J[:, 1, 1] * r[:, 0] - J[:, 0, 1] * r[:, 1]) / det
        dv = (-J[:, 1, 0] * r[:, 0] + J[:, 0, 0] * r[:, 1]) / det
        uv = np.clip(uv + np.stack([du, dv], axis=1), 0.0, 1.0)
    x, _ = patch.map(uv[:, 0], uv[:, 1])
    ok = np.hypot(*(points - x).T) < 1e-9 * scale
    return uv, ok


def locate(problem: HelmholtzProblem, points) -> tuple[np.ndarray, np.ndarray]:
    """Patch index and parametric coordinates of physical points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    pid = -np.ones(points.shape[0], dtype=np.int64)
    uv = np.zeros((points.shape[0], 2))
    for p, patch in enumerate(problem.patches):
        todo = np.nonzero(pid < 0)[0]
        if todo.size == 0:
            break
        puv, ok = invert_map(patch, points[todo])
        pid[todo[ok]] = p
        uv[todo[ok]] = puv[ok]
    if np.any(pid < 0):
        raise GeometryError("%d point(s) lie outside the domain" % int(np.sum(pid < 0)))
    return pid, uv


def eval_field(sol: DiscreteSolution, points, grad: bool = False):
    """Discrete field at physical points (inverse map by Newton iteration)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    pid, uv = locate(sol.problem, points)
    val = np.zeros(points.shape[0], dtype=complex)
    g = np.zeros((points.shape[0], 2), dtype=complex)
    for p in np.unique(pid):
        sel = pid == p
        out = evaluate_param(sol, int(p), uv[sel, 0], uv[sel, 1], grad=grad)
        if grad:
            val[sel], g[sel] = out
        else:
            val[sel] = out
    return (val, g) if grad else val


def domain_integral(sol: DiscreteSolution, density: Callable) -> float:
    """``sum_cells int density(u, x)`` with the assembly quadrature."""
    total = 0.0
    for p, vd in enumerate(sol.system.volumes):
        u = vd.values(sol.local(p))
        total += float(np.sum(vd.W * density(u, vd.x)).real)
    return total


# ------------------------------------------------------- layout helpers
def edge_points(patch: NurbsPatch, edge: str, n: int = 11) -> np.ndarray:
    return patch.evaluate(*_edge_param_points(edge, np.linspace(0.0, 1.0, n)))


def find_interfaces(patches: Sequence[NurbsPatch], tol: float = 1e-9) -> list:
    """Pair patch edges whose traces coincide (in either direction)."""
    samples = {(p, e): edge_points(patch, e) for p, patch in enumerate(patches) for e in EDGES}
    keys = sorted(samples)
    out, used = [], set()
    for i, ka in enumerate(keys):
        if ka in used:
            continue
        for kb in keys[i + 1 :]:
            if kb in used or kb[0] == ka[0]:
                continue
            xa, xb = samples[ka], samples[kb]
            scale = max(1.0, np.abs(xa).max())
            if min(np.abs(xa - xb).max(), np.abs(xa - xb[::-1]).max()) < tol * scale:
                out.append(Interface(ka, kb))
                used.update((ka, kb))
                break
    return out


def orient_patch(patch: NurbsPatch) -> NurbsPatch:
    """Reverse the ``u`` direction when the map has a negative Jacobian."""
    _, J = patch.map(np.array([0.5]), np.array([0.5]))
    if np.linalg.det(J[0]) > 0:
        return patch
    return NurbsPatch(
        KnotVector(tuple(1.0 - t for t in reversed(patch.knots_u.values)), patch.knots_u.degree),
        patch.knots_v,
        patch.points[::-1],
        patch.weights[::-1],
    )
