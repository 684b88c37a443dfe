"""Recovery-based error estimation and the adaptive refinement loop.

The recovered gradient is the global L2 projection of the raw discrete
gradient onto the (merged) PHT space, one solve per component. Cell
indicators compare the two gradients; marking is Dörfler bulk chasing.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericalError
from .pht import PhtMesh
from .solver import (
    _BT,
    DiscreteSolution,
    HelmholtzProblem,
    _scatter_vec,
    interface_orientation,
    solve_problem,
    sparse_lu,
)

MARK_FRACTION = 0.5


@dataclass
class EstimatorReport:
    """Per-cell indicators in global cell order (patch-major, active order)."""

    eta_cells: np.ndarray
    cells: list  # (patch, cell) per entry
    n_dofs: int
    h1_norm: float

    @property
    def eta(self) -> float:
        return float(np.sqrt(np.sum(self.eta_cells**2)))

    @property
    def eta_rel(self) -> float:
        return self.eta / self.h1_norm if self.h1_norm > 0 else self.eta

    def patch_cells(self, selection) -> dict:
        out: dict[int, list] = {}
        for i in selection:
            p, c = self.cells[int(i)]
            out.setdefault(p, []).append(c)
        return out


def recover_gradient(sol: DiscreteSolution) -> np.ndarray:
    """Recovered gradient coefficients, shape ``(n_global, 2)`` complex."""
    sysm = sol.system
    dm = sysm.dofs
    bl = np.zeros((dm.n_local, 2), dtype=complex)
    for p, vd in enumerate(sysm.volumes):
        gx, gy = vd.gradients(sol.local(p))
        n = sol.problem.meshes[p].n_basis
        o = dm.offsets[p]
        for comp, g in enumerate((gx, gy)):
            eb = np.einsum("cq,cq,kq->ck", vd.W, g, _BT)
            bl[o : o + n, comp] = _scatter_vec(vd.C, vd.idx, eb, n)
    b = dm.T.T @ bl
    if not np.any(b):
        return np.zeros_like(b)
    try:
        lu = sparse_lu(sysm.M.tocsc())
    except RuntimeError as exc:
        raise NumericalError("singular mass matrix in gradient recovery") from exc
    rhs = np.concatenate([b.real, b.imag], axis=1)
    x = lu.solve(rhs)
    return x[:, :2] + 1j * x[:, 2:]


def estimate(sol: DiscreteSolution) -> EstimatorReport:
    G = recover_gradient(sol)
    sysm = sol.system
    etas, cells = [], []
    h1 = 0.0
    for p, vd in enumerate(sysm.volumes):
        c = sol.local(p)
        gx, gy = vd.gradients(c)
        rxv = vd.values(sysm.dofs.local(G[:, 0], p))
        ryv = vd.values(sysm.dofs.local(G[:, 1], p))
        err = np.abs(gx - rxv) ** 2 + np.abs(gy - ryv) ** 2
        etas.append(np.sqrt(np.sum(vd.W * err, axis=1)))
        u = vd.values(c)
        h1 += float(np.sum(vd.W * (np.abs(u) ** 2 + np.abs(gx) ** 2 + np.abs(gy) ** 2)))
        cells.extend((p, cell) for cell in sol.problem.meshes[p].active)
    return EstimatorReport(np.concatenate(etas), cells, sol.n_dofs, float(np.sqrt(h1)))


def mark(report: EstimatorReport | np.ndarray, fraction: float = MARK_FRACTION) -> np.ndarray:
    """Dörfler marking; returns global cell indices (sorted by indicator)."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    eta = report.eta_cells if isinstance(report, EstimatorReport) else np.asarray(report, dtype=float)
    e2 = eta**2
    if e2.size == 0:
        raise ValueError("empty estimator report")
    order = np.lexsort((np.arange(e2.size), -e2))
    cum = np.cumsum(e2[order])
    total = cum[-1]
    if total == 0:
        return np.array([], dtype=np.int64)
    k = int(np.searchsorted(cum, fraction * total * (1 - 1e-12), side="left"))
    return order[: k + 1]


# ------------------------------------------------------- interface closure
def _trace_breaks(mesh: PhtMesh, edge: str, reverse: bool) -> set:
    t = mesh.edge_breakpoints(edge)
    return {round(1.0 - x if reverse else x, 12) for x in t}


def _refine_at(mesh: PhtMesh, edge: str, t: float) -> PhtMesh:
    key = 0 if edge in ("v0", "v1") else 1
    hit = []
    for c in mesh.edge_cells(edge):
        r = mesh.cell_rect(c)
        if r[key] + 1e-14 < t < r[key + 2] - 1e-14:
            hit.append(c)
    return mesh.refine(hit)


def conform_interfaces(problem: HelmholtzProblem, meshes: list) -> list:
    """Mirror refinement across interfaces until edge breakpoints match."""
    meshes = list(meshes)
    orient = [
        interface_orientation(problem.patches[a[0]], a[1], problem.patches[b[0]], b[1])
        for a, b in ((itf.a, itf.b) for itf in problem.interfaces)
    ]
    changed = True
    while changed:
        changed = False
        for itf, rev in zip(problem.interfaces, orient):
            (pa, ea), (pb, eb) = itf.a, itf.b
            ta = _trace_breaks(meshes[pa], ea, False)
            tb = _trace_breaks(meshes[pb], eb, rev)
            for t in sorted(tb - ta):
                meshes[pa] = _refine_at(meshes[pa], ea, t)
                changed = True
            for t in sorted(ta - tb):
                meshes[pb] = _refine_at(meshes[pb], eb, 1.0 - t if rev else t)
                changed = True
    return meshes


def refine_marked(problem: HelmholtzProblem, report: EstimatorReport, selection) -> list:
    groups = report.patch_cells(selection)
    meshes = [m.refine(groups.get(p, [])) for p, m in enumerate(problem.meshes)]
    return conform_interfaces(problem, meshes)


def refine_uniform(problem: HelmholtzProblem) -> list:
    return [m.refine_all() for m in problem.meshes]


# -------------------------------------------------------------------- loop
@dataclass
class TraceRow:
    iter: int
    dofs: int
    eta_rel: float
    objective: float | None
    wall_ms: float


@dataclass
class RefineResult:
    solution: DiscreteSolution
    meshes: list
    trace: list = field(default_factory=list)
    converged: bool = True
    report: EstimatorReport | None = None


def refine_loop(
    problem: HelmholtzProblem,
    tol: float,
    max_iters: int = 20,
    objective: Callable | None = None,
    fraction: float = MARK_FRACTION,
    uniform: bool = False,
    deterministic: bool = True,
    max_dofs: int | None = None,
) -> RefineResult:
    """Solve, estimate, mark, refine until ``eta_rel <= tol``."""
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    trace = []
    it = 0
    while True:
        t0 = time.perf_counter()
        sol = solve_problem(problem)
        rep = estimate(sol)
        J = None if objective is None else float(objective(sol))
        ms = 0.0 if deterministic else 1e3 * (time.perf_counter() - t0)
        trace.append(TraceRow(it, sol.n_dofs, rep.eta_rel, J, ms))
        if rep.eta_rel <= tol:
            return RefineResult(sol, list(problem.meshes), trace, True, rep)
        if it >= max_iters or (max_dofs is not None and sol.n_dofs >= max_dofs):
            return RefineResult(sol, list(problem.meshes), trace, False, rep)
        sol = None  # release the factorization before the next solve
        if uniform:
            meshes = refine_uniform(problem)
        else:
            meshes = refine_marked(problem, rep, mark(rep, fraction))
        problem = problem.with_meshes(meshes)
        it += 1
