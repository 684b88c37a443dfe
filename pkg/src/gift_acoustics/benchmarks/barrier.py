"""Noise barrier on a rigid ground plane with a line source.

The scattered part ``u_hat`` of ``u = G + u_hat`` is solved on a truncated
half disk around the barrier; ``G`` is the half-plane Green's function.
Three patches wrap the barrier: in front of the designed face, above the
top and behind the back face.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..analytic import greens_halfplane
from ..errors import ConfigError
from ..pht import init_pht
from ..solver import BGT1, HelmholtzProblem, Neumann, Symmetry, eval_field, find_interfaces, orient_patch
from ..spline import KnotVector, NurbsCurve, NurbsPatch, arc_curve, insert_knot, line_curve, ruled_patch

THETA_FRONT = np.deg2rad(100.0)
THETA_BACK = np.deg2rad(80.0)
LOCAL_BAND = 0.1


@dataclass(frozen=True)
class BarrierConfig:
    x_front: float = 5.0
    x_back: float = 5.2
    height: float = 3.0
    source: tuple = (0.0, 1.0)
    R: float = 20.0
    center: tuple = (5.1, 0.0)
    grid_x: tuple = (6.0, 16.0)
    grid_y: tuple = (0.1, 3.0)
    grid_n: int = 10
    n_cp: int = 5
    bounds: tuple = (4.9, 5.1)
    area_cap: float = 0.6
    c: float = 345.0
    f: float = 400.0
    aggregate: str = "sum"
    radial_cells: int = 10

    def __post_init__(self):
        if self.n_cp < 1:
            raise ConfigError("barrier needs at least one design control point")
        if not self.x_front < self.x_back or self.height <= 0:
            raise ConfigError("barrier box is empty")
        if self.f <= 0 or self.c <= 0 or self.R <= 0:
            raise ConfigError("frequency, sound speed and radius must be positive")
        if self.aggregate not in ("mean", "sum"):
            raise ConfigError("aggregate must be 'mean' or 'sum'")
        if not self.bounds[0] < self.bounds[1]:
            raise ConfigError("empty design interval")

    @property
    def k(self) -> float:
        return 2 * np.pi * self.f / self.c

    def grid(self) -> np.ndarray:
        gx = np.linspace(*self.grid_x, self.grid_n)
        gy = np.linspace(*self.grid_y, self.grid_n)
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    def initial_design(self) -> np.ndarray:
        return np.full(self.n_cp, self.x_front)


def front_curve(cfg: BarrierConfig, design) -> NurbsCurve:
    """Quadratic front face from ``(x_front, 0)`` to ``(x_front, height)``.

    The ``n_cp`` interior control points sit at equal heights and move in x.
    """
    d = np.asarray(design, dtype=float).ravel()
    if d.size != cfg.n_cp:
        raise ConfigError("barrier design needs %d values" % cfg.n_cp)
    m = cfg.n_cp + 2
    y = np.linspace(0.0, cfg.height, m)
    x = np.concatenate([[cfg.x_front], d, [cfg.x_front]])
    return NurbsCurve(KnotVector.open_uniform(2, m - 2), np.column_stack([x, y]))


def barrier_area(cfg: BarrierConfig, design) -> float:
    """Cross-section area between the front curve and the back face."""
    crv = front_curve(cfg, design)
    gx, gw = np.polynomial.legendre.leggauss(4)
    br = crv.knots.unique()
    area = 0.0
    for a, b in zip(br[:-1], br[1:]):
        t = 0.5 * (b - a) * gx + 0.5 * (a + b)
        D = crv.derivatives(t, 1)
        area += float(np.sum(0.5 * (b - a) * gw * (cfg.x_back - D[0][:, 0]) * D[1][:, 1]))
    return area


def _arc(cfg: BarrierConfig, th0: float, th1: float) -> NurbsCurve:
    return arc_curve(cfg.center, cfg.R, th0, th1)


def _match_knots(curve: NurbsCurve, knots: KnotVector) -> NurbsCurve:
    for t in knots.unique()[1:-1]:
        need = knots.multiplicity(t) - curve.knots.multiplicity(t)
        if need > 0:
            curve = curve.insert_knot(float(t), need)
    return curve


def _front_patch(cfg: BarrierConfig, design) -> NurbsPatch:
    flat = front_curve(cfg, cfg.initial_design())
    arc = _match_knots(_arc(cfg, np.pi, THETA_FRONT), flat.knots)
    p = ruled_patch(flat, arc)
    # quadratic radially with a double knot at LOCAL_BAND: rows 0 and 1 are
    # supported on v <= LOCAL_BAND only
    mid = 0.5 * (p.points[:, 0] + p.points[:, 1])
    wmid = 0.5 * (p.weights[:, 0] + p.weights[:, 1])
    pts = np.stack([p.points[:, 0], mid, p.points[:, 1]], axis=1)
    w = np.stack([p.weights[:, 0], wmid, p.weights[:, 1]], axis=1)
    q = insert_knot(NurbsPatch(p.knots_u, KnotVector.open_uniform(2, 1), pts, w), "v", LOCAL_BAND, 2)
    dx = np.asarray(design, dtype=float).ravel() - cfg.x_front
    pts = q.points.copy()
    pts[1:-1, 0, 0] += dx
    pts[1:-1, 1, 0] += 0.5 * dx
    return q.copy_with(points=pts)


def barrier_patches(cfg: BarrierConfig, design) -> list:
    top0 = (cfg.x_front, cfg.height)
    top1 = (cfg.x_back, cfg.height)
    q2 = KnotVector.open_uniform(2, 1)
    front = _front_patch(cfg, design)
    top = ruled_patch(line_curve(top0, top1, q2), _arc(cfg, THETA_FRONT, THETA_BACK))
    back = ruled_patch(line_curve(top1, (cfg.x_back, 0.0), q2), _arc(cfg, THETA_BACK, 0.0))
    return [orient_patch(p) for p in (front, top, back)]


def initial_meshes(cfg: BarrierConfig, level: int = 0):
    nv = cfg.radial_cells
    subdiv = ((cfg.n_cp, nv), (1, nv), (2, nv))
    return [init_pht(nu << level, nv << level) for nu, nv in subdiv]


def _edge_uv(edge: str, n: int = 9):
    t = np.linspace(0.0, 1.0, n)
    one = np.ones_like(t)
    return {"v0": (t, 0 * one), "v1": (t, one), "u0": (0 * one, t), "u1": (one, t)}[edge]


def green_flux(cfg: BarrierConfig):
    """Neumann data ``-dG/dn`` on the barrier."""

    def flux(x, n):
        _, g = greens_halfplane(np.asarray(x).reshape(-1, 2), cfg.source, cfg.k)
        out = -(g[:, 0] * n.reshape(-1, 2)[:, 0] + g[:, 1] * n.reshape(-1, 2)[:, 1])
        return out.reshape(np.shape(x)[:-1])

    return flux


def build_barrier(cfg: BarrierConfig, design=None, meshes=None, check_bounds: bool = True) -> HelmholtzProblem:
    design = cfg.initial_design() if design is None else np.asarray(design, dtype=float)
    lo, hi = cfg.bounds
    if check_bounds and (np.any(design < lo - 1e-12) or np.any(design > hi + 1e-12)):
        raise ConfigError("barrier design outside [%g, %g]" % (lo, hi))
    patches = barrier_patches(cfg, design)
    interfaces = find_interfaces(patches)
    glued = {e for itf in interfaces for e in (itf.a, itf.b)}
    flux = green_flux(cfg)
    bc = {}
    for p, patch in enumerate(patches):
        for e in ("u0", "u1", "v0", "v1"):
            if (p, e) in glued:
                continue
            pts = patch.evaluate(*_edge_uv(e))
            r = np.hypot(pts[:, 0] - cfg.center[0], pts[:, 1] - cfg.center[1])
            if np.all(np.abs(pts[:, 1]) < 1e-12):
                bc[(p, e)] = Symmetry()
            elif np.all(np.abs(r - cfg.R) < 1e-9):
                bc[(p, e)] = BGT1(cfg.R)
            else:
                bc[(p, e)] = Neumann(flux)
    if meshes is None:
        meshes = initial_meshes(cfg)
    return HelmholtzProblem(patches, list(meshes), cfg.k, bc, interfaces)


def total_field(sol, cfg: BarrierConfig, points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    G, _ = greens_halfplane(pts, cfg.source, cfg.k)
    return G + eval_field(sol, pts)


def barrier_objective(sol, cfg: BarrierConfig) -> float:
    """Aggregate of ``|G + u_hat|^2`` over the protected grid."""
    u = total_field(sol, cfg, cfg.grid())
    return float(_aggregate_weight(cfg, u.size) * np.sum(np.abs(u) ** 2))


@dataclass(frozen=True)
class BarrierObjective:
    cfg: BarrierConfig

    def __call__(self, sol) -> float:
        return barrier_objective(sol, self.cfg)


DESIGN_EDGES = ((0, "v0"),)


def _aggregate_weight(cfg: BarrierConfig, n: int) -> float:
    return 1.0 / n if cfg.aggregate == "mean" else 1.0


def barrier_gradient(cfg: BarrierConfig, x, meshes) -> np.ndarray:
    """Adjoint gradient of the grid objective with respect to the front control points."""
    from ..sensitivity import design_velocity, objective_shape_gradient, solve_adjoint_rhs
    from ..solver import edge_data, point_load, solve_problem

    x = np.asarray(x, dtype=float)

    def builder(y):
        return build_barrier(cfg, y, meshes, check_bounds=False)

    problem = builder(x)
    sol = solve_problem(problem)
    pts = cfg.grid()
    u = total_field(sol, cfg, pts)
    # d|u|^2 = Re(2 conj(u) du)
    adj = solve_adjoint_rhs(sol, point_load(sol, pts, 2 * np.conj(u) * _aggregate_weight(cfg, len(pts))))
    edges = [(p, e, edge_data(problem.patches[p], problem.meshes[p], e)) for p, e in DESIGN_EDGES]

    def incident(xq):
        return greens_halfplane(xq, cfg.source, cfg.k)

    def zero(v):
        return np.zeros(np.shape(v))

    return np.array(
        [
            objective_shape_gradient(sol, adj, design_velocity(builder, x, i, edges), edges, zero, incident)
            for i in range(x.size)
        ]
    )
