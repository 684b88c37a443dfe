"""Two-dimensional acoustic horn on a half disk, symmetric about ``y = 0``.

Five patches: the inlet channel, the flare (whose wall carries the design
control points), the mouth region in front of the flare, a wedge in front
of the lip and the region outside the horn wall. Edges are classified
geometrically, so patch orientation is free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..pht import init_pht
from ..solver import HelmholtzProblem, Neumann, Robin, Symmetry, edge_data, find_interfaces, orient_patch
from ..spline import KnotVector, NurbsCurve, NurbsPatch, arc_curve, insert_knot, line_curve, ruled_patch

QA_DEG = 60.0
QB_DEG = 75.0


@dataclass(frozen=True)
class HornConfig:
    a: float = 0.05
    b: float = 0.30
    h: float = 0.025
    L1: float = 0.50
    L2: float = 0.50
    R: float = 1.0
    A_m: float = 1.0
    c: float = 345.0
    f: float = 1000.0
    n_cp: int = 1

    def __post_init__(self):
        for name in ("a", "b", "h", "L1", "L2", "R", "c", "f"):
            if getattr(self, name) <= 0:
                raise ConfigError("horn parameter %s must be positive" % name)
        if self.n_cp not in (1, 2):
            raise ConfigError("horn design uses 1 or 2 control points")
        if self.L1 + self.L2 < self.R or self.b + self.h >= self.R:
            raise ConfigError("horn does not fit the truncation half disk as laid out")

    @property
    def k(self) -> float:
        return 2 * np.pi * self.f / self.c

    @property
    def n_design(self) -> int:
        return 2 * self.n_cp

    def bounds(self):
        # two free points fold the flare below dy = -0.08
        lo = np.tile([-0.05, -0.12 if self.n_cp == 1 else -0.08], self.n_cp)
        hi = np.tile([0.05, 0.12], self.n_cp)
        return lo, hi


def _bezier_line(p0, p1, degree: int) -> NurbsCurve:
    return line_curve(p0, p1, KnotVector.open_uniform(degree, 1))


def wall_curve(cfg: HornConfig, design) -> NurbsCurve:
    """Inner flare wall from the channel end to the mouth lip."""
    d = np.asarray(design, dtype=float).reshape(-1, 2)
    if d.shape[0] != cfg.n_cp:
        raise ConfigError("horn design needs %d values" % cfg.n_design)
    base = _bezier_line((-cfg.L2, cfg.a), (0.0, cfg.b), cfg.n_cp + 1)
    pts = base.points.copy()
    pts[1:-1] += d
    return NurbsCurve(base.knots, pts, base.weights)


def _flare_patch(cfg: HornConfig, design) -> NurbsPatch:
    bottom = _bezier_line((-cfg.L2, 0.0), (0.0, 0.0), cfg.n_cp + 1)
    wall = wall_curve(cfg, np.zeros(cfg.n_design))
    p = ruled_patch(bottom, wall)
    # quadratic in v with a double knot at 0.5; rows 3 and 4 are supported
    # on v >= 0.5 only, so the design leaves the lower half untouched
    mid = 0.5 * (p.points[:, 0] + p.points[:, 1])
    pts = np.stack([p.points[:, 0], mid, p.points[:, 1]], axis=1)
    q = insert_knot(NurbsPatch(p.knots_u, KnotVector.open_uniform(2, 1), pts), "v", 0.5, 2)
    d = np.asarray(design, dtype=float).reshape(-1, 2)
    pts = q.points.copy()
    pts[1:-1, 3] += 0.5 * d
    pts[1:-1, 4] += d
    return q.copy_with(points=pts)


def _polar(r, deg):
    t = np.deg2rad(deg)
    return np.array([r * np.cos(t), r * np.sin(t)])


def horn_patches(cfg: HornConfig, design) -> list:
    R = cfg.R
    x0 = -(cfg.L1 + cfg.L2)
    lip_in = (0.0, cfg.b)
    lip_out = (0.0, cfg.b + cfg.h)
    y_out = cfg.a + cfg.h
    end_deg = np.rad2deg(np.pi - np.arcsin(y_out / R))
    q2 = KnotVector.open_uniform(2, 1)
    channel = ruled_patch(
        line_curve((x0, 0.0), (-cfg.L2, 0.0), KnotVector.open_uniform(1, 1)),
        line_curve((x0, cfg.a), (-cfg.L2, cfg.a), KnotVector.open_uniform(1, 1)),
    )
    flare = _flare_patch(cfg, design)
    mouth = ruled_patch(line_curve((0.0, 0.0), lip_in, q2), arc_curve((0.0, 0.0), R, 0.0, np.deg2rad(QA_DEG)))
    wedge = ruled_patch(line_curve(lip_in, lip_out, q2), arc_curve((0.0, 0.0), R, np.deg2rad(QA_DEG), np.deg2rad(QB_DEG)))
    # outside region: outer wall slope, then y = a + h out to the circle
    corner = (-cfg.L2, y_out)
    outside = ruled_patch(line_curve(lip_out, corner, q2), arc_curve((0.0, 0.0), R, np.deg2rad(QB_DEG), np.deg2rad(end_deg)))
    return [orient_patch(p) for p in (channel, flare, mouth, wedge, outside)]


# subdivisions per patch (u, v), consistent along shared edges
_SUBDIV = ((4, 2), (2, 2), (2, 2), (1, 2), (2, 2))


def initial_meshes(level: int = 0):
    return [init_pht(nu << level, nv << level) for nu, nv in _SUBDIV]


def _classify(cfg: HornConfig, patches, interfaces):
    glued = {e for itf in interfaces for e in (itf.a, itf.b)}
    x0 = -(cfg.L1 + cfg.L2)
    kinds = {}
    for p, patch in enumerate(patches):
        for e in ("u0", "u1", "v0", "v1"):
            if (p, e) in glued:
                continue
            pts = patch.evaluate(*_edge_uv(e))
            if np.all(np.abs(pts[:, 1]) < 1e-12):
                kinds[(p, e)] = "symmetry"
            elif np.all(np.abs(pts[:, 0] - x0) < 1e-12):
                kinds[(p, e)] = "inlet"
            elif np.all(np.abs(np.hypot(pts[:, 0], pts[:, 1]) - cfg.R) < 1e-9):
                kinds[(p, e)] = "sigma"
            else:
                kinds[(p, e)] = "wall"
    return kinds


def _edge_uv(edge: str, n: int = 9):
    t = np.linspace(0.0, 1.0, n)
    one = np.ones_like(t)
    return {"v0": (t, 0 * one), "v1": (t, one), "u0": (0 * one, t), "u1": (one, t)}[edge]


def horn_problem(cfg: HornConfig, design=None, meshes=None) -> HelmholtzProblem:
    design = np.zeros(cfg.n_design) if design is None else np.asarray(design, dtype=float)
    patches = horn_patches(cfg, design)
    interfaces = find_interfaces(patches)
    kinds = _classify(cfg, patches, interfaces)
    k = cfg.k
    bc = {}
    for key, kind in kinds.items():
        if kind == "symmetry":
            bc[key] = Symmetry()
        elif kind == "wall":
            bc[key] = Neumann(0.0)
        elif kind == "inlet":
            bc[key] = Robin(1j * k, 2j * k * cfg.A_m)
        else:
            bc[key] = Robin(1j * k + 0.5 / cfg.R)
    if meshes is None:
        meshes = initial_meshes()
    return HelmholtzProblem(patches, list(meshes), k, bc, interfaces)


def inlet_edge(problem: HelmholtzProblem):
    for key, bc in sorted(problem.boundary.items()):
        if isinstance(bc, Robin) and bc.f != 0:
            return key
    raise ConfigError("horn problem has no inlet edge")


def horn_reflection(sol, cfg: HornConfig) -> float:
    """``|u_in - A_m| / A_m`` with ``u_in`` the inlet average of the field."""
    p, e = inlet_edge(sol.problem)
    ed = edge_data(sol.problem.patches[p], sol.problem.meshes[p], e)
    u_in = np.sum(ed.W * ed.values(sol.local(p))) / cfg.a
    return float(abs(u_in - cfg.A_m) / cfg.A_m)


@dataclass(frozen=True)
class HornObjective:
    cfg: HornConfig

    def __call__(self, sol) -> float:
        return horn_reflection(sol, self.cfg)


def reflection_spectrum(cfg: HornConfig, design=None, freqs=(), tol: float = 1e-2, max_iters: int = 20) -> np.ndarray:
    """Reflection coefficient at each frequency, adaptively solved, in input order."""
    from dataclasses import replace

    from ..adapt import refine_loop

    out = []
    for f in np.asarray(freqs, dtype=float):
        c = replace(cfg, f=float(f))
        res = refine_loop(horn_problem(c, design), tol, max_iters, HornObjective(c))
        out.append(res.trace[-1].objective)
    return np.array(out)
