"""Plane wave scattered by a designed obstacle inside a BGT1 truncation circle.

Four quarter patches, each ruled between the outer circle (``v = 0``) and the
designed inner curve (``v = 1``); ``u`` runs counter-clockwise so the map
keeps a positive Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..pht import init_pht
from ..solver import BGT1, HelmholtzProblem, Interface, Neumann
from ..spline import KnotVector, NurbsCurve, arc_curve, ruled_patch

R_OUTER = 2.0
K_DEFAULT = 0.25 * np.pi
_T10 = np.tan(np.pi / 10)
# one quintic Bezier segment per quadrant through the six design control points
_DESIGN_KNOTS = KnotVector((0.0,) * 6 + (1.0,) * 6, 5)

BOUNDS = {
    1: ([0.5], [1.8]),
    2: ([0.5] * 3, [1.8] * 3),
    3: ([0.5] * 3 + [0.75] * 4, [1.8] * 3 + [2.0] * 4),
}
INITIAL = {1: [1.5], 2: [1.0, 1.7, 0.5], 3: [1.0, 1.7, 0.5, 1.0, 1.0, 1.0, 1.0]}


def _rotate(points: np.ndarray, q: int) -> np.ndarray:
    c, s = np.cos(q * np.pi / 2), np.sin(q * np.pi / 2)
    return points @ np.array([[c, s], [-s, c]])


def design_curve(x) -> NurbsCurve:
    """First-quadrant inner curve for three radii (and optional four weights)."""
    x = np.asarray(x, dtype=float)
    if x.size not in (3, 7):
        raise ConfigError("design curve needs 3 or 7 variables")
    x1, x2, x3 = x[:3]
    pts = np.array(
        [
            [x1, 0.0],
            [x1, x1 * _T10],
            [x2 * np.cos(np.pi / 5), x2 * np.sin(np.pi / 5)],
            [x3 * np.cos(3 * np.pi / 10), x3 * np.sin(3 * np.pi / 10)],
            [x1 * _T10, x1],
            [0.0, x1],
        ]
    )
    w = np.ones(6)
    if x.size == 7:
        w[1:5] = x[3:]
    return NurbsCurve(_DESIGN_KNOTS, pts, w)


def quarter_curves(case: int, x, R: float = R_OUTER):
    """(outer, inner) curves of the first quadrant on a common knot vector."""
    outer = arc_curve((0.0, 0.0), R, 0.0, 0.5 * np.pi)
    if case == 1:
        a = float(np.asarray(x, dtype=float).ravel()[0])
        if not 0 < a < R:
            raise ConfigError("cylinder radius must lie in (0, R)")
        return outer, arc_curve((0.0, 0.0), a, 0.0, 0.5 * np.pi)
    return outer.elevate_bezier(3), design_curve(x)


def cylinder_patches(case: int, x, R: float = R_OUTER):
    outer, inner = quarter_curves(case, x, R)
    base = ruled_patch(outer, inner)
    out = []
    for q in range(4):
        out.append(base.copy_with(points=_rotate(base.points.reshape(-1, 2), q).reshape(base.points.shape)))
    return out


def incident_flux(k: float):
    """Neumann data ``-du_inc/dn`` for ``u_inc = exp(ikx)``."""

    def g(x, n):
        return -1j * k * n[:, 0] * np.exp(1j * k * x[:, 0])

    return g


def incident_field(k: float):
    def f(x):
        return np.exp(1j * k * np.asarray(x)[..., 0])

    return f


INTERFACES = tuple(Interface((q, "u1"), ((q + 1) % 4, "u0")) for q in range(4))


def initial_meshes(n: int = 2):
    return [init_pht(n, n) for _ in range(4)]


def cylinder_problem(case: int, x, meshes=None, k: float = K_DEFAULT, R: float = R_OUTER) -> HelmholtzProblem:
    patches = cylinder_patches(case, x, R)
    if meshes is None:
        meshes = initial_meshes()
    bc = {}
    for q in range(4):
        bc[(q, "v0")] = BGT1(R)
        bc[(q, "v1")] = Neumann(incident_flux(k))
    return HelmholtzProblem(patches, list(meshes), k, bc, INTERFACES)


@dataclass(frozen=True)
class CylinderObjective:
    """``J = -int |u|^2`` over the domain for the scattered field ``u``."""

    def __call__(self, sol) -> float:
        from ..solver import domain_integral

        return -domain_integral(sol, lambda u, x: np.abs(u) ** 2)

    @staticmethod
    def density_derivative(u):
        # derivative of j(u) = -|u|^2 paired with a non-conjugated test function
        return -2.0 * np.conj(u)


DESIGN_EDGES = tuple((q, "v1") for q in range(4))


def incident_with_gradient(k: float):
    def f(x):
        x = np.asarray(x, dtype=float)
        u = np.exp(1j * k * x[:, 0])
        return u, np.stack([1j * k * u, np.zeros_like(u)], axis=1)

    return f


def density(u):
    return -np.abs(u) ** 2


def density_derivative(u):
    return -2.0 * np.conj(u)
