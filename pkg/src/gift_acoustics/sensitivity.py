"""Shape derivatives, the adjoint problem and finite-difference gradients.

Sign convention for the adjoint: ``p`` solves ``a(v, p) = int j_u v`` for
all test functions ``v``, where ``dj = Re(j_u du)``. With this choice the
shape derivative of ``J = int_Omega j(u)`` for a Neumann obstacle is

    J' = int_Gamma [ j(u) - Re(grad u_t . grad p - k^2 u_t p) ] theta.n dS

with ``u_t`` the total field and ``n`` the outward normal of the domain.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError
from .solver import (
    _BT,
    DiscreteSolution,
    HelmholtzProblem,
    _scatter_vec,
    edge_data,
    solve_problem,
)
from .spline import NurbsCurve, curve_curvature


# -------------------------------------------------------- curve functionals
@dataclass
class BoundaryPerturbation:
    """Normal speed ``theta.n`` as a function of a curve's parameter."""

    curve: NurbsCurve
    normal_speed: Callable

    def samples(self, t):
        v = np.asarray(self.normal_speed(np.asarray(t, dtype=float)), dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("normal speed must be finite")
        return np.broadcast_to(v, np.shape(t))


def curve_quadrature(curve: NurbsCurve, n_gauss: int = 8):
    """Gauss points per knot span: parameter, point, unit normal, weight.

    The normal is the right-hand normal ``(T_y, -T_x)``, outward for a
    counter-clockwise closed curve.
    """
    gx, gw = np.polynomial.legendre.leggauss(n_gauss)
    br = curve.knots.unique()
    t = np.concatenate([0.5 * (b - a) * gx + 0.5 * (a + b) for a, b in zip(br[:-1], br[1:])])
    wt = np.concatenate([0.5 * (b - a) * gw for a, b in zip(br[:-1], br[1:])])
    D = curve.derivatives(t, 1)
    speed = np.hypot(D[1][:, 0], D[1][:, 1])
    n = np.stack([D[1][:, 1], -D[1][:, 0]], axis=1) / speed[:, None]
    return t, D[0], n, wt * speed


def shape_derivative_domain(phi: Callable, perturbation: BoundaryPerturbation, n_gauss: int = 8) -> float:
    """``int phi (theta.n) dS`` for a domain functional ``int_Omega phi``."""
    t, x, _, w = curve_quadrature(perturbation.curve, n_gauss)
    return float(np.sum(w * np.real(phi(x)) * perturbation.samples(t)))


def shape_derivative_boundary(g: Callable, dg_dn: Callable, perturbation: BoundaryPerturbation, n_gauss: int = 8) -> float:
    """``int (dg/dn + kappa g)(theta.n) dS`` for a boundary functional ``int g dS``."""
    t, x, n, w = curve_quadrature(perturbation.curve, n_gauss)
    kappa = curve_curvature(perturbation.curve, t)
    vals = np.real(dg_dn(x, n)) + kappa * np.real(g(x))
    return float(np.sum(w * vals * perturbation.samples(t)))


# ----------------------------------------------------------------- adjoint
@dataclass
class AdjointSolution:
    coefficients: np.ndarray
    residual: float
    state: DiscreteSolution

    def local(self, patch: int) -> np.ndarray:
        return self.state.system.dofs.local(self.coefficients, patch)


def adjoint_rhs(sol: DiscreteSolution, density_derivative: Callable) -> np.ndarray:
    """Global vector ``int j_u(u) phi_i``."""
    sysm = sol.system
    dm = sysm.dofs
    bl = np.zeros(dm.n_local, dtype=complex)
    for p, vd in enumerate(sysm.volumes):
        u = vd.values(sol.local(p))
        ju = np.asarray(density_derivative(u), dtype=complex) * np.ones_like(u)
        eb = np.einsum("cq,cq,kq->ck", vd.W, ju, _BT)
        n = sol.problem.meshes[p].n_basis
        o = dm.offsets[p]
        bl[o : o + n] = _scatter_vec(vd.C, vd.idx, eb, n)
    return dm.T.T @ bl


def solve_adjoint(sol: DiscreteSolution, density_derivative: Callable) -> AdjointSolution:
    """Adjoint field for a domain functional ``int j(u)``."""
    return solve_adjoint_rhs(sol, adjoint_rhs(sol, density_derivative))


def solve_adjoint_rhs(sol: DiscreteSolution, rhs: np.ndarray) -> AdjointSolution:
    """Adjoint field with homogeneous data on the state's Dirichlet DOFs.

    The bilinear form is complex symmetric, so the state factorization is
    reused as is.
    """
    rhs = np.asarray(rhs, dtype=complex)
    p = np.zeros_like(rhs)
    if not np.any(rhs):
        return AdjointSolution(p, 0.0, sol)
    free = sol.free if sol.free is not None else np.arange(rhs.size)
    if sol.factor is None:
        raise NumericalError("state solution carries no factorization")
    p[free] = sol.factor.solve(rhs[free])
    res = sol.factor.last_residual
    if res > 1e-10:
        raise NumericalError("adjoint residual %.3e above tolerance" % res)
    return AdjointSolution(p, res, sol)


# -------------------------------------------------------- design gradients
def design_velocity(builder: Callable, x, i: int, edges: Sequence, h: float = 1e-6) -> list:
    """Boundary velocity ``d x_Gamma / d x_i`` at edge quadrature points.

    Computed by central differences of the geometry map, which is exact for
    control point coordinates and second-order accurate for weights.
    """
    x = np.asarray(x, dtype=float)
    e = np.zeros_like(x)
    e[i] = h
    plus = builder(x + e).patches
    minus = builder(x - e).patches
    out = []
    for patch_id, edge, ed in edges:
        u, v = _edge_uv(edge, ed.t)
        xp = plus[patch_id].evaluate(u, v)
        xm = minus[patch_id].evaluate(u, v)
        out.append(((xp - xm) / (2 * h)).reshape(ed.x.shape))
    return out


def _edge_uv(edge: str, t: np.ndarray):
    t = t.ravel()
    one = np.ones_like(t)
    return {"v0": (t, 0 * one), "v1": (t, one), "u0": (0 * one, t), "u1": (one, t)}[edge]


def objective_shape_gradient(
    sol: DiscreteSolution,
    adjoint: AdjointSolution,
    velocity: Sequence[np.ndarray],
    edges: Sequence,
    density: Callable,
    incident: Callable | None = None,
) -> float:
    """Boundary-integral shape derivative for one design direction.

    ``incident(x)`` returns ``(u_inc, grad u_inc)`` when the state is a
    scattered field; the total field enters the bracket.
    """
    k2 = sol.problem.k ** 2
    total = 0.0
    for (patch_id, _edge, ed), theta in zip(edges, velocity):
        c = sol.local(patch_id)
        pc = adjoint.local(patch_id)
        u = ed.values(c)
        gx, gy = ed.gradients(c)
        p = ed.values(pc)
        px, py = ed.gradients(pc)
        ut, utx, uty = u, gx, gy
        if incident is not None:
            ui, gi = incident(ed.x.reshape(-1, 2))
            ut = u + ui.reshape(u.shape)
            utx = gx + gi[:, 0].reshape(u.shape)
            uty = gy + gi[:, 1].reshape(u.shape)
        bracket = np.real(density(u)) - np.real(utx * px + uty * py - k2 * ut * p)
        vn = np.sum(theta * ed.n, axis=-1)
        total += float(np.sum(ed.W * bracket * vn))
    return total


def adjoint_gradient(
    builder: Callable,
    x,
    meshes,
    design_edges: Sequence,
    density: Callable,
    density_derivative: Callable,
    incident: Callable | None = None,
):
    """State solve, adjoint solve and the gradient over all design variables."""
    x = np.asarray(x, dtype=float)
    problem = builder(x).with_meshes(meshes)
    sol = solve_problem(problem)
    adj = solve_adjoint(sol, density_derivative)
    edges = [(p, e, edge_data(problem.patches[p], problem.meshes[p], e)) for p, e in design_edges]
    grad = np.array(
        [
            objective_shape_gradient(sol, adj, design_velocity(builder, x, i, edges), edges, density, incident)
            for i in range(x.size)
        ]
    )
    return grad, sol, adj


def fd_gradient(objective: Callable, x, h_rel: float = 1e-6, lower=None, upper=None) -> np.ndarray:
    """Central differences with ``h_i = h_rel max(|x_i|, 1)``; one-sided at bounds."""
    x = np.asarray(x, dtype=float)
    lo = np.full(x.size, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    hi = np.full(x.size, np.inf) if upper is None else np.asarray(upper, dtype=float)
    g = np.zeros(x.size)
    f0 = None
    for i in range(x.size):
        h = h_rel * max(abs(x[i]), 1.0)
        e = np.zeros_like(x)
        e[i] = h
        up_ok = x[i] + h <= hi[i]
        dn_ok = x[i] - h >= lo[i]
        if up_ok and dn_ok:
            g[i] = (objective(x + e) - objective(x - e)) / (2 * h)
        else:
            if f0 is None:
                f0 = objective(x)
            if up_ok:
                g[i] = (objective(x + e) - f0) / h
            elif dn_ok:
                g[i] = (f0 - objective(x - e)) / h
            else:
                raise ValueError("bounds leave no room for a difference step in variable %d" % i)
    return g
