"""SQP minimizer and the adaptive shape-optimization driver.

The SQP uses a damped BFGS Hessian, dense QP subproblems solved by the
Goldfarb-Idnani dual active-set method and an l1 merit line search.
Constraints follow the convention ``eq(x) = 0`` and ``ineq(x) <= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, GeometryError, NumericalError


# ------------------------------------------------------------------- QP
class QPInfeasible(NumericalError):
    pass


def solve_qp(G, a, Ceq=None, beq=None, Cin=None, bin_=None, max_iter: int = 500):
    """Minimize ``0.5 x'Gx + a'x`` s.t. ``Ceq x = beq`` and ``Cin x >= bin``.

    Goldfarb-Idnani dual active-set method for positive definite ``G``.
    Returns ``(x, lam_eq, lam_in)`` with nonnegative inequality multipliers.
    """
    G = np.asarray(G, dtype=float)
    a = np.asarray(a, dtype=float)
    n = a.size
    Ceq = np.zeros((0, n)) if Ceq is None else np.atleast_2d(np.asarray(Ceq, dtype=float))
    beq = np.zeros(0) if beq is None else np.asarray(beq, dtype=float)
    Cin = np.zeros((0, n)) if Cin is None else np.atleast_2d(np.asarray(Cin, dtype=float))
    bin_ = np.zeros(0) if bin_ is None else np.asarray(bin_, dtype=float)
    meq = Ceq.shape[0]
    N_all = np.vstack([Ceq, Cin])
    b_all = np.concatenate([beq, bin_])
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("QP Hessian is not positive definite") from exc
    Ginv = np.linalg.solve(L.T, np.linalg.solve(L, np.eye(n)))
    x = -Ginv @ a
    active: list[int] = []
    sign: dict[int, float] = {}
    u = np.zeros(0)
    scale = max(1.0, np.abs(N_all).max() if N_all.size else 1.0)
    tol = 1e-12 * scale * max(1.0, np.abs(b_all).max() if b_all.size else 1.0)

    def slack(j):
        return sign.get(j, 1.0) * (N_all[j] @ x - b_all[j])

    def normal(j):
        return sign.get(j, 1.0) * N_all[j]

    pending_eq = list(range(meq))
    for _ in range(max_iter):
        # pick the constraint to add: equalities first, then most violated
        p = None
        if pending_eq:
            p = pending_eq.pop(0)
            sign[p] = -1.0 if N_all[p] @ x - b_all[p] > 0 else 1.0
            if abs(slack(p)) <= tol:
                # already satisfied: still make it active with a zero step
                pass
        else:
            s = np.array([N_all[j] @ x - b_all[j] for j in range(meq, N_all.shape[0])])
            if s.size == 0 or s.min() >= -tol:
                break
            p = meq + int(np.argmin(s))
        np_ = normal(p)
        uplus = np.append(u, 0.0)
        while True:
            if active:
                Nm = np.array([normal(j) for j in active]).T
                M = Nm.T @ Ginv @ Nm
                Nstar = np.linalg.solve(M, Nm.T @ Ginv)
                H = Ginv - Ginv @ Nm @ Nstar
                r = Nstar @ np_
            else:
                H = Ginv
                r = np.zeros(0)
            z = H @ np_
            # partial step bound from inequality multipliers
            t1, k = np.inf, None
            for idx, j in enumerate(active):
                if j >= meq and r[idx] > 0:
                    val = uplus[idx] / r[idx]
                    if val < t1:
                        t1, k = val, idx
            zn = z @ np_
            t2 = np.inf if abs(zn) <= 1e-14 * max(1.0, np_ @ np_) else -slack(p) / zn
            if p < meq and t2 < 0:
                t2 = 0.0
            if t1 == np.inf and t2 == np.inf:
                raise QPInfeasible("QP subproblem is infeasible")
            if t2 == np.inf:
                uplus[:-1] -= t1 * r
                uplus[-1] += t1
                active.pop(k)
                uplus = np.delete(uplus, k)
                continue
            t = min(t1, t2)
            x = x + t * z
            uplus[:-1] -= t * r
            uplus[-1] += t
            if t == t2:
                active.append(p)
                u = uplus
                break
            active.pop(k)
            uplus = np.delete(uplus, k)
    else:
        raise NumericalError("QP did not converge")
    lam = np.zeros(N_all.shape[0])
    for idx, j in enumerate(active):
        lam[j] = sign.get(j, 1.0) * u[idx]
    return x, lam[:meq], lam[meq:]


# ------------------------------------------------------------------- SQP
@dataclass
class DesignVector:
    """Design values with box bounds and optional general constraints."""

    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    eq: Callable | None = None
    ineq: Callable | None = None
    names: tuple = ()

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).copy()
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if not (self.values.shape == self.lower.shape == self.upper.shape):
            raise ConfigError("design values and bounds must have equal length")
        if np.any(self.lower > self.upper):
            raise ConfigError("lower bound above upper bound")
        if np.any(self.values < self.lower) or np.any(self.values > self.upper):
            raise ConfigError("initial design violates its bounds")

    def __len__(self) -> int:
        return self.values.size

    def with_values(self, x) -> "DesignVector":
        return DesignVector(np.asarray(x, dtype=float), self.lower, self.upper, self.eq, self.ineq, self.names)


@dataclass
class OptimRow:
    iter: int
    J: float
    step: float
    grad: float
    constraint_max: float
    dofs: int
    x: tuple


@dataclass
class OptimizationTrace:
    rows: list = field(default_factory=list)
    message: str = ""
    restorations: int = 0

    def append(self, row: OptimRow) -> None:
        if self.rows and row.iter <= self.rows[-1].iter:
            raise ValueError("trace iterations must increase")
        self.rows.append(row)

    @property
    def x(self) -> np.ndarray:
        return np.array(self.rows[-1].x)

    @property
    def J(self) -> float:
        return self.rows[-1].J


@dataclass
class SQPOptions:
    tol_x: float = 1e-6
    tol_g: float = 1e-6
    max_iter: int = 200
    armijo: float = 1e-4
    max_backtrack: int = 30


def _constraint_values(fun, x):
    if fun is None:
        return np.zeros(0)
    return np.atleast_1d(np.asarray(fun(x), dtype=float))


def _jacobian(fun, x, h_rel=1e-7, lower=None, upper=None):
    from .sensitivity import fd_gradient

    c0 = _constraint_values(fun, x)
    J = np.zeros((c0.size, x.size))
    for r in range(c0.size):
        J[r] = fd_gradient(lambda y: _constraint_values(fun, y)[r], x, h_rel, lower, upper)
    return J


def sqp_minimize(
    objective: Callable,
    gradient: Callable,
    design: DesignVector,
    options: SQPOptions | None = None,
    eq_jac: Callable | None = None,
    ineq_jac: Callable | None = None,
    dofs: Callable | None = None,
    callback: Callable | None = None,
):
    """SQP for ``min f(x)`` with bounds, ``eq(x) = 0`` and ``ineq(x) <= 0``.

    Returns ``(x*, trace)``.
    """
    opt = options or SQPOptions()
    lo, hi = design.lower, design.upper
    x = np.clip(design.values.copy(), lo, hi)
    n = x.size
    eqf, inf = design.eq, design.ineq
    ej = eq_jac or (lambda y: _jacobian(eqf, y, lower=lo, upper=hi))
    ij = ineq_jac or (lambda y: _jacobian(inf, y, lower=lo, upper=hi))
    f = float(objective(x))
    if not np.isfinite(f):
        raise NumericalError("objective is not finite at the initial design")
    g = np.asarray(gradient(x), dtype=float)
    ce, ci = _constraint_values(eqf, x), _constraint_values(inf, x)
    Ae = ej(x) if ce.size else np.zeros((0, n))
    Ai = ij(x) if ci.size else np.zeros((0, n))
    g0 = max(np.abs(g).max(), 1e-300)
    B = np.eye(n) * g0
    mu = 0.0
    trace = OptimizationTrace()

    def viol(ce_, ci_):
        return float(np.sum(np.abs(ce_)) + np.sum(np.maximum(ci_, 0.0)))

    def cmax(ce_, ci_):
        vals = np.concatenate([np.abs(ce_), np.maximum(ci_, 0.0), [0.0]])
        return float(vals.max())

    def dof():
        return int(dofs()) if dofs is not None else 0

    trace.append(OptimRow(0, f, 0.0, float(np.abs(g).max()), cmax(ce, ci), dof(), tuple(x)))
    for it in range(1, opt.max_iter + 1):
        # QP: min 0.5 d'Bd + g'd  s.t. linearized constraints and the box
        Cin = np.vstack([np.eye(n), -np.eye(n), -Ai])
        bin_ = np.concatenate([lo - x, x - hi, ci])
        finite = np.isfinite(bin_)
        Cin, bin_ = Cin[finite], bin_[finite]
        d = lam_e = lam_i = None
        for tau in (1.0, 0.5, 0.1, 0.0):
            try:
                m_box = int(np.count_nonzero(finite[: 2 * n]))
                bi = bin_.copy()
                bi[m_box:] = tau * bin_[m_box:]
                d, lam_e, lam_i = solve_qp(B, g, Ae, -tau * ce, Cin, bi)
                break
            except QPInfeasible:
                trace.restorations += 1
        if d is None:
            raise NumericalError("QP subproblem infeasible after %d restoration attempts" % trace.restorations)
        d = np.clip(x + d, lo, hi) - x
        lam_gen = np.concatenate([np.abs(lam_e), lam_i[int(np.count_nonzero(finite[: 2 * n])) :]])
        if lam_gen.size:
            mu = max(mu, 1.1 * float(lam_gen.max()) + 1e-12 * g0)
        step_tol = opt.tol_x * max(1.0, np.abs(x).max())
        # projected gradient of the Lagrangian over the box
        lag = g - (Ae.T @ lam_e if lam_e.size else 0.0) + (Ai.T @ lam_i[-Ai.shape[0] :] if Ai.shape[0] else 0.0)
        pg = np.where((x <= lo) & (lag > 0) | (x >= hi) & (lag < 0), 0.0, lag)
        feas = cmax(ce, ci) <= 1e-8
        if feas and (np.abs(d).max() <= step_tol or np.abs(pg).max() <= opt.tol_g * g0):
            trace.message = "converged"
            break
        phi0 = f + mu * viol(ce, ci)
        D = g @ d - mu * viol(ce, ci)
        alpha = 1.0
        accepted = False
        for _ in range(opt.max_backtrack):
            xn = np.clip(x + alpha * d, lo, hi)
            try:
                fn = float(objective(xn))
            except (NumericalError, GeometryError):
                fn = np.inf
            cen, cin = _constraint_values(eqf, xn), _constraint_values(inf, xn)
            if np.isfinite(fn) and fn + mu * viol(cen, cin) <= phi0 + opt.armijo * alpha * min(D, 0.0):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            trace.message = "line search failed"
            break
        gn = np.asarray(gradient(xn), dtype=float)
        Aen = ej(xn) if cen.size else np.zeros((0, n))
        Ain = ij(xn) if cin.size else np.zeros((0, n))
        # damped BFGS on the Lagrangian gradient
        s = xn - x
        lam_in_gen = lam_i[-Ai.shape[0] :] if Ai.shape[0] else np.zeros(0)

        def lag_grad(gg, AE, AI):
            out = gg.copy()
            if lam_e.size:
                out -= AE.T @ lam_e
            if lam_in_gen.size:
                out += AI.T @ lam_in_gen
            return out

        y = lag_grad(gn, Aen, Ain) - lag_grad(g, Ae, Ai)
        Bs = B @ s
        sBs = s @ Bs
        if sBs > 0:
            sy = s @ y
            theta = 1.0 if sy >= 0.2 * sBs else 0.8 * sBs / (sBs - sy)
            r = theta * y + (1 - theta) * Bs
            B = B - np.outer(Bs, Bs) / sBs + np.outer(r, r) / (s @ r)
            B = 0.5 * (B + B.T)
        x, f, g, ce, ci, Ae, Ai = xn, fn, gn, cen, cin, Aen, Ain
        trace.append(OptimRow(it, f, float(np.linalg.norm(s)), float(np.abs(g).max()), cmax(ce, ci), dof(), tuple(x)))
        if callback is not None:
            callback(x, f)
        if alpha == 1.0 and np.abs(s).max() <= step_tol and cmax(ce, ci) <= 1e-8:
            trace.message = "step below tolerance"
            break
    else:
        trace.message = "iteration limit"
    return x, trace


# ------------------------------------------------------ adaptive driver
@dataclass
class AdaptiveParams:
    eps0: float = 1e-2
    eps_loop: float = 1e-3
    eps_sol: float = 1e-4
    n_max: int = 10
    fraction: float = 0.5
    uniform: bool = False
    max_refine: int = 30

    def __post_init__(self):
        if min(self.eps0, self.eps_loop, self.eps_sol) <= 0 or self.n_max < 1:
            raise ConfigError("adaptive parameters must be positive")
        if self.eps_loop > self.eps0:
            raise ConfigError("eps_loop must not exceed eps0")


@dataclass
class AdaptiveResult:
    x: np.ndarray
    J: float
    meshes: list
    optim_trace: OptimizationTrace
    refine_trace: list
    cycles: int


def adaptive_optimize(
    builder: Callable,
    objective: Callable,
    design: DesignVector,
    params: AdaptiveParams,
    initial_meshes: Sequence,
    gradient: str | Callable = "fd",
    options: SQPOptions | None = None,
    fd_step: float = 1e-6,
    deterministic: bool = True,
) -> AdaptiveResult:
    """Alternate optimization on a fixed PHT mesh with adaptive refinement.

    ``builder(x)`` returns a :class:`HelmholtzProblem` for design ``x`` (its
    meshes are replaced); ``objective(sol)`` evaluates ``J``. ``gradient``
    is ``"fd"`` or a callable ``(x, meshes) -> grad``.
    """
    from .adapt import refine_loop
    from .sensitivity import fd_gradient
    from .solver import solve_problem

    x = design.values.copy()
    res = refine_loop(
        builder(x).with_meshes(initial_meshes),
        params.eps0,
        params.max_refine,
        objective,
        params.fraction,
        params.uniform,
        deterministic,
    )
    meshes = res.meshes
    refine_trace = list(res.trace)
    full = OptimizationTrace()
    it_offset = 0
    J = res.trace[-1].objective
    cycles = 0
    for cycle in range(1, params.n_max + 1):
        cycles = cycle
        fixed = list(meshes)

        def f(y, fixed=fixed):
            return float(objective(solve_problem(builder(y).with_meshes(fixed))))

        if gradient == "fd":

            def grad(y, f=f):
                return fd_gradient(f, y, fd_step, design.lower, design.upper)

        else:

            def grad(y, fixed=fixed):
                return np.asarray(gradient(y, fixed), dtype=float)

        n_dofs = solve_problem(builder(x).with_meshes(fixed)).n_dofs
        x_new, tr = sqp_minimize(f, grad, design.with_values(x), options, dofs=lambda: n_dofs)
        for row in tr.rows:
            if full.rows and row.iter == 0:
                continue
            full.append(OptimRow(it_offset + row.iter, row.J, row.step, row.grad, row.constraint_max, row.dofs, row.x))
        it_offset = full.rows[-1].iter
        full.restorations += tr.restorations
        full.message = tr.message
        # rebuild geometry at the new design, re-solve and refine
        res = refine_loop(
            builder(x_new).with_meshes(fixed),
            params.eps_loop,
            params.max_refine,
            objective,
            params.fraction,
            params.uniform,
            deterministic,
        )
        base = refine_trace[-1].iter + 1
        for row in res.trace:
            row.iter += base
        refine_trace.extend(res.trace)
        meshes = res.meshes
        J = res.trace[-1].objective
        moved = float(np.linalg.norm(x_new - x))
        x = x_new
        if moved < params.eps_sol:
            break
    return AdaptiveResult(x, J, meshes, full, refine_trace, cycles)
