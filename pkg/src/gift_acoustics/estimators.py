"""scikit-learn style facades over the solver, the estimator and the optimizer.

``fit`` takes a problem (or an initial design) rather than a data matrix;
``predict`` evaluates the fitted field or objective. Parameters follow the
``BaseEstimator`` conventions so ``get_params``/``set_params``/``clone`` work.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .adapt import MARK_FRACTION, estimate, mark, refine_loop
from .optimize import AdaptiveParams, DesignVector, SQPOptions, adaptive_optimize
from .solver import HelmholtzProblem, eval_field, solve_problem


def check_points(X) -> np.ndarray:
    """Finite ``(n, 2)`` float array of physical points."""
    X = check_array(X, dtype=float, ensure_2d=True)
    if X.shape[1] != 2:
        raise ValueError("points must have two columns, got %d" % X.shape[1])
    return X


def check_problem(problem) -> HelmholtzProblem:
    if not isinstance(problem, HelmholtzProblem):
        raise TypeError("expected a HelmholtzProblem, got %s" % type(problem).__name__)
    return problem


class AdaptiveHelmholtz(BaseEstimator):
    """Adaptive solve of a fixed problem; ``predict`` evaluates the field.

    Parameters
    ----------
    tol : float
        Relative estimator tolerance.
    max_iters : int
        Refinement iterations before giving up.
    fraction : float
        Bulk marking fraction.
    uniform : bool
        Refine every cell instead of marking.
    """

    def __init__(self, tol: float = 1e-3, max_iters: int = 20, fraction: float = MARK_FRACTION, uniform: bool = False):
        self.tol = tol
        self.max_iters = max_iters
        self.fraction = fraction
        self.uniform = uniform

    def fit(self, problem, y=None, objective: Callable | None = None):
        problem = check_problem(problem)
        res = refine_loop(problem, self.tol, self.max_iters, objective, self.fraction, self.uniform)
        self.solution_ = res.solution
        self.meshes_ = res.meshes
        self.trace_ = res.trace
        self.converged_ = res.converged
        self.n_dofs_ = res.solution.n_dofs
        self.eta_rel_ = res.trace[-1].eta_rel
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "solution_")
        return eval_field(self.solution_, check_points(X))


class RecoveryIndicator(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Per-cell recovery indicators; ``transform`` returns the marked cells.

    Output wrapping is disabled since the result is an index array, not a
    feature matrix.
    """

    def __init__(self, fraction: float = MARK_FRACTION):
        self.fraction = fraction

    def fit(self, problem, y=None):
        sol = solve_problem(check_problem(problem))
        self.report_ = estimate(sol)
        self.eta_cells_ = self.report_.eta_cells
        self.eta_rel_ = self.report_.eta_rel
        return self

    def transform(self, problem=None) -> np.ndarray:
        check_is_fitted(self, "report_")
        if problem is not None:
            self.fit(problem)
        return mark(self.report_, self.fraction)


class ShapeOptimizer(BaseEstimator):
    """Adaptive shape optimization over a design box.

    ``fit(x0)`` runs the optimize/refine cycles from ``x0``; ``predict(X)``
    evaluates the objective of each design row on the final meshes.
    """

    def __init__(
        self,
        builder: Callable | None = None,
        objective: Callable | None = None,
        lower=None,
        upper=None,
        initial_meshes=None,
        eps0: float = 1e-2,
        eps_loop: float = 1e-3,
        eps_sol: float = 1e-4,
        n_max: int = 10,
        gradient="fd",
        tol_x: float = 1e-6,
        tol_g: float = 1e-6,
        ineq: Callable | None = None,
    ):
        self.builder = builder
        self.objective = objective
        self.lower = lower
        self.upper = upper
        self.initial_meshes = initial_meshes
        self.eps0 = eps0
        self.eps_loop = eps_loop
        self.eps_sol = eps_sol
        self.n_max = n_max
        self.gradient = gradient
        self.tol_x = tol_x
        self.tol_g = tol_g
        self.ineq = ineq

    def fit(self, x0, y=None):
        if self.builder is None or self.objective is None or self.initial_meshes is None:
            raise ValueError("builder, objective and initial_meshes are required")
        x0 = check_array(np.atleast_2d(x0), dtype=float).ravel()
        design = DesignVector(x0, self.lower, self.upper, ineq=self.ineq)
        res = adaptive_optimize(
            self.builder,
            self.objective,
            design,
            AdaptiveParams(self.eps0, self.eps_loop, self.eps_sol, self.n_max),
            self.initial_meshes,
            gradient=self.gradient,
            options=SQPOptions(tol_x=self.tol_x, tol_g=self.tol_g),
        )
        self.x_ = res.x
        self.J_ = res.J
        self.meshes_ = res.meshes
        self.optim_trace_ = res.optim_trace
        self.refine_trace_ = res.refine_trace
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "x_")
        X = check_array(np.atleast_2d(X), dtype=float)
        if X.shape[1] != self.x_.size:
            raise ValueError("designs must have %d columns" % self.x_.size)
        return np.array(
            [float(self.objective(solve_problem(self.builder(x).with_meshes(self.meshes_)))) for x in X]
        )
