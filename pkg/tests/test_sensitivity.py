import numpy as np
import pytest

from gift_acoustics.benchmarks import cylinder as cyl
from gift_acoustics.errors import NumericalError
from gift_acoustics.sensitivity import (
    AdjointSolution,
    BoundaryPerturbation,
    adjoint_gradient,
    adjoint_rhs,
    curve_quadrature,
    design_velocity,
    fd_gradient,
    objective_shape_gradient,
    shape_derivative_boundary,
    shape_derivative_domain,
    solve_adjoint,
    solve_adjoint_rhs,
)
from gift_acoustics.solver import edge_data, solve_problem
from gift_acoustics.spline import circle_curve

from conftest import plane_wave_square


def one(t):
    return np.ones_like(t)


def polar_integral(f, r, n=400):
    """Midpoint rule for ``int_{disk r} f`` in polar coordinates."""
    rr = (np.arange(n) + 0.5) / n * r
    th = (np.arange(n) + 0.5) / n * 2 * np.pi
    R, T = np.meshgrid(rr, th, indexing="ij")
    return float(np.sum(f(R * np.cos(T), R * np.sin(T)) * R) * (r / n) * (2 * np.pi / n))


def ring_integral(f, r, n=2000):
    th = 2 * np.pi * np.arange(n) / n
    return float(np.sum(f(r * np.cos(th), r * np.sin(th))) * r * 2 * np.pi / n)


class TestCurveFunctionals:
    @pytest.mark.parametrize("r", [0.5, 1.0, 2.3])
    def test_perimeter(self, r):
        pert = BoundaryPerturbation(circle_curve((0.3, -0.2), r), one)
        val = shape_derivative_domain(lambda x: np.ones(x.shape[0]), pert)
        assert val == pytest.approx(2 * np.pi * r, rel=1e-10)

    def test_zero_speed(self):
        pert = BoundaryPerturbation(circle_curve((0, 0), 1.0), lambda t: np.zeros_like(t))
        assert shape_derivative_domain(lambda x: x[:, 0] ** 2, pert) == 0.0

    @pytest.mark.oracle
    def test_x_squared_against_growing_disk(self):
        pert = BoundaryPerturbation(circle_curve((0, 0), 1.0), one)
        val = shape_derivative_domain(lambda x: x[:, 0] ** 2, pert)
        h = 1e-3
        fd = (polar_integral(lambda x, y: x**2, 1 + h) - polar_integral(lambda x, y: x**2, 1 - h)) / (2 * h)
        assert val == pytest.approx(np.pi, abs=1e-9)
        assert abs(val - fd) < 1e-5

    @pytest.mark.parametrize("r", [0.7, 1.0, 3.0])
    def test_curvature_integral(self, r):
        pert = BoundaryPerturbation(circle_curve((0, 0), r), one)
        val = shape_derivative_boundary(lambda x: np.ones(x.shape[0]), lambda x, n: np.zeros(x.shape[0]), pert)
        assert val == pytest.approx(2 * np.pi, rel=1e-10)

    def test_zero_boundary_data(self):
        pert = BoundaryPerturbation(circle_curve((0, 0), 1.0), one)
        zero = shape_derivative_boundary(lambda x: np.zeros(x.shape[0]), lambda x, n: np.zeros(x.shape[0]), pert)
        assert zero == 0.0

    @pytest.mark.oracle
    def test_y_squared_on_ring(self):
        r = 1.4
        pert = BoundaryPerturbation(circle_curve((0, 0), r), one)
        val = shape_derivative_boundary(lambda x: x[:, 1] ** 2, lambda x, n: 2 * x[:, 1] * n[:, 1], pert)
        h = 1e-4
        fd = (ring_integral(lambda x, y: y**2, r + h) - ring_integral(lambda x, y: y**2, r - h)) / (2 * h)
        assert abs(val - fd) < 1e-5

    def test_linear_in_speed(self, rng):
        c = circle_curve((0, 0), 1.0)
        a, b = rng.standard_normal(2)

        def phi(x):
            return x[:, 0] + 2 * x[:, 1] ** 2

        f1 = shape_derivative_domain(phi, BoundaryPerturbation(c, np.sin))
        f2 = shape_derivative_domain(phi, BoundaryPerturbation(c, np.cos))
        f3 = shape_derivative_domain(phi, BoundaryPerturbation(c, lambda t: a * np.sin(t) + b * np.cos(t)))
        assert f3 == pytest.approx(a * f1 + b * f2, abs=1e-12)

    def test_outward_normals(self):
        _, x, n, w = curve_quadrature(circle_curve((1.0, 2.0), 0.5))
        assert np.allclose(n, (x - [1.0, 2.0]) / 0.5, atol=1e-12)
        assert w.sum() == pytest.approx(np.pi, rel=1e-10)

    def test_non_finite_speed(self):
        pert = BoundaryPerturbation(circle_curve((0, 0), 1.0), lambda t: np.full_like(t, np.nan))
        with pytest.raises(ValueError):
            shape_derivative_domain(lambda x: np.ones(x.shape[0]), pert)


class TestAdjoint:
    def test_zero_density_derivative(self):
        sol = solve_problem(plane_wave_square(k=2.0, n=2))
        adj = solve_adjoint(sol, lambda u: np.zeros_like(u))
        assert not np.any(adj.coefficients)

    @pytest.mark.oracle
    def test_dense_oracle(self):
        sol = solve_problem(plane_wave_square(k=2.0, n=2))
        A = sol.system.A.toarray()
        # unit density derivative: by partition of unity the load is the mass matrix times ones
        rhs = sol.system.M @ np.ones(A.shape[0])
        assert np.abs(adjoint_rhs(sol, lambda u: np.ones_like(u)) - rhs).max() < 1e-13
        adj = solve_adjoint(sol, lambda u: np.ones_like(u))
        # the bilinear form is symmetric, so the adjoint operator is A^T = A
        p = np.linalg.solve(A.T, rhs)
        assert np.abs(adj.coefficients - p).max() < 1e-9 * np.abs(p).max()
        assert adj.residual < 1e-10

    def test_missing_factorization(self):
        sol = solve_problem(plane_wave_square(k=2.0, n=2))
        sol.factor = None
        with pytest.raises(NumericalError):
            solve_adjoint_rhs(sol, np.ones(sol.n_dofs))

    def test_zero_bracket(self):
        prob = cyl.cylinder_problem(1, [1.2], cyl.initial_meshes(1))
        sol = solve_problem(prob)
        edges = [(p, e, edge_data(prob.patches[p], prob.meshes[p], e)) for p, e in cyl.DESIGN_EDGES]
        vel = design_velocity(lambda y: cyl.cylinder_problem(1, y), [1.2], 0, edges)
        adj = AdjointSolution(np.zeros(sol.n_dofs, dtype=complex), 0.0, sol)
        g = objective_shape_gradient(sol, adj, vel, edges, lambda u: np.zeros(np.shape(u)), cyl.incident_with_gradient(cyl.K_DEFAULT))
        assert g == 0.0

    def test_radial_velocity(self):
        prob = cyl.cylinder_problem(1, [1.2], cyl.initial_meshes(1))
        edges = [(p, e, edge_data(prob.patches[p], prob.meshes[p], e)) for p, e in cyl.DESIGN_EDGES]
        vel = design_velocity(lambda y: cyl.cylinder_problem(1, y), [1.2], 0, edges)
        for (_, _, ed), th in zip(edges, vel):
            x = ed.x.reshape(-1, 2)
            # moving the cylinder radius moves each boundary point along its radius
            assert np.allclose(th.reshape(-1, 2), x / np.hypot(x[:, 0], x[:, 1])[:, None], atol=1e-7)


def cylinder_gradients(case, x, meshes, h_rel=1e-4):
    def builder(y):
        return cyl.cylinder_problem(case, y)

    g, _, _ = adjoint_gradient(
        builder, x, meshes, cyl.DESIGN_EDGES, cyl.density, cyl.density_derivative, cyl.incident_with_gradient(cyl.K_DEFAULT)
    )

    def f(y):
        return cyl.CylinderObjective()(solve_problem(cyl.cylinder_problem(case, y, meshes)))

    return g, fd_gradient(f, x, h_rel)


class TestShapeGradient:
    @pytest.mark.oracle
    def test_case1_matches_fd(self):
        g, fd = cylinder_gradients(1, [1.0], cyl.initial_meshes(4))
        assert abs(g[0] - fd[0]) < 1e-3 * abs(fd[0])

    @pytest.mark.oracle
    def test_case2_matches_fd(self):
        g, fd = cylinder_gradients(2, [1.0, 1.7, 0.5], cyl.initial_meshes(4), h_rel=1e-5)
        assert np.abs(g - fd).max() < 1e-3 * np.abs(fd).max()

    @pytest.mark.oracle
    @pytest.mark.parametrize("a,sign", [(1.22, -1.0), (1.32, 1.0)])
    def test_sign_around_optimum(self, a, sign):
        g, _, _ = adjoint_gradient(
            lambda y: cyl.cylinder_problem(1, y),
            [a],
            cyl.initial_meshes(4),
            cyl.DESIGN_EDGES,
            cyl.density,
            cyl.density_derivative,
            cyl.incident_with_gradient(cyl.K_DEFAULT),
        )
        assert np.sign(g[0]) == sign


class TestFiniteDifference:
    def test_quadratic_exact(self):
        g = fd_gradient(lambda x: x[0] ** 2 + 3 * x[0] * x[1], [2.0, -1.0])
        assert g == pytest.approx([4 - 3, 6.0], abs=1e-7)

    def test_step_scaling(self):
        calls = []

        def f(x):
            calls.append(x.copy())
            return float(x @ x)

        fd_gradient(f, [100.0, 0.01], h_rel=1e-3)
        steps = [abs(calls[0][0] - calls[1][0]), abs(calls[2][1] - calls[3][1])]
        assert steps == pytest.approx([2 * 0.1, 2 * 1e-3])

    def test_one_sided_at_bounds(self):
        g = fd_gradient(lambda x: float(np.sum(x**3)), [1.0, 0.0], h_rel=1e-6, lower=[0, 0], upper=[1, 1])
        assert g == pytest.approx([3.0, 0.0], abs=1e-5)

    def test_no_room(self):
        with pytest.raises(ValueError):
            fd_gradient(lambda x: 0.0, [0.5], h_rel=1e-3, lower=[0.5], upper=[0.5])

    def test_input_untouched(self):
        x = np.array([1.0, 2.0])
        fd_gradient(lambda y: float(np.sum(y)), x)
        assert np.array_equal(x, [1.0, 2.0])
