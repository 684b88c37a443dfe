import numpy as np
import pytest

from gift_acoustics.analytic import CylinderConfig, cylinder_exact, exact_objective, greens_halfplane
from gift_acoustics.benchmarks import barrier as bar
from gift_acoustics.benchmarks import cylinder as cyl
from gift_acoustics.benchmarks import horn
from gift_acoustics.errors import ConfigError
from gift_acoustics.solver import (
    BGT1,
    DiscreteSolution,
    Neumann,
    Robin,
    Symmetry,
    assemble_system,
    domain_integral,
    edge_points,
    eval_field,
    merge_interfaces,
    solve_problem,
)


def constant_solution(problem, value):
    sysm = assemble_system(problem)
    return DiscreteSolution(sysm, np.full(sysm.n_dofs, value, dtype=complex))


def area(problem):
    return domain_integral(constant_solution(problem, 1.0), lambda u, x: np.ones_like(u))


def shoelace(points):
    x, y = points[:, 0], points[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


# ---------------------------------------------------------------- cylinder
class TestCylinder:
    def test_initial_inside_bounds(self):
        for case, x in cyl.INITIAL.items():
            lo, hi = cyl.BOUNDS[case]
            assert np.all(np.array(lo) <= x) and np.all(np.asarray(x) <= np.array(hi))

    @pytest.mark.parametrize("a", [0.7, 1.2689, 1.8])
    def test_case1_area(self, a):
        exact = np.pi * (cyl.R_OUTER**2 - a**2)
        # the rational map makes 5-point Gauss inexact; the error shrinks with the cells
        errs = [abs(area(cyl.cylinder_problem(1, [a], cyl.initial_meshes(n))) - exact) for n in (1, 2)]
        assert errs[0] < 1e-6 * exact
        assert errs[1] < errs[0] / 8

    def test_case2_area_shoelace(self):
        x = cyl.INITIAL[2]
        crv = cyl.design_curve(x)
        t = np.linspace(0, 1, 4001)
        inner = crv.evaluate(t)
        quarter = shoelace(np.vstack([[0.0, 0.0], inner]))
        prob = cyl.cylinder_problem(2, x, cyl.initial_meshes(1))
        assert area(prob) == pytest.approx(np.pi * cyl.R_OUTER**2 - 4 * quarter, rel=1e-6)

    def test_design_curve_endpoints(self):
        crv = cyl.design_curve([1.3, 1.1, 0.9])
        ends = crv.evaluate([0.0, 1.0])
        assert np.allclose(ends, [[1.3, 0.0], [0.0, 1.3]], atol=1e-14)

    def test_design_curve_size(self):
        with pytest.raises(ConfigError):
            cyl.design_curve([1.0, 1.0])

    def test_radius_range(self):
        with pytest.raises(ConfigError):
            cyl.cylinder_problem(1, [2.5])

    def test_boundary_layout(self):
        prob = cyl.cylinder_problem(2, cyl.INITIAL[2])
        assert sum(isinstance(b, BGT1) for b in prob.boundary.values()) == 4
        assert sum(isinstance(b, Neumann) for b in prob.boundary.values()) == 4
        dm = merge_interfaces(prob)
        assert dm.n_global < dm.n_local

    def test_incident_flux(self, rng):
        k = cyl.K_DEFAULT
        x = rng.standard_normal((6, 2))
        n = rng.standard_normal((6, 2))
        n /= np.linalg.norm(n, axis=1)[:, None]
        h = 1e-6
        f = cyl.incident_field(k)
        dn = (f(x + h * n) - f(x - h * n)) / (2 * h)
        assert np.abs(cyl.incident_flux(k)(x, n) + dn).max() < 1e-8

    @pytest.mark.oracle
    def test_case1_against_exact(self):
        prob = cyl.cylinder_problem(1, [1.0], cyl.initial_meshes(4))
        J = cyl.CylinderObjective()(solve_problem(prob))
        ex = exact_objective(CylinderConfig(a=1.0))
        assert abs(J - ex) < 1e-2 * abs(ex)

    def test_field_matches_exact_pointwise(self, rng):
        prob = cyl.cylinder_problem(1, [1.2], cyl.initial_meshes(4))
        sol = solve_problem(prob)
        ex = cylinder_exact(CylinderConfig(a=1.2))
        r = rng.uniform(1.25, 1.95, 20)
        th = rng.uniform(0, 2 * np.pi, 20)
        pts = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
        assert np.abs(eval_field(sol, pts) - ex.field_xy(pts)).max() < 5e-3


# -------------------------------------------------------------------- horn
class TestHorn:
    @pytest.mark.oracle
    def test_wavenumber(self):
        # 2 pi 280 / 345, tabulated to five decimals
        assert horn.HornConfig(f=280.0).k == pytest.approx(5.09940, abs=5e-6)

    def test_config_checks(self):
        with pytest.raises(ConfigError):
            horn.HornConfig(a=-1.0)
        with pytest.raises(ConfigError):
            horn.HornConfig(n_cp=3)
        with pytest.raises(ConfigError):
            horn.HornConfig(b=0.99)

    def test_bounds(self):
        lo, hi = horn.HornConfig(n_cp=2).bounds()
        assert lo.size == hi.size == 4
        assert np.all(lo < 0) and np.all(hi > 0)

    def test_layout(self):
        cfg = horn.HornConfig()
        prob = horn.horn_problem(cfg)
        kinds = [type(b).__name__ for b in prob.boundary.values()]
        assert kinds.count("Symmetry") >= 2
        inlet = [b for b in prob.boundary.values() if isinstance(b, Robin) and b.f != 0]
        assert len(inlet) == 1
        assert inlet[0].alpha == pytest.approx(1j * cfg.k)
        p, e = horn.inlet_edge(prob)
        pts = edge_points(prob.patches[p], e)
        assert np.allclose(pts[:, 0], -(cfg.L1 + cfg.L2))
        assert np.ptp(pts[:, 1]) == pytest.approx(cfg.a)

    def test_reflection_of_incident_only(self):
        cfg = horn.HornConfig()
        prob = horn.horn_problem(cfg, meshes=horn.initial_meshes())
        assert horn.horn_reflection(constant_solution(prob, cfg.A_m), cfg) == pytest.approx(0.0, abs=1e-12)
        assert horn.horn_reflection(constant_solution(prob, 0.0), cfg) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.oracle
    def test_reflection_trapezoid_oracle(self):
        cfg = horn.HornConfig()
        sol = solve_problem(horn.horn_problem(cfg))
        y = np.linspace(0.0, cfg.a, 2001)
        pts = np.stack([np.full_like(y, -(cfg.L1 + cfg.L2)), y], axis=1)
        u = eval_field(sol, pts)
        u_in = np.sum(0.5 * (u[1:] + u[:-1]) * np.diff(y)) / cfg.a
        assert horn.horn_reflection(sol, cfg) == pytest.approx(abs(u_in - cfg.A_m) / cfg.A_m, abs=1e-7)

    def test_design_moves_wall_only(self):
        cfg = horn.HornConfig()
        p0 = horn.horn_patches(cfg, np.zeros(2))
        p1 = horn.horn_patches(cfg, np.array([0.02, 0.03]))
        moved = [not np.allclose(a.points, b.points) for a, b in zip(p0, p1)]
        assert any(moved) and not all(moved)


# ----------------------------------------------------------------- barrier
class TestBarrier:
    @pytest.mark.oracle
    def test_initial_area(self):
        cfg = bar.BarrierConfig()
        assert bar.barrier_area(cfg, cfg.initial_design()) == pytest.approx(0.6, abs=1e-14)

    def test_wide_design_violates_cap(self):
        cfg = bar.BarrierConfig()
        a = bar.barrier_area(cfg, np.full(cfg.n_cp, 4.9))
        assert a > cfg.area_cap

    @pytest.mark.oracle
    def test_area_shoelace(self, rng):
        cfg = bar.BarrierConfig()
        d = rng.uniform(4.9, 5.1, cfg.n_cp)
        pts = bar.front_curve(cfg, d).evaluate(np.linspace(0, 1, 20001))
        poly = np.vstack([pts, [[cfg.x_back, cfg.height], [cfg.x_back, 0.0]]])
        assert bar.barrier_area(cfg, d) == pytest.approx(shoelace(poly), rel=1e-7)

    def test_bounds_enforced(self):
        cfg = bar.BarrierConfig()
        with pytest.raises(ConfigError):
            bar.build_barrier(cfg, np.full(cfg.n_cp, 4.8))
        bar.build_barrier(cfg, np.full(cfg.n_cp, 4.8), check_bounds=False)

    def test_config_checks(self):
        with pytest.raises(ConfigError):
            bar.BarrierConfig(aggregate="median")
        with pytest.raises(ConfigError):
            bar.BarrierConfig(n_cp=0)

    def test_layout(self):
        cfg = bar.BarrierConfig()
        prob = bar.build_barrier(cfg)
        assert len(prob.patches) == 3 and len(prob.interfaces) == 2
        kinds = [type(b) for b in prob.boundary.values()]
        assert kinds.count(BGT1) == 3
        assert kinds.count(Symmetry) == 2
        assert kinds.count(Neumann) == 3

    def test_green_flux(self, rng):
        cfg = bar.BarrierConfig()
        x = rng.uniform(4, 6, (5, 2))
        n = rng.standard_normal((5, 2))
        n /= np.linalg.norm(n, axis=1)[:, None]
        h = 1e-6
        G = lambda p: greens_halfplane(p, cfg.source, cfg.k)[0]  # noqa: E731
        dn = (G(x + h * n) - G(x - h * n)) / (2 * h)
        assert np.abs(bar.green_flux(cfg)(x, n) + dn).max() < 1e-7

    def test_aggregate_modes(self):
        cfg = bar.BarrierConfig(f=100.0)
        sol = solve_problem(bar.build_barrier(cfg))
        s = bar.barrier_objective(sol, cfg)
        m = bar.barrier_objective(sol, bar.BarrierConfig(f=100.0, aggregate="mean"))
        assert s == pytest.approx(m * cfg.grid_n**2, rel=1e-12)

    def test_grid(self):
        g = bar.BarrierConfig().grid()
        assert g.shape == (100, 2)
        assert g[:, 0].min() == 6.0 and g[:, 1].max() == 3.0
