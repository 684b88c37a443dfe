import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gift_acoustics.adapt import (
    EstimatorReport,
    conform_interfaces,
    estimate,
    mark,
    recover_gradient,
    refine_loop,
    refine_marked,
    refine_uniform,
)
from gift_acoustics.benchmarks import cylinder as cyl
from gift_acoustics.pht import init_pht
from gift_acoustics.solver import (
    DiscreteSolution,
    HelmholtzProblem,
    Neumann,
    assemble_system,
    find_interfaces,
    merge_interfaces,
    solve_problem,
)

from conftest import neumann_square, plane_wave_square, square_patch


def fit_coefficients(mesh, f, n=12):
    """Least-squares coefficients of ``f`` on a single identity-mapped patch."""
    g = (np.arange(n) + 0.5) / n
    rows, rhs = [], []
    for u in g:
        for v in g:
            c = mesh.find_cell(u, v)
            u0, v0, u1, v1 = mesh.cell_rect(c)
            idx, val, _ = mesh.pht_eval(c, 2 * (u - u0) / (u1 - u0) - 1, 2 * (v - v0) / (v1 - v0) - 1)
            row = np.zeros(mesh.n_basis)
            row[idx] = val
            rows.append(row)
            rhs.append(f(u, v))
    return np.linalg.lstsq(np.array(rows), np.array(rhs, dtype=complex), rcond=None)[0]


def solution_for(prob, f):
    sysm = assemble_system(prob)
    return DiscreteSolution(sysm, fit_coefficients(prob.meshes[0], f))


def raw_and_recovered_errors(sol, grad_exact):
    """Per-cell L2 errors of the raw and recovered gradients against the exact one."""
    G = recover_gradient(sol)
    vd = sol.system.volumes[0]
    gx, gy = vd.gradients(sol.local(0))
    rx = vd.values(sol.system.dofs.local(G[:, 0], 0))
    ry = vd.values(sol.system.dofs.local(G[:, 1], 0))
    ex, ey = grad_exact(vd.x[..., 0], vd.x[..., 1])
    raw = np.sum(vd.W * (np.abs(gx - ex) ** 2 + np.abs(gy - ey) ** 2), axis=1)
    rec = np.sum(vd.W * (np.abs(rx - ex) ** 2 + np.abs(ry - ey) ** 2), axis=1)
    return np.sqrt(raw), np.sqrt(rec)


class TestMark:
    @pytest.mark.oracle
    def test_first_cell_only(self):
        eta = np.sqrt([0.5, 0.3, 0.15, 0.05])
        assert list(mark(eta, 0.5)) == [0]

    def test_fraction_one(self):
        eta = np.array([0.1, 0.0, 0.4, 0.2])
        assert sorted(mark(eta, 1.0)) == [0, 2, 3]

    @pytest.mark.parametrize("n", [1, 4, 5, 9])
    def test_equal_indicators(self, n):
        got = mark(np.ones(n), 0.5)
        assert len(got) == int(np.ceil(n / 2))
        # ties resolved by ascending index
        assert list(got) == list(range(len(got)))

    def test_zero_report(self):
        assert mark(np.zeros(3), 0.5).size == 0

    @pytest.mark.parametrize("frac", [0.0, -0.1, 1.5])
    def test_fraction_range(self, frac):
        with pytest.raises(ValueError):
            mark(np.ones(3), frac)

    def test_report_input(self):
        rep = EstimatorReport(np.array([0.1, 0.9]), [(0, "a"), (0, "b")], 10, 1.0)
        assert list(mark(rep, 0.5)) == [1]
        assert rep.patch_cells([1]) == {0: ["b"]}

    @pytest.mark.property
    @given(st.lists(st.floats(0, 10), min_size=1, max_size=40), st.floats(0.05, 1.0))
    @settings(max_examples=80, deadline=None)
    def test_smallest_prefix(self, vals, frac):
        eta = np.array(vals)
        e2 = eta**2
        got = mark(eta, frac)
        if e2.sum() == 0:
            assert got.size == 0
            return
        assert e2[got].sum() >= frac * e2.sum() * (1 - 1e-9)
        # dropping the last marked cell falls below the fraction
        assert e2[got[:-1]].sum() < frac * e2.sum()
        # the marked cells dominate the unmarked ones
        rest = np.setdiff1d(np.arange(eta.size), got)
        if rest.size:
            assert e2[got].min() >= e2[rest].max()
        assert np.array_equal(got, mark(eta, frac))


class TestRecovery:
    def test_zero(self):
        prob = neumann_square(k=1.0, n=2)
        sysm = assemble_system(prob)
        sol = DiscreteSolution(sysm, np.zeros(sysm.n_dofs, dtype=complex))
        assert not np.any(recover_gradient(sol))

    def test_linear_reproduced(self):
        prob = neumann_square(k=1.0, n=2)
        sol = solution_for(prob, lambda u, v: 2 * u - 3 * v + 1)
        G = recover_gradient(sol)
        assert np.abs(G[:, 0] - 2).max() < 1e-10
        assert np.abs(G[:, 1] + 3).max() < 1e-10

    @pytest.mark.property
    def test_exact_in_space_gives_zero(self, rng):
        prob = neumann_square(k=1.0, n=2)
        prob = prob.with_meshes([prob.meshes[0].refine([(0, 0, 0)])])
        for _ in range(3):
            a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
            # biquadratic fields have gradients inside the cubic space
            sol = solution_for(prob, lambda u, v: sum(a[i, j] * u**i * v**j for i in range(3) for j in range(3)))
            rep = estimate(sol)
            assert rep.eta < 1e-10 * max(1.0, rep.h1_norm)

    @pytest.mark.oracle
    def test_recovered_beats_raw(self):
        k = 6.0
        prob = neumann_square(k=k, n=4)
        sol = solution_for(prob, lambda u, v: np.exp(1j * k * (0.6 * u + 0.8 * v)))

        def grad(x, y):
            e = np.exp(1j * k * (0.6 * x + 0.8 * y))
            return 0.6j * k * e, 0.8j * k * e

        raw, rec = raw_and_recovered_errors(sol, grad)
        assert np.mean(rec < raw) >= 0.9

    def test_report_invariants(self):
        sol = solve_problem(plane_wave_square(k=4.0, n=2))
        rep = estimate(sol)
        assert np.all(rep.eta_cells >= 0)
        assert rep.eta**2 == pytest.approx(np.sum(rep.eta_cells**2), rel=1e-12)
        assert rep.eta_rel == pytest.approx(rep.eta / rep.h1_norm)
        assert len(rep.cells) == rep.eta_cells.size == len(sol.problem.meshes[0].active)

    def test_uniform_refinement_decreases(self):
        # a single cell gives zero: its gradients already lie in the cubic space
        prob = plane_wave_square(k=4.0, n=2)
        etas = []
        for _ in range(4):
            etas.append(estimate(solve_problem(prob)).eta)
            prob = prob.with_meshes(refine_uniform(prob))
        assert all(a > b for a, b in zip(etas[:-1], etas[1:]))

    def test_invariant_under_patch_order(self):
        prob = cyl.cylinder_problem(1, [1.2], cyl.initial_meshes(1))
        order = [2, 0, 3, 1]
        inv = {old: new for new, old in enumerate(order)}
        bc = {(inv[p], e): v for (p, e), v in prob.boundary.items()}
        itf = [type(i)((inv[i.a[0]], i.a[1]), (inv[i.b[0]], i.b[1])) for i in prob.interfaces]
        perm = HelmholtzProblem([prob.patches[p] for p in order], [prob.meshes[p] for p in order], prob.k, bc, itf)
        a = estimate(solve_problem(prob))
        b = estimate(solve_problem(perm))
        assert b.eta == pytest.approx(a.eta, rel=1e-10)
        ea = {c: v for c, v in zip(a.cells, a.eta_cells)}
        for (p, c), v in zip(b.cells, b.eta_cells):
            assert v == pytest.approx(ea[(order[p], c)], rel=1e-8, abs=1e-14)


class TestInterfaces:
    def test_conformity_mirrors_refinement(self):
        p = [square_patch(0, 0), square_patch(1, 0)]
        bc = {(0, e): Neumann(0.0) for e in ("v0", "v1", "u0")}
        bc.update({(1, e): Neumann(0.0) for e in ("v0", "v1", "u1")})
        prob = HelmholtzProblem(p, [init_pht(2, 2), init_pht(2, 2)], 1.0, bc, find_interfaces(p))
        refined = [prob.meshes[0].refine([(0, 1, 0)]), prob.meshes[1]]
        meshes = conform_interfaces(prob, refined)
        assert meshes[0].edge_breakpoints("u1") == pytest.approx(meshes[1].edge_breakpoints("u0"))
        assert meshes[1].n_basis > prob.meshes[1].n_basis
        merge_interfaces(prob.with_meshes(meshes))

    def test_refine_marked_only_touches_marked(self):
        prob = cyl.cylinder_problem(1, [1.2], cyl.initial_meshes(2))
        rep = estimate(solve_problem(prob))
        sel = mark(rep, 0.5)
        meshes = refine_marked(prob, rep, sel)
        for p, (old, new) in enumerate(zip(prob.meshes, meshes)):
            gone = set(old.active) - set(new.active)
            marked = {c for q, c in (rep.cells[i] for i in sel) if q == p}
            assert marked <= gone


class TestLoop:
    def test_infinite_tolerance(self):
        res = refine_loop(plane_wave_square(k=4.0, n=2), np.inf)
        assert len(res.trace) == 1 and res.converged
        assert res.trace[0].iter == 0

    def test_single_cell_estimate_vanishes(self):
        res = refine_loop(plane_wave_square(k=4.0, n=1), 1e-6)
        assert res.converged and len(res.trace) == 1
        assert res.trace[0].eta_rel < 1e-12

    def test_invalid_tolerance(self):
        with pytest.raises(ValueError):
            refine_loop(neumann_square(), 0.0)

    def test_max_iters_flag(self):
        res = refine_loop(plane_wave_square(k=4.0, n=2), 1e-12, max_iters=1)
        assert not res.converged
        assert len(res.trace) == 2

    def test_trace_fields(self):
        res = refine_loop(plane_wave_square(k=4.0, n=2), 1e-12, max_iters=2, objective=lambda s: 1.5)
        rows = res.trace
        assert [r.iter for r in rows] == [0, 1, 2]
        assert all(r.objective == 1.5 and r.wall_ms == 0.0 for r in rows)
        assert all(a.dofs < b.dofs for a, b in zip(rows[:-1], rows[1:]))

    @pytest.mark.slow
    def test_tighter_tolerance_never_fewer_dofs(self):
        prob = cyl.cylinder_problem(1, [1.0], cyl.initial_meshes(1))
        a = refine_loop(prob, 1e-1, 10)
        b = refine_loop(prob, 3e-2, 10)
        assert a.converged and b.converged
        assert b.solution.n_dofs >= a.solution.n_dofs
        assert b.trace[-1].eta_rel <= 3e-2

    @pytest.mark.slow
    def test_adaptive_not_worse_than_uniform(self):
        prob = cyl.cylinder_problem(1, [1.0], cyl.initial_meshes(1))
        tol = 3e-2
        ad = refine_loop(prob, tol, 12)
        un = refine_loop(prob, tol, 12, uniform=True)
        assert ad.converged and un.converged
        assert ad.solution.n_dofs <= un.solution.n_dofs
