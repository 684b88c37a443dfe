import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gift_acoustics.pht import bernstein, bernstein3, init_pht, pht_eval, refine


def combo(mesh, coef, c, s, t):
    """Value and parametric gradient of ``sum coef_i b_i`` at local (s, t) of cell c."""
    idx, val, grad = mesh.pht_eval(c, s, t)
    return coef[idx] @ val, coef[idx] @ grad


def to_local(mesh, c, u, v):
    u0, v0, u1, v1 = mesh.cell_rect(c)
    return 2 * (u - u0) / (u1 - u0) - 1, 2 * (v - v0) / (v1 - v0) - 1


def random_refinements(rng, steps, start=(1, 1)):
    mesh = init_pht(*start)
    history = [mesh]
    for _ in range(steps):
        act = mesh.active
        k = int(rng.integers(1, max(2, len(act) // 3) + 1))
        pick = [act[i] for i in rng.choice(len(act), size=min(k, len(act)), replace=False)]
        mesh = refine(mesh, pick)
        history.append(mesh)
    return history


def shared_edge_samples(mesh, n=5):
    """Points on interior edges between two active cells: (cell_a, cell_b, u, v, axis)."""
    out = []
    t = (np.arange(n) + 0.5) / n
    for c in mesh.active:
        u0, v0, u1, v1 = mesh.cell_rect(c)
        if u1 < 1.0:
            for s in t:
                v = v0 + s * (v1 - v0)
                out.append((c, mesh.find_cell(u1, v), u1, v, 0))
        if v1 < 1.0:
            for s in t:
                u = u0 + s * (u1 - u0)
                out.append((c, mesh.find_cell(u, v1), u, v1, 1))
    return out


class TestBernstein:
    def test_endpoint(self):
        assert bernstein(3, 1, -1.0) == 1.0

    @pytest.mark.oracle
    def test_middle_value(self):
        # (1/8) * 3 * 1 * 1
        assert bernstein(3, 2, 0.0) == pytest.approx(3 / 8, abs=1e-15)

    @pytest.mark.property
    @given(st.floats(-1, 1), st.integers(1, 6))
    @settings(max_examples=50, deadline=None)
    def test_sum_to_one(self, x, p):
        assert sum(bernstein(p, j, x) for j in range(1, p + 2)) == pytest.approx(1.0, abs=1e-13)

    def test_index_check(self):
        with pytest.raises(IndexError):
            bernstein(3, 5, 0.0)

    def test_cubic_table_matches_scalar(self, rng):
        x = rng.uniform(-1, 1, 7)
        B, dB, _ = bernstein3(x)
        for j in range(4):
            assert np.allclose(B[j], [bernstein(3, j + 1, v) for v in x], atol=1e-15)
        h = 1e-6
        fd = (bernstein3(x + h)[0] - bernstein3(x - h)[0]) / (2 * h)
        assert np.allclose(dB, fd, atol=1e-8)


class TestInit:
    @pytest.mark.parametrize("n,expect", [(1, 16), (2, 36), (4, 100)])
    def test_counts(self, n, expect):
        m = init_pht(n, n)
        assert m.n_basis == expect
        assert m.n_basis == 4 * (m.n_vb + m.n_vplus)

    def test_vertex_classes(self):
        m = init_pht(2, 2)
        assert (m.n_vb, m.n_vplus) == (8, 1)
        m = init_pht(4, 4)
        assert (m.n_vb, m.n_vplus) == (16, 9)

    def test_rectangular(self):
        m = init_pht(3, 2)
        assert m.n_basis == 4 * (10 + 2)

    def test_invalid(self):
        with pytest.raises(ValueError):
            init_pht(0, 2)

    def test_single_element_is_bernstein(self):
        m = init_pht(1, 1)
        idx, val, _ = pht_eval(m, m.active[0], (0.0, 0.0))
        B = bernstein3([0.0])[0][:, 0]
        idx, C = m.cell_table(m.active[0])
        # the 16 functions are an invertible recombination of the Bernstein tensor
        assert C.shape == (16, 16)
        assert abs(np.linalg.det(C)) > 1e-6
        assert np.allclose(val, C @ np.outer(B, B).ravel(), atol=1e-15)
        assert val.sum() == pytest.approx(1.0, abs=1e-14)


class TestRefine:
    def test_refine_all_matches_2x2(self, rng):
        a = init_pht(1, 1).refine_all()
        b = init_pht(2, 2)
        assert a.n_basis == b.n_basis == 36
        # same space: evaluate both bases at random points and compare ranks
        pts = rng.uniform(0, 1, (80, 2))

        def basis_matrix(m):
            Mx = np.zeros((pts.shape[0], m.n_basis))
            for r, (u, v) in enumerate(pts):
                c = m.find_cell(u, v)
                idx, val, _ = m.pht_eval(c, *to_local(m, c, u, v))
                Mx[r, idx] = val
            return Mx

        A, B = basis_matrix(a), basis_matrix(b)
        assert np.linalg.matrix_rank(np.hstack([A, B]), tol=1e-9) == 36

    def test_empty_refine_is_identity(self):
        m = init_pht(2, 2)
        r = refine(m, [])
        assert r is m or (r.active == m.active and r.n_basis == m.n_basis)

    def test_inactive_cell_rejected(self):
        m = init_pht(1, 1).refine_all()
        with pytest.raises(ValueError):
            m.refine([(0, 0, 0)])

    @pytest.mark.oracle
    def test_corner_refinement_counts(self):
        m = init_pht(2, 2)
        counts = [m.n_basis]
        for _ in range(3):
            corner = min(m.active, key=lambda c: (m.cell_rect(c)[0] + m.cell_rect(c)[1], -c[0]))
            m = refine(m, [corner])
            assert m.n_basis == 4 * (m.n_vb + m.n_vplus)
            counts.append(m.n_basis)
        # vertex audit: each corner split adds 2 boundary and 1 crossing vertex
        assert counts == [36, 48, 60, 72]

    def test_grading(self, rng):
        for m in random_refinements(rng, 6):
            for c in m.active:
                u0, v0, u1, v1 = m.cell_rect(c)
                for u, v in ((u1 + 1e-9, 0.5 * (v0 + v1)), (0.5 * (u0 + u1), v1 + 1e-9)):
                    if u < 1 and v < 1:
                        assert abs(m.find_cell(u, v)[0] - c[0]) <= 1

    def test_monotone(self, rng):
        hist = random_refinements(rng, 5)
        for a, b in zip(hist[:-1], hist[1:]):
            area_a = {c: m for c, m in ((c, a.cell_rect(c)) for c in a.active)}
            for c in b.active:
                r = b.cell_rect(c)
                parent = a.find_cell(0.5 * (r[0] + r[2]), 0.5 * (r[1] + r[3]))
                pr = area_a[parent]
                assert pr[0] <= r[0] and r[2] <= pr[2] and pr[1] <= r[1] and r[3] <= pr[3]
            assert b.n_basis >= a.n_basis


@pytest.mark.property
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.sampled_from([(1, 1), (2, 2), (2, 1)]))
@settings(max_examples=50, deadline=None)
def test_dimension_formula_random_sequences(seed, steps, start):
    rng = np.random.default_rng(seed)
    for m in random_refinements(rng, steps, start):
        assert m.n_basis == 4 * (m.n_vb + m.n_vplus)


@pytest.mark.property
def test_partition_of_unity_refined(rng):
    for m in random_refinements(rng, 5)[1:]:
        g = np.linspace(-1, 1, 5)
        for c in m.active:
            for s in g:
                for t in g:
                    _, val, grad = m.pht_eval(c, s, t)
                    assert abs(val.sum() - 1) < 1e-10
                    assert np.abs(grad.sum(axis=0)).max() < 1e-8


@pytest.mark.oracle
def test_c1_across_edges(rng):
    """Two-sided sampling of values and normal derivatives on every shared edge."""
    for m in random_refinements(rng, 5)[1:]:
        coef = rng.standard_normal(m.n_basis)
        for ca, cb, u, v, axis in shared_edge_samples(m):
            fa, ga = combo(m, coef, ca, *to_local(m, ca, u, v))
            fb, gb = combo(m, coef, cb, *to_local(m, cb, u, v))
            scale = max(1.0, abs(fa))
            assert abs(fa - fb) < 1e-9 * scale
            assert abs(ga[axis] - gb[axis]) < 1e-7 * max(1.0, abs(ga[axis]))


def test_equal_level_edge_equal_from_both_sides():
    m = init_pht(2, 2)
    coef = np.arange(m.n_basis, dtype=float) ** 0.5
    for s in np.linspace(0.05, 0.45, 5):
        fa, ga = combo(m, coef, (0, 0, 0), *to_local(m, (0, 0, 0), 0.5, s))
        fb, gb = combo(m, coef, (0, 1, 0), *to_local(m, (0, 1, 0), 0.5, s))
        assert abs(fa - fb) < 1e-9 and abs(ga[0] - gb[0]) < 1e-9


def test_gradient_scaling_and_inactive():
    m = init_pht(1, 1).refine([(0, 0, 0)])
    c = m.active[0]
    h = 1e-6
    _, v0, g0 = m.pht_eval(c, 0.2, -0.3)
    width = m.cell_rect(c)[2] - m.cell_rect(c)[0]
    _, vp, _ = m.pht_eval(c, 0.2 + h, -0.3)
    _, vm, _ = m.pht_eval(c, 0.2 - h, -0.3)
    # local coordinates span 2 per cell width
    assert np.allclose(g0[:, 0], (vp - vm) / (2 * h) * 2 / width, atol=1e-6)
    with pytest.raises(ValueError):
        m.pht_eval((0, 0, 0), 0.0, 0.0)


def test_mesh_dump_fields():
    import json

    m = init_pht(2, 2).refine([(0, 0, 0)])
    d = json.loads(m.dumps())
    assert d["basis_count"] == m.n_basis
    assert d["V_b"] == m.n_vb and d["V_plus"] == m.n_vplus
    act = [c for c in d["cells"] if c["active"]]
    assert len(act) == len(m.active)
    assert sum((c["rectangle"][2] - c["rectangle"][0]) * (c["rectangle"][3] - c["rectangle"][1]) for c in act) == pytest.approx(1.0)
