"""Cubic C1 PHT-splines on hierarchical T-meshes over the unit square.

Every basis function is anchored at a basis vertex (a boundary vertex or an
interior crossing vertex); each such vertex carries four functions. A
function is stored through its Hermite data ``(f, f_u, f_v, f_uv)`` at the
anchor. That data comes from the tensor product of the two cubic
B-splines with a double knot at the vertex, using the local knot spacings
seen when the vertex first became a basis vertex. Data at every other basis
vertex is zero. This is exactly what truncation produces: refinement zeroes
the data of old functions at the new basis vertices and leaves their anchor
data untouched.

On each active cell the restriction is the bicubic Hermite interpolant of
the corner data, stored as a 4x4 table of Bernstein ordinates. Corners that
are T-junctions take their data from the larger cell whose edge contains
them, which keeps the space C1.

Integer vertex coordinates use a fixed resolution of ``2**SCALE`` per
level-0 cell, so refinement depth is limited to ``SCALE`` levels.
"""

from __future__ import annotations

import json
from math import comb
from typing import Iterable

import numpy as np

SCALE = 40
_UNIT = 1 << SCALE

EDGES = ("v0", "v1", "u0", "u1")
# direction order used in vertex tables: east, west, north, south
_E, _W, _N, _S = 0, 1, 2, 3


def bernstein(p: int, j: int, xi: float) -> float:
    """Bernstein polynomial ``B_j`` (1-based ``j``) of degree ``p`` on [-1, 1]."""
    if not 1 <= j <= p + 1:
        raise IndexError("Bernstein index out of range")
    return comb(p, j - 1) * (1 - xi) ** (p - j + 1) * (1 + xi) ** (j - 1) / 2.0**p


def bernstein3(xi) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cubic Bernstein values and first/second derivatives on [-1, 1].

    Each returned array has shape (4, len(xi)).
    """
    x = np.atleast_1d(np.asarray(xi, dtype=float))
    a, b = 1 - x, 1 + x
    B = np.array([a**3, 3 * a**2 * b, 3 * a * b**2, b**3]) / 8.0
    dB = np.array([-3 * a**2, 3 * a * (a - 2 * b), 3 * b * (2 * a - b), 3 * b**2]) / 8.0
    d2B = np.array([6 * a, 6 * b - 12 * a, 6 * a - 12 * b, 6 * b]) / 8.0
    return B, dB, d2B


def _hermite_1d(h: float) -> np.ndarray:
    """Map ``[f0, f0', f1, f1']`` on an interval of length ``h`` to Bézier ordinates."""
    return np.array(
        [
            [1.0, 0.0, 0.0, 0.0],
            [1.0, h / 3.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, -h / 3.0],
            [0.0, 0.0, 1.0, 0.0],
        ]
    )


def _knot_data(hm: float, hp: float) -> np.ndarray:
    """Value/derivative at a double knot of the two cubic B-splines there.

    ``hm``/``hp`` are the spans to the neighboring knots (0 on a boundary).
    Rows: value, first derivative. Columns: the two functions.
    """
    s = hm + hp
    return np.array([[hp / s, hm / s], [-3.0 / s, 3.0 / s]])


class PhtMesh:
    """Immutable hierarchical T-mesh with its cubic PHT basis.

    Cells are keys ``(level, i, j)``; level-0 cells tile the square in a
    ``nu0 x nv0`` grid and each refinement splits a cell into four.
    """

    def __init__(self, nu0: int, nv0: int, nodes: frozenset, basis: dict):
        self.nu0 = int(nu0)
        self.nv0 = int(nv0)
        self._nodes = nodes
        self.active = tuple(
            sorted(c for c in nodes if (c[0] + 1, 2 * c[1], 2 * c[2]) not in nodes)
        )
        self._active_index = {c: n for n, c in enumerate(self.active)}
        self._basis = basis  # vertex -> (first index, 4x4 anchor data)
        self._xmax = self.nu0 * _UNIT
        self._ymax = self.nv0 * _UNIT
        self._tables: dict = {}
        self._tjunction: dict = {}
        self._arrays = None
        self._classify()

    # ------------------------------------------------------------------ build
    @classmethod
    def initial(cls, subdiv_u: int, subdiv_v: int) -> "PhtMesh":
        if subdiv_u < 1 or subdiv_v < 1:
            raise ValueError("subdivisions must be at least 1")
        nodes = frozenset((0, i, j) for i in range(subdiv_u) for j in range(subdiv_v))
        mesh = cls(subdiv_u, subdiv_v, nodes, {})
        mesh._basis = mesh._extend_basis({})
        return mesh

    def _classify(self) -> None:
        lengths: dict = {}
        for c in self.active:
            x0, y0, x1, y1 = self.cell_box_int(c)
            w, h = x1 - x0, y1 - y0
            for v, dirs in (
                ((x0, y0), ((_E, w), (_N, h))),
                ((x1, y0), ((_W, w), (_N, h))),
                ((x0, y1), ((_E, w), (_S, h))),
                ((x1, y1), ((_W, w), (_S, h))),
            ):
                rec = lengths.setdefault(v, [0, 0, 0, 0])
                for d, ln in dirs:
                    rec[d] = ln if rec[d] == 0 else min(rec[d], ln)
        self._lengths = lengths
        bnd, cross, tj = [], [], []
        for v in sorted(lengths):
            if self._on_boundary(v):
                bnd.append(v)
            elif all(lengths[v]):
                cross.append(v)
            else:
                tj.append(v)
        self.boundary_vertices = tuple(bnd)
        self.crossing_vertices = tuple(cross)
        self.tjunctions = tuple(tj)

    def _on_boundary(self, v) -> bool:
        return v[0] in (0, self._xmax) or v[1] in (0, self._ymax)

    def _extend_basis(self, old: dict) -> dict:
        basis = dict(old)
        nxt = 4 * len(old)
        new = [v for v in self.boundary_vertices + self.crossing_vertices if v not in old]
        for v in sorted(new):
            e, w, n, s = self._lengths[v]
            Du = _knot_data(w / self._xmax, e / self._xmax)
            Dv = _knot_data(s / self._ymax, n / self._ymax)
            data = np.zeros((4, 4))  # rows (f, f_u, f_v, f_uv); columns a + 2b
            for a in range(2):
                for b in range(2):
                    data[:, a + 2 * b] = [
                        Du[0, a] * Dv[0, b],
                        Du[1, a] * Dv[0, b],
                        Du[0, a] * Dv[1, b],
                        Du[1, a] * Dv[1, b],
                    ]
            basis[v] = (nxt, data)
            nxt += 4
        return basis

    def refine(self, marked: Iterable) -> "PhtMesh":
        """Split marked active cells (plus closure cells) by cross insertion."""
        marked = list(marked)
        for c in marked:
            if c not in self._active_index:
                raise ValueError("cell %r is not active" % (c,))
        if not marked:
            return self
        todo = list(marked)
        split = set()
        nodes = set(self._nodes)
        while todo:
            c = todo.pop()
            if c in split:
                continue
            split.add(c)
            lv, i, j = c
            for ni, nj in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
                if not (0 <= ni < self.nu0 << lv and 0 <= nj < self.nv0 << lv):
                    continue
                if (lv, ni, nj) not in nodes:
                    coarse = self._leaf_containing_index(lv, ni, nj, nodes)
                    if coarse not in split:
                        todo.append(coarse)
        for lv, i, j in split:
            for di in (0, 1):
                for dj in (0, 1):
                    nodes.add((lv + 1, 2 * i + di, 2 * j + dj))
        mesh = PhtMesh(self.nu0, self.nv0, frozenset(nodes), {})
        mesh._basis = mesh._extend_basis(self._basis)
        return mesh

    def refine_all(self) -> "PhtMesh":
        return self.refine(self.active)

    @staticmethod
    def _leaf_containing_index(lv, i, j, nodes):
        while (lv, i, j) not in nodes:
            lv, i, j = lv - 1, i // 2, j // 2
        return lv, i, j

    # ------------------------------------------------------------- geometry
    def cell_box_int(self, c) -> tuple[int, int, int, int]:
        lv, i, j = c
        s = _UNIT >> lv
        return i * s, j * s, (i + 1) * s, (j + 1) * s

    def cell_rect(self, c) -> tuple[float, float, float, float]:
        """Parametric rectangle ``(u0, v0, u1, v1)``."""
        x0, y0, x1, y1 = self.cell_box_int(c)
        return x0 / self._xmax, y0 / self._ymax, x1 / self._xmax, y1 / self._ymax

    def find_cell(self, u: float, v: float):
        """Active cell containing parametric point ``(u, v)`` (ties go up/right)."""
        x = min(max(int(u * self._xmax), 0), self._xmax - 1)
        y = min(max(int(v * self._ymax), 0), self._ymax - 1)
        return self._leaf_at_int(x, y)

    def _leaf_at_int(self, x: int, y: int):
        i, j = x // _UNIT, y // _UNIT
        c = (0, i, j)
        while (c[0] + 1, 2 * c[1], 2 * c[2]) in self._nodes:
            lv = c[0] + 1
            s = _UNIT >> lv
            c = (lv, x // s, y // s)
        return c

    # ---------------------------------------------------------------- basis
    @property
    def n_basis(self) -> int:
        return 4 * len(self._basis)

    @property
    def n_vb(self) -> int:
        return len(self.boundary_vertices)

    @property
    def n_vplus(self) -> int:
        return len(self.crossing_vertices)

    def basis_vertex(self, index: int):
        """Anchor vertex (parametric) and local slot ``a + 2b`` of a function."""
        k, slot = divmod(index, 4)
        for v, (first, _) in self._basis.items():
            if first == 4 * k:
                return (v[0] / self._xmax, v[1] / self._ymax), slot
        raise IndexError(index)

    def _vertex_rep(self, v):
        """Hermite data of all functions at a vertex: (indices, data (n, 4))."""
        if v in self._basis:
            first, data = self._basis[v]
            return np.arange(first, first + 4), data.T
        if v in self._tjunction:
            return self._tjunction[v]
        e, w, n, s = self._lengths[v]
        x, y = v
        if w == 0:
            big = self._leaf_at_int(x - 1, y)
        elif e == 0:
            big = self._leaf_at_int(x, y)
        elif s == 0:
            big = self._leaf_at_int(x, y - 1)
        else:
            big = self._leaf_at_int(x, y)
        idx, C = self.cell_table(big)
        x0, y0, x1, y1 = self.cell_box_int(big)
        su = 2.0 * (x - x0) / (x1 - x0) - 1.0
        sv = 2.0 * (y - y0) / (y1 - y0) - 1.0
        hu = (x1 - x0) / self._xmax
        hv = (y1 - y0) / self._ymax
        Bu, dBu, _ = bernstein3([su])
        Bv, dBv, _ = bernstein3([sv])
        E = np.stack(
            [
                np.outer(Bu[:, 0], Bv[:, 0]).ravel(),
                np.outer(dBu[:, 0], Bv[:, 0]).ravel() * (2.0 / hu),
                np.outer(Bu[:, 0], dBv[:, 0]).ravel() * (2.0 / hv),
                np.outer(dBu[:, 0], dBv[:, 0]).ravel() * (4.0 / (hu * hv)),
            ],
            axis=1,
        )
        rep = (idx, C @ E)
        self._tjunction[v] = rep
        return rep

    def cell_table(self, c):
        """Supported global indices and Bézier ordinate tables on an active cell.

        Returns ``(indices, C)`` with ``C`` of shape (n, 16); ordinate
        ``(j, k)`` (u index j, v index k) sits at column ``4*j + k``.
        """
        if c in self._tables:
            return self._tables[c]
        if c not in self._active_index:
            raise ValueError("cell %r is not active" % (c,))
        x0, y0, x1, y1 = self.cell_box_int(c)
        hu = (x1 - x0) / self._xmax
        hv = (y1 - y0) / self._ymax
        corners = ((x0, y0), (x1, y0), (x0, y1), (x1, y1))
        reps = [self._vertex_rep(v) for v in corners]
        idx = np.unique(np.concatenate([r[0] for r in reps]))
        pos = {g: n for n, g in enumerate(idx)}
        # F[n, 2*cu + du, 2*cv + dv]
        F = np.zeros((idx.size, 4, 4))
        for corner, (ri, rd) in enumerate(reps):
            cu, cv = corner % 2, corner // 2
            rows = [pos[g] for g in ri]
            for comp, (du, dv) in enumerate(((0, 0), (1, 0), (0, 1), (1, 1))):
                F[rows, 2 * cu + du, 2 * cv + dv] += rd[:, comp]
        Hu = _hermite_1d(hu)
        Hv = _hermite_1d(hv)
        C = np.einsum("ab,nbc,dc->nad", Hu, F, Hv).reshape(idx.size, 16)
        keep = np.any(np.abs(C) > 0.0, axis=1)
        out = (idx[keep], C[keep])
        self._tables[c] = out
        return out

    def pht_eval(self, c, s: float, t: float):
        """Values and parametric gradients of supported functions at local ``(s, t)``.

        Returns ``(indices, values, grad)`` with ``grad`` of shape (n, 2).
        """
        idx, C = self.cell_table(c)
        u0, v0, u1, v1 = self.cell_rect(c)
        Bu, dBu, _ = bernstein3([s])
        Bv, dBv, _ = bernstein3([t])
        val = C @ np.outer(Bu[:, 0], Bv[:, 0]).ravel()
        gu = C @ np.outer(dBu[:, 0], Bv[:, 0]).ravel() * (2.0 / (u1 - u0))
        gv = C @ np.outer(Bu[:, 0], dBv[:, 0]).ravel() * (2.0 / (v1 - v0))
        return idx, val, np.stack([gu, gv], axis=1)

    def cell_arrays(self):
        """Padded per-cell arrays used by vectorized assembly (cached).

        Returns a dict with ``rect`` (nc, 4), ``idx`` (nc, nmax) padded with
        -1 and ``C`` (nc, nmax, 16) padded with zeros.
        """
        if self._arrays is None:
            tabs = [self.cell_table(c) for c in self.active]
            nmax = max(t[0].size for t in tabs)
            nc = len(tabs)
            idx = -np.ones((nc, nmax), dtype=np.int64)
            C = np.zeros((nc, nmax, 16))
            for n, (ii, cc) in enumerate(tabs):
                idx[n, : ii.size] = ii
                C[n, : ii.size] = cc
            rect = np.array([self.cell_rect(c) for c in self.active])
            self._arrays = {"rect": rect, "idx": idx, "C": C}
        return self._arrays

    # ---------------------------------------------------------------- edges
    def edge_cells(self, edge: str) -> list:
        """Active cells touching a boundary edge, ordered along the edge."""
        if edge == "v0":
            cells = [c for c in self.active if self.cell_box_int(c)[1] == 0]
            key = 0
        elif edge == "v1":
            cells = [c for c in self.active if self.cell_box_int(c)[3] == self._ymax]
            key = 0
        elif edge == "u0":
            cells = [c for c in self.active if self.cell_box_int(c)[0] == 0]
            key = 1
        elif edge == "u1":
            cells = [c for c in self.active if self.cell_box_int(c)[2] == self._xmax]
            key = 1
        else:
            raise ValueError("unknown edge %r" % edge)
        return sorted(cells, key=lambda c: self.cell_box_int(c)[key])

    def edge_breakpoints(self, edge: str) -> np.ndarray:
        """Sorted parametric breakpoints along an edge in its own coordinate."""
        key = 0 if edge in ("v0", "v1") else 1
        scale = self._xmax if key == 0 else self._ymax
        pts = set()
        for c in self.edge_cells(edge):
            b = self.cell_box_int(c)
            pts.add(b[key])
            pts.add(b[key + 2])
        return np.array(sorted(pts), dtype=float) / scale

    def edge_trace_data(self, edge: str):
        """Trace-carrying functions on an edge with their Hermite trace data.

        Returns a list of ``(t, indices (2,), M (2, 2))`` per edge vertex,
        where ``t`` is the edge coordinate and ``M[r, q]`` is the value
        (r=0) or edge-tangential derivative (r=1) of function ``indices[q]``.
        """
        key = 0 if edge in ("v0", "v1") else 1
        scale = self._xmax if key == 0 else self._ymax
        out = []
        for t in self.edge_breakpoints(edge):
            ti = int(round(t * scale))
            if edge == "v0":
                v, slots = (ti, 0), (0, 1)
            elif edge == "v1":
                v, slots = (ti, self._ymax), (2, 3)
            elif edge == "u0":
                v, slots = (0, ti), (0, 2)
            else:
                v, slots = (self._xmax, ti), (1, 3)
            first, data = self._basis[v]
            comp = (0, 1) if key == 0 else (0, 2)
            M = data[np.ix_(comp, slots)]
            out.append((t, np.array([first + s for s in slots]), M))
        return out

    def edge_functions(self, edge: str) -> np.ndarray:
        """Global indices of functions with a nonzero trace on an edge."""
        return np.unique(np.concatenate([d[1] for d in self.edge_trace_data(edge)]))

    # ------------------------------------------------------------------- io
    def to_dict(self) -> dict:
        cells = []
        for c in sorted(self._nodes):
            cells.append(
                {
                    "level": c[0],
                    "rectangle": list(self.cell_rect(c)),
                    "active": c in self._active_index,
                }
            )
        return {
            "subdiv": [self.nu0, self.nv0],
            "cells": cells,
            "basis_count": self.n_basis,
            "V_b": self.n_vb,
            "V_plus": self.n_vplus,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def max_level(self) -> int:
        return max(c[0] for c in self.active)

    def __len__(self) -> int:
        return len(self.active)


def init_pht(subdiv_u: int, subdiv_v: int) -> PhtMesh:
    return PhtMesh.initial(subdiv_u, subdiv_v)


def refine(mesh: PhtMesh, marked: Iterable) -> PhtMesh:
    return mesh.refine(marked)


def pht_eval(mesh: PhtMesh, cell, local):
    return mesh.pht_eval(cell, float(local[0]), float(local[1]))
