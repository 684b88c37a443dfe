"""B-spline and NURBS evaluation, knot insertion and Bézier extraction.

Parametric domains are normalized to [0, 1]. Element intervals are
half-open except the last one, which is closed at the final knot, so the
last basis function equals 1 at ``xi = 1``.

Boundary orientation convention used throughout the package: outer
boundaries run counterclockwise, holes clockwise. Patch maps are required
to have a positive Jacobian determinant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import GeometryError

_KNOT_TOL = 1e-12


@dataclass(frozen=True)
class KnotVector:
    """Open, nondecreasing knot vector on [0, 1] with a degree."""

    values: tuple[float, ...]
    degree: int

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        p = self.degree
        if p < 0:
            raise ValueError("degree must be nonnegative")
        if v.ndim != 1 or v.size < 2 * (p + 1):
            raise ValueError("knot vector too short for degree %d" % p)
        if np.any(np.diff(v) < 0):
            raise ValueError("knot values must be nondecreasing")
        if abs(v[0]) > _KNOT_TOL or abs(v[-1] - 1.0) > _KNOT_TOL:
            raise ValueError("knot vector must span [0, 1]")
        if np.count_nonzero(np.abs(v - v[0]) <= _KNOT_TOL) != p + 1:
            raise ValueError("first knot must appear exactly p+1 times")
        if np.count_nonzero(np.abs(v - v[-1]) <= _KNOT_TOL) != p + 1:
            raise ValueError("last knot must appear exactly p+1 times")
        for u in self.unique():
            if self.multiplicity(u) > p + 1:
                raise ValueError("knot multiplicity exceeds p+1")

    @classmethod
    def open_uniform(cls, degree: int, n_elements: int = 1) -> "KnotVector":
        inner = [i / n_elements for i in range(1, n_elements)]
        return cls(tuple([0.0] * (degree + 1) + inner + [1.0] * (degree + 1)), degree)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    @property
    def n(self) -> int:
        """Number of basis functions."""
        return len(self.values) - self.degree - 1

    def unique(self) -> np.ndarray:
        v = self.array
        keep = np.concatenate([[True], np.diff(v) > _KNOT_TOL])
        return v[keep]

    def multiplicity(self, value: float) -> int:
        return int(np.count_nonzero(np.abs(self.array - value) <= _KNOT_TOL))

    def find_span(self, xi) -> np.ndarray:
        """0-based index ``s`` with ``t[s] <= xi < t[s+1]`` (closed at xi = 1)."""
        t = self.array
        p = self.degree
        x = np.atleast_1d(np.asarray(xi, dtype=float))
        s = np.searchsorted(t, x, side="right") - 1
        return np.clip(s, p, self.n - 1)


def _as_knots(knots, degree: int | None = None) -> KnotVector:
    if isinstance(knots, KnotVector):
        return knots
    if degree is None:
        raise ValueError("degree required when knots are given as a sequence")
    return KnotVector(tuple(float(k) for k in knots), int(degree))


def _all_basis(kv: KnotVector, x: np.ndarray, order: int = 0) -> np.ndarray:
    """All ``n`` basis functions and derivatives; shape (order+1, n, len(x))."""
    t = kv.array
    p = kv.degree
    x = np.atleast_1d(np.asarray(x, dtype=float))
    m = t.size - 1
    span = kv.find_span(x)
    # degree-0 functions under the right-endpoint convention
    N = np.zeros((m, x.size))
    N[span, np.arange(x.size)] = 1.0
    tables = {0: N}
    for d in range(1, p + 1):
        Nn = np.zeros((m - d, x.size))
        for i in range(m - d):
            den1 = t[i + d] - t[i]
            den2 = t[i + d + 1] - t[i + 1]
            acc = np.zeros(x.size)
            if den1 > 0:
                acc += (x - t[i]) / den1 * N[i]
            if den2 > 0:
                acc += (t[i + d + 1] - x) / den2 * N[i + 1]
            Nn[i] = acc
        N = Nn
        tables[d] = N
    out = np.zeros((order + 1, kv.n, x.size))
    out[0] = tables[p]
    for k in range(1, order + 1):
        if k > p:
            break
        # map degree p-k functions to the k-th derivative of degree p ones
        D = np.eye(m - (p - k))
        for d in range(p - k + 1, p + 1):
            E = np.zeros((m - d, m - d + 1))
            for i in range(m - d):
                den1 = t[i + d] - t[i]
                den2 = t[i + d + 1] - t[i + 1]
                if den1 > 0:
                    E[i, i] += d / den1
                if den2 > 0:
                    E[i, i + 1] -= d / den2
            D = E @ D
        out[k] = D @ tables[p - k]
    return out


def bspline_basis(knots, i: int, xi: float, degree: int | None = None) -> float:
    """Value of ``N_{i,p}(xi)`` with a 1-based index ``i``."""
    kv = _as_knots(knots, degree)
    if not 1 <= i <= kv.n:
        raise IndexError("basis index %d out of range 1..%d" % (i, kv.n))
    if not -_KNOT_TOL <= xi <= 1 + _KNOT_TOL:
        raise ValueError("xi must lie in [0, 1]")
    return float(_all_basis(kv, np.array([xi]))[0, i - 1, 0])


def bspline_basis_derivs(knots, xi: float, order: int = 1, degree: int | None = None):
    """Nonzero basis values and derivatives at ``xi``.

    Returns
    -------
    span : int
        0-based index of the first nonzero function.
    table : ndarray, shape (order+1, p+1)
        ``table[k, j]`` is the k-th derivative of function ``span + j``.
    """
    if order not in (0, 1, 2):
        raise ValueError("derivative order must be 0, 1 or 2")
    kv = _as_knots(knots, degree)
    p = kv.degree
    s = int(kv.find_span(xi)[0])
    full = _all_basis(kv, np.array([float(xi)]), order)[:, :, 0]
    return s - p, full[:, s - p : s + 1]


def bezier_extract(knots, degree: int | None = None) -> list[np.ndarray]:
    """Element extraction operators by knot insertion to full multiplicity.

    Operator ``E`` of shape (p+1, p+1) holds Bernstein ordinates by row:
    ``N_{a+j}(xi) = sum_k E[k, j] B_k(xi)`` on the element, where ``a`` is the
    first function supported there and ``B_k`` are the Bernstein polynomials
    mapped onto it. Rows sum to 1.
    """
    kv = _as_knots(knots, degree)
    p = kv.degree
    # inserting with identity "control points" records the refinement matrix
    T = np.eye(kv.n)
    fine = kv
    for u in kv.unique()[1:-1]:
        r = p - fine.multiplicity(u)
        if r > 0:
            fine, T = _boehm(fine, T, float(u), r)
    ops = []
    for e, left in enumerate(kv.unique()[:-1]):
        a = int(kv.find_span(left)[0]) - p
        ops.append(T[e * p : e * p + p + 1, a : a + p + 1].copy())
    return ops


def bernstein01(p: int, x) -> np.ndarray:
    """Bernstein polynomials of degree ``p`` on [0, 1]; shape (p+1, len(x))."""
    from math import comb

    x = np.atleast_1d(np.asarray(x, dtype=float))
    return np.array([comb(p, k) * x**k * (1 - x) ** (p - k) for k in range(p + 1)])


class NurbsCurve:
    """Planar NURBS curve."""

    def __init__(self, knots: KnotVector, points, weights=None):
        self.knots = knots
        self.points = np.asarray(points, dtype=float).reshape(-1, 2)
        n = self.points.shape[0]
        self.weights = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
        if n != knots.n or self.weights.shape != (n,):
            raise ValueError("control point count does not match the knot vector")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be strictly positive")

    @property
    def degree(self) -> int:
        return self.knots.degree

    def derivatives(self, xi, order: int = 2) -> np.ndarray:
        """Point and parametric derivatives; shape (order+1, len(xi), 2)."""
        if order > 2:
            raise ValueError("derivative order must be at most 2")
        x = np.atleast_1d(np.asarray(xi, dtype=float))
        N = _all_basis(self.knots, x, order)  # (order+1, n, npts)
        w = self.weights
        A = np.einsum("knq,n,nd->kqd", N, w, self.points)
        W = np.einsum("knq,n->kq", N, w)
        C = np.empty_like(A)
        C[0] = A[0] / W[0][:, None]
        if order >= 1:
            C[1] = (A[1] - W[1][:, None] * C[0]) / W[0][:, None]
        if order >= 2:
            C[2] = (A[2] - 2 * W[1][:, None] * C[1] - W[2][:, None] * C[0]) / W[0][:, None]
        return C

    def evaluate(self, xi) -> np.ndarray:
        return self.derivatives(xi, 0)[0]

    def insert_knot(self, value: float, times: int = 1) -> "NurbsCurve":
        kv, Pw = _boehm(self.knots, _homog(self.points, self.weights), value, times)
        pts, w = _dehomog(Pw)
        return NurbsCurve(kv, pts, w)

    def elevate_bezier(self, times: int = 1) -> "NurbsCurve":
        """Degree elevation of a single-segment (Bezier) curve."""
        if len(self.knots.unique()) != 2:
            raise ValueError("degree elevation is implemented for Bezier curves only")
        Pw = _homog(self.points, self.weights)
        p = self.degree
        for _ in range(times):
            a = np.arange(1, p + 1)[:, None] / (p + 1)
            mid = a * Pw[:-1] + (1 - a) * Pw[1:]
            Pw = np.concatenate([Pw[:1], mid, Pw[-1:]])
            p += 1
        pts, w = _dehomog(Pw)
        return NurbsCurve(KnotVector((0.0,) * (p + 1) + (1.0,) * (p + 1), p), pts, w)

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "knots": list(self.knots.values),
            "points": self.points.tolist(),
            "weights": self.weights.tolist(),
        }


def curve_curvature(curve: NurbsCurve, xi) -> np.ndarray:
    """Signed curvature ``(x'y'' - y'x'') / |x'|^3`` in the curve's orientation."""
    D = curve.derivatives(xi, 2)
    d1, d2 = D[1], D[2]
    speed = np.hypot(d1[:, 0], d1[:, 1])
    if np.any(speed <= 1e-12):
        raise GeometryError("degenerate tangent in curvature evaluation")
    return (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / speed**3


def _homog(points: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return np.concatenate([points * weights[..., None], weights[..., None]], axis=-1)


def _dehomog(Pw: np.ndarray):
    w = Pw[..., -1]
    return Pw[..., :-1] / w[..., None], w


def _boehm(kv: KnotVector, Pw: np.ndarray, value: float, times: int):
    """Insert ``value`` ``times`` times along axis 0 of homogeneous points."""
    p = kv.degree
    if times < 0:
        raise ValueError("times must be nonnegative")
    if not 0.0 < value < 1.0:
        raise ValueError("cannot insert a boundary knot")
    if kv.multiplicity(value) + times > p:
        raise ValueError("knot multiplicity would exceed the degree")
    t = list(kv.values)
    Q = np.array(Pw, dtype=float)
    for _ in range(times):
        ta = np.asarray(t)
        k = int(np.searchsorted(ta, value, side="right") - 1)
        newQ = np.empty((Q.shape[0] + 1,) + Q.shape[1:])
        for i in range(Q.shape[0] + 1):
            if i <= k - p:
                newQ[i] = Q[i]
            elif i >= k + 1:
                newQ[i] = Q[i - 1]
            else:
                a = (value - ta[i]) / (ta[i + p] - ta[i])
                newQ[i] = a * Q[i] + (1 - a) * Q[i - 1]
        Q = newQ
        t.insert(k + 1, float(value))
    return KnotVector(tuple(t), p), Q


class NurbsPatch:
    """Tensor-product NURBS surface map from [0,1]^2 into the plane.

    ``points`` has shape (n, m, 2) with the first index along ``u``.
    """

    def __init__(self, knots_u: KnotVector, knots_v: KnotVector, points, weights=None):
        self.knots_u = knots_u
        self.knots_v = knots_v
        self.points = np.asarray(points, dtype=float)
        n, m = knots_u.n, knots_v.n
        if self.points.shape != (n, m, 2):
            raise ValueError(
                "control net shape %s does not match knot vectors (%d, %d, 2)"
                % (self.points.shape, n, m)
            )
        self.weights = np.ones((n, m)) if weights is None else np.asarray(weights, dtype=float)
        if self.weights.shape != (n, m):
            raise ValueError("weights shape does not match the control net")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be strictly positive")

    @property
    def degrees(self) -> tuple[int, int]:
        return self.knots_u.degree, self.knots_v.degree

    def copy_with(self, points=None, weights=None) -> "NurbsPatch":
        return NurbsPatch(
            self.knots_u,
            self.knots_v,
            self.points if points is None else points,
            self.weights if weights is None else weights,
        )

    def basis(self, xi, eta):
        """Rational basis values and first derivatives at paired points.

        Returns arrays of shape (npts, n, m): ``R``, ``dR/dxi``, ``dR/deta``.
        """
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        Nu = _all_basis(self.knots_u, xi, 1)
        Nv = _all_basis(self.knots_v, eta, 1)
        w = self.weights
        B = np.einsum("iq,jq->qij", Nu[0], Nv[0]) * w
        Bu = np.einsum("iq,jq->qij", Nu[1], Nv[0]) * w
        Bv = np.einsum("iq,jq->qij", Nu[0], Nv[1]) * w
        W = B.sum(axis=(1, 2))[:, None, None]
        Wu = Bu.sum(axis=(1, 2))[:, None, None]
        Wv = Bv.sum(axis=(1, 2))[:, None, None]
        R = B / W
        return R, (Bu - R * Wu) / W, (Bv - R * Wv) / W

    def map(self, xi, eta, check: bool = False):
        """Physical points and Jacobians at paired parametric points.

        Returns ``x`` of shape (npts, 2) and ``J`` of shape (npts, 2, 2) with
        ``J[:, :, 0] = dx/dxi`` and ``J[:, :, 1] = dx/deta``.
        """
        xi = np.atleast_1d(np.asarray(xi, dtype=float)).ravel()
        eta = np.atleast_1d(np.asarray(eta, dtype=float)).ravel()
        Nu = _all_basis(self.knots_u, xi, 1)
        Nv = _all_basis(self.knots_v, eta, 1)
        Pw = self.points * self.weights[..., None]
        # contract v first: (k, n, q, d)
        Av = np.einsum("jq,ijd->iqd", Nv[0], Pw)
        Avv = np.einsum("jq,ijd->iqd", Nv[1], Pw)
        wv = np.einsum("jq,ij->iq", Nv[0], self.weights)
        wvv = np.einsum("jq,ij->iq", Nv[1], self.weights)
        A = np.einsum("iq,iqd->qd", Nu[0], Av)
        Au = np.einsum("iq,iqd->qd", Nu[1], Av)
        Ae = np.einsum("iq,iqd->qd", Nu[0], Avv)
        W = np.einsum("iq,iq->q", Nu[0], wv)[:, None]
        Wu = np.einsum("iq,iq->q", Nu[1], wv)[:, None]
        We = np.einsum("iq,iq->q", Nu[0], wvv)[:, None]
        x = A / W
        J = np.empty((xi.size, 2, 2))
        J[:, :, 0] = (Au - x * Wu) / W
        J[:, :, 1] = (Ae - x * We) / W
        if check:
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            if np.any(det <= 0):
                raise GeometryError("nonpositive Jacobian determinant in patch map")
        return x, J

    def evaluate(self, xi, eta) -> np.ndarray:
        return self.map(xi, eta)[0]

    def boundary_curve(self, edge: str) -> NurbsCurve:
        """Edge curve: ``'v0'`` (eta=0), ``'v1'``, ``'u0'`` (xi=0) or ``'u1'``."""
        if edge == "v0":
            return NurbsCurve(self.knots_u, self.points[:, 0], self.weights[:, 0])
        if edge == "v1":
            return NurbsCurve(self.knots_u, self.points[:, -1], self.weights[:, -1])
        if edge == "u0":
            return NurbsCurve(self.knots_v, self.points[0], self.weights[0])
        if edge == "u1":
            return NurbsCurve(self.knots_v, self.points[-1], self.weights[-1])
        raise ValueError("unknown edge %r" % edge)

    def to_dict(self) -> dict:
        return {
            "degree_u": self.knots_u.degree,
            "degree_v": self.knots_v.degree,
            "knots_u": list(self.knots_u.values),
            "knots_v": list(self.knots_v.values),
            "points": self.points.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NurbsPatch":
        ku = KnotVector(tuple(float(v) for v in d["knots_u"]), int(d["degree_u"]))
        kv = KnotVector(tuple(float(v) for v in d["knots_v"]), int(d["degree_v"]))
        return cls(ku, kv, np.asarray(d["points"], dtype=float), np.asarray(d["weights"], dtype=float))


def nurbs_basis_2d(patch: NurbsPatch, xi: float, eta: float):
    """Nonzero rational basis values and first derivatives at one point.

    Returns ``(indices, R, dR_dxi, dR_deta)`` where ``indices`` is a list of
    0-based (i, j) control-net positions.
    """
    if not (0 <= xi <= 1 and 0 <= eta <= 1):
        raise ValueError("(xi, eta) must lie in the unit square")
    R, Ru, Rv = patch.basis([xi], [eta])
    pu, pv = patch.degrees
    su = int(patch.knots_u.find_span(xi)[0]) - pu
    sv = int(patch.knots_v.find_span(eta)[0]) - pv
    idx = [(su + a, sv + b) for a in range(pu + 1) for b in range(pv + 1)]
    ii = np.array([i for i, _ in idx])
    jj = np.array([j for _, j in idx])
    return idx, R[0, ii, jj], Ru[0, ii, jj], Rv[0, ii, jj]


def surface_point_and_jacobian(patch: NurbsPatch, xi: float, eta: float):
    """Single-point map evaluation; raises on a nonpositive Jacobian."""
    x, J = patch.map([xi], [eta], check=True)
    return x[0], J[0]


def insert_knot(patch: NurbsPatch, direction: str, value: float, times: int = 1) -> NurbsPatch:
    """Boehm knot insertion in direction ``'u'`` or ``'v'``."""
    Pw = _homog(patch.points, patch.weights)
    if direction == "u":
        kv, Q = _boehm(patch.knots_u, Pw, value, times)
        pts, w = _dehomog(Q)
        return NurbsPatch(kv, patch.knots_v, pts, w)
    if direction == "v":
        kv, Q = _boehm(patch.knots_v, np.swapaxes(Pw, 0, 1), value, times)
        pts, w = _dehomog(np.swapaxes(Q, 0, 1))
        return NurbsPatch(patch.knots_u, kv, pts, w)
    raise ValueError("direction must be 'u' or 'v'")


def ruled_patch(curve0: NurbsCurve, curve1: NurbsCurve) -> NurbsPatch:
    """Patch linear in ``v`` between two curves sharing a knot vector."""
    if curve0.knots != curve1.knots:
        raise ValueError("ruled patch needs curves on the same knot vector")
    pts = np.stack([curve0.points, curve1.points], axis=1)
    w = np.stack([curve0.weights, curve1.weights], axis=1)
    return NurbsPatch(curve0.knots, KnotVector((0.0, 0.0, 1.0, 1.0), 1), pts, w)


def arc_curve(center: Sequence[float], radius: float, theta0: float, theta1: float) -> NurbsCurve:
    """Exact circular arc (sweep below pi) as a rational quadratic."""
    sweep = theta1 - theta0
    if not 0 < abs(sweep) < np.pi:
        raise ValueError("arc sweep must be in (0, pi)")
    c = np.asarray(center, dtype=float)
    half = 0.5 * sweep
    mid = theta0 + half
    p0 = c + radius * np.array([np.cos(theta0), np.sin(theta0)])
    p2 = c + radius * np.array([np.cos(theta1), np.sin(theta1)])
    p1 = c + radius / np.cos(half) * np.array([np.cos(mid), np.sin(mid)])
    return NurbsCurve(KnotVector((0, 0, 0, 1, 1, 1), 2), [p0, p1, p2], [1.0, np.cos(half), 1.0])


def line_curve(p0, p1, knots: KnotVector) -> NurbsCurve:
    """Straight segment with linear parameterization on a given knot vector."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    t = knots.array
    p = knots.degree
    greville = np.array([t[i + 1 : i + p + 1].mean() if p > 0 else t[i] for i in range(knots.n)])
    pts = p0[None, :] + greville[:, None] * (p1 - p0)[None, :]
    return NurbsCurve(knots, pts)


def circle_curve(center: Sequence[float], radius: float) -> NurbsCurve:
    """Full counter-clockwise circle from four rational quadratic quarters."""
    c = np.asarray(center, dtype=float)
    s = np.sqrt(0.5)
    unit = np.array([[1, 0], [1, 1], [0, 1], [-1, 1], [-1, 0], [-1, -1], [0, -1], [1, -1], [1, 0]], dtype=float)
    w = np.array([1, s, 1, s, 1, s, 1, s, 1])
    knots = KnotVector((0, 0, 0, 0.25, 0.25, 0.5, 0.5, 0.75, 0.75, 1, 1, 1), 2)
    return NurbsCurve(knots, c + radius * unit, w)
