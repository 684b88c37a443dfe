"""Special functions and closed-form acoustic reference solutions.

Bessel and Hankel values come from :mod:`scipy.special`; this module adds
the derivative identities, the plane-wave expansion and the exact solution
for a plane wave scattered by a rigid cylinder inside a circle carrying the
first-order BGT absorbing condition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import NumericalError

MAX_ORDER = 60


def _check(n, x):
    n = np.asarray(n)
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("argument must be positive")
    if np.any((n < 0) | (n > MAX_ORDER)):
        raise ValueError("order must lie in 0..%d" % MAX_ORDER)
    return n, x


def bessel_j(n, x):
    n, x = _check(n, x)
    return special.jv(n, x)


def bessel_y(n, x):
    n, x = _check(n, x)
    return special.yv(n, x)


def hankel1(n, x):
    n, x = _check(n, x)
    return special.hankel1(n, x)


def hankel2(n, x):
    n, x = _check(n, x)
    return special.hankel2(n, x)


def _deriv(f, n, x):
    # Z_n' = (Z_{n-1} - Z_{n+1}) / 2, with Z_{-1} = -Z_1
    n = np.asarray(n)
    lower = np.where(n == 0, -f(1, x), f(np.abs(n - 1), x))
    return 0.5 * (lower - f(n + 1, x))


def bessel_j_deriv(n, x):
    n, x = _check(n, x)
    return _deriv(special.jv, n, x)


def bessel_y_deriv(n, x):
    n, x = _check(n, x)
    return _deriv(special.yv, n, x)


def hankel1_deriv(n, x):
    n, x = _check(n, x)
    return _deriv(special.hankel1, n, x)


def hankel2_deriv(n, x):
    n, x = _check(n, x)
    return _deriv(special.hankel2, n, x)


def plane_wave_mode(n: int, k: float, r):
    """Coefficient of ``cos(n theta)`` in ``exp(i k r cos theta)``."""
    kappa = 1.0 if n == 0 else 2.0
    return kappa * (1j**n) * bessel_j(n, k * np.asarray(r, dtype=float))


@dataclass(frozen=True)
class CylinderConfig:
    a: float
    R: float = 2.0
    k: float = 0.25 * np.pi

    def __post_init__(self):
        if not 0 < self.a < self.R:
            raise ValueError("need 0 < a < R")
        if self.k <= 0:
            raise ValueError("wavenumber must be positive")

    def default_modes(self) -> int:
        return max(30, int(np.ceil(self.k * self.R)) + 20)


@dataclass(frozen=True)
class ModeCoefficients:
    """Per-mode coefficients of ``u = sum (a_n H1_n + b_n H2_n)(kr) cos(n theta)``.

    Stored as ``c_n J_n + d_n Y_n`` (``c = a + b``, ``d = i(a - b)``), which
    stays well conditioned for high orders at small arguments.
    """

    c: np.ndarray
    d: np.ndarray
    k: float

    @property
    def a(self) -> np.ndarray:
        return 0.5 * (self.c - 1j * self.d)

    @property
    def b(self) -> np.ndarray:
        return 0.5 * (self.c + 1j * self.d)

    @property
    def n_modes(self) -> int:
        return self.c.size

    def radial(self, r) -> np.ndarray:
        """Mode amplitudes at radii; shape (n_modes, len(r))."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        n = np.arange(self.n_modes)[:, None]
        kr = self.k * r[None, :]
        return self.c[:, None] * special.jv(n, kr) + self.d[:, None] * special.yv(n, kr)

    def radial_deriv(self, r) -> np.ndarray:
        r = np.atleast_1d(np.asarray(r, dtype=float))
        n = np.arange(self.n_modes)[:, None]
        kr = self.k * r[None, :]
        return self.k * (
            self.c[:, None] * _deriv(special.jv, n, kr) + self.d[:, None] * _deriv(special.yv, n, kr)
        )

    def field(self, r, theta) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        theta = np.asarray(theta, dtype=float)
        shape = np.broadcast(r, theta).shape
        rr = np.broadcast_to(r, shape).ravel()
        tt = np.broadcast_to(theta, shape).ravel()
        n = np.arange(self.n_modes)[:, None]
        return np.sum(self.radial(rr) * np.cos(n * tt[None, :]), axis=0).reshape(shape)

    def field_xy(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.field(np.hypot(x[..., 0], x[..., 1]), np.arctan2(x[..., 1], x[..., 0]))


def _mode_rows(cfg: CylinderConfig, n: int, f):
    """Neumann and BGT1 row entries for one cylinder function ``f``."""
    k, a, R = cfg.k, cfg.a, cfg.R
    c = 1j * k + (2 * n - 1) / (2 * R)
    lower = -f(1, k * R) if n == 0 else f(n - 1, k * R)
    return k * _deriv(f, n, k * a), k * lower - c * f(n, k * R)


def mode_system(cfg: CylinderConfig, n: int):
    """2x2 matrix and right side for mode ``n`` in the Hankel basis.

    Row 0 is the Neumann condition at ``r = a``, row 1 the BGT1 condition at
    ``r = R``; columns multiply ``a_n`` and ``b_n``.
    """
    kappa = 1.0 if n == 0 else 2.0
    A = np.empty((2, 2), dtype=complex)
    A[:, 0] = _mode_rows(cfg, n, special.hankel1)
    A[:, 1] = _mode_rows(cfg, n, special.hankel2)
    rhs = np.array([-kappa * (1j**n) * cfg.k * bessel_j_deriv(n, cfg.k * cfg.a), 0.0], dtype=complex)
    return A, rhs


def cylinder_exact(cfg: CylinderConfig, n_modes: int | None = None) -> ModeCoefficients:
    """Exact scattered field for the cylinder with BGT1 on the outer circle."""
    N = cfg.default_modes() if n_modes is None else int(n_modes)
    if N > MAX_ORDER:
        raise ValueError("at most %d modes are supported" % MAX_ORDER)
    c = np.empty(N + 1, dtype=complex)
    d = np.empty(N + 1, dtype=complex)
    for n in range(N + 1):
        kappa = 1.0 if n == 0 else 2.0
        A = np.empty((2, 2), dtype=complex)
        A[:, 0] = _mode_rows(cfg, n, special.jv)
        A[:, 1] = _mode_rows(cfg, n, special.yv)
        rhs = np.array([-kappa * (1j**n) * cfg.k * bessel_j_deriv(n, cfg.k * cfg.a), 0.0], dtype=complex)
        scale = np.abs(A).max(axis=0)
        As = A / scale[None, :]
        det = As[0, 0] * As[1, 1] - As[0, 1] * As[1, 0]
        if not np.isfinite(det) or abs(det) < 1e-14:
            raise NumericalError("singular mode system at n = %d" % n)
        sol = np.linalg.solve(As, rhs) / scale
        c[n], d[n] = sol
    return ModeCoefficients(c, d, cfg.k)


def exact_objective(cfg: CylinderConfig, n_radial: int = 64, n_angular: int | None = None) -> float:
    """``-int |u|^2`` over the annulus; Gauss in r, trapezoid in theta."""
    modes = cylinder_exact(cfg)
    if n_angular is None:
        n_angular = 4 * modes.n_modes + 8
    # split the radial interval so the Gauss rule resolves oscillation
    n_sub = max(1, int(np.ceil(cfg.k * (cfg.R - cfg.a) / 2.0)))
    gx, gw = np.polynomial.legendre.leggauss(n_radial)
    edges = np.linspace(cfg.a, cfg.R, n_sub + 1)
    r = np.concatenate([0.5 * (e1 - e0) * gx + 0.5 * (e1 + e0) for e0, e1 in zip(edges[:-1], edges[1:])])
    wr = np.concatenate([0.5 * (e1 - e0) * gw for e0, e1 in zip(edges[:-1], edges[1:])])
    theta = 2 * np.pi * np.arange(n_angular) / n_angular
    n = np.arange(modes.n_modes)[:, None]
    amp = modes.radial(r)  # (modes, nr)
    u = np.cos(n * theta[None, :]).T @ amp  # (ntheta, nr)
    ring = np.sum(np.abs(u) ** 2, axis=0) * (2 * np.pi / n_angular)
    return -float(np.sum(ring * r * wr))


def greens_halfplane(x, x0, k: float):
    """Half-plane Green's function with a rigid line ``y = 0`` and its gradient.

    Returns ``(G, grad)`` where ``grad`` has a trailing axis of length 2.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x0 = np.asarray(x0, dtype=float)
    img = np.array([x0[0], -x0[1]])
    G = np.zeros(x.shape[0], dtype=complex)
    grad = np.zeros((x.shape[0], 2), dtype=complex)
    for src in (x0, img):
        d = x - src[None, :]
        r = np.hypot(d[:, 0], d[:, 1])
        if np.any(r < 1e-14):
            raise ValueError("Green's function evaluated at its singular point")
        G += -0.25j * special.hankel1(0, k * r)
        # d/dr H0(kr) = -k H1(kr)
        dGdr = 0.25j * k * special.hankel1(1, k * r)
        grad += (dGdr / r)[:, None] * d
    return G, grad
