import numpy as np
import pytest

from gift_acoustics.pht import init_pht
from gift_acoustics.solver import HelmholtzProblem, Neumann, Robin
from gift_acoustics.spline import KnotVector, NurbsPatch


def square_patch(x0=0.0, y0=0.0, size=1.0) -> NurbsPatch:
    lin = KnotVector((0.0, 0.0, 1.0, 1.0), 1)
    pts = np.array([[[x0, y0], [x0, y0 + size]], [[x0 + size, y0], [x0 + size, y0 + size]]])
    return NurbsPatch(lin, lin, pts)


def quarter_annulus(r0=1.0, r1=2.0) -> NurbsPatch:
    """Quarter annulus with u radial and v along the arc."""
    s = np.sqrt(0.5)
    q = KnotVector((0, 0, 0, 1, 1, 1), 2)
    lin = KnotVector((0.0, 0.0, 1.0, 1.0), 1)
    unit = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    pts = np.stack([r0 * unit, r1 * unit], axis=0)
    w = np.array([[1.0, s, 1.0], [1.0, s, 1.0]])
    return NurbsPatch(lin, q, pts, w)


def neumann_square(k=1.0, n=1, flux=0.0) -> HelmholtzProblem:
    bc = {(0, e): Neumann(flux) for e in ("v0", "v1", "u0", "u1")}
    return HelmholtzProblem([square_patch()], [init_pht(n, n)], k, bc)


def plane_wave_square(k=2.0, n=2) -> HelmholtzProblem:
    """Unit square with exact impedance data for ``u = exp(ikx)``."""

    def data(x, nrm):
        u = np.exp(1j * k * x[:, 0])
        return 1j * k * nrm[:, 0] * u + 1j * k * u

    bc = {(0, e): Robin(1j * k, data) for e in ("v0", "v1", "u0", "u1")}
    return HelmholtzProblem([square_patch()], [init_pht(n, n)], k, bc)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# ------------------------------------------------------------- acceptance gate
_CRITERIA: dict = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion as PASS/FAIL with a short detail line."""
    marker = request.node.get_closest_marker("criterion")
    num = marker.args[0]

    def record(ok, detail):
        _CRITERIA[num] = (bool(ok), detail)
        assert ok, "criterion %d: %s" % (num, detail)

    yield record
    if num not in _CRITERIA:
        _CRITERIA[num] = (False, "raised before reaching its check")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        ok, detail = _CRITERIA[num]
        terminalreporter.write_line("criterion %2d: %s  %s" % (num, "PASS" if ok else "FAIL", detail))
