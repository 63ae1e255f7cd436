import functools
import sys
from pathlib import Path

import numpy as np
import pytest

from singflow.blowup import build_chart, make_blowup
from singflow.geometry import PolyFunction, Surface

X, Y, Z = (PolyFunction.coordinate(i) for i in range(3))
SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def plane():
    return Surface(Z, seed_point=(0.3, 0.0, 0.0))


def cone():
    return Surface(X**2 + Y**2 - Z**2, seed_point=(0.3, 0.0, 0.3))


def cusp():
    return Surface(X**2 + Y**2 - Z**5, seed_point=(0.1**2.5, 0.0, 0.1))


def shifted_cusp():
    return Surface((X - Z**2) ** 2 + Y**2 - Z**5, seed_point=(0.01 + 0.1**2.5, 0.0, 0.1))


def quartic_cusp():
    return Surface(X**2 + Y**2 - Z**4, seed_point=(0.01, 0.0, 0.1))


SURFACES = {"plane": plane, "cone": cone, "cusp": cusp, "shifted_cusp": shifted_cusp, "quartic_cusp": quartic_cusp}


def fd_restricted_gradient(s, f, p):
    """Intrinsic finite-difference gradient: derivatives of f along surface curves.

    Points ``p + h e`` are pulled back to the surface by plain Newton steps on
    ``F`` and differentiated with a five-point stencil whose step follows the
    local curvature scale ``|grad F| / |Hess F|``.
    """
    F = s.equation
    gF = F.gradient(p)
    n = gF / np.linalg.norm(gF)
    H = np.array([[F.partial(i).partial(j)(p) for j in range(3)] for i in range(3)])
    rho = min(np.linalg.norm(gF) / max(np.linalg.norm(H), 1e-300), np.linalg.norm(p))
    a = np.cross(n, [1.0, 0, 0] if abs(n[0]) < 0.9 else [0, 1.0, 0])
    a /= np.linalg.norm(a)
    b = np.cross(n, a)

    def on_surface(q):
        for _ in range(30):
            g = F.gradient(q)
            q = q - F(q) * g / (g @ g)
        return q

    h = 1e-2 * rho
    out = np.zeros(3)
    for e in (a, b):
        vals = [f(on_surface(p + k * h * e)) for k in (-2, -1, 1, 2)]
        d = (vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * h)
        out += d * e
    return out


@functools.lru_cache(maxsize=None)
def blowup_of(name):
    return make_blowup(SURFACES[name]())


@functools.lru_cache(maxsize=None)
def chart_of(name):
    b = blowup_of(name)[0]
    return build_chart(SURFACES[name](), b)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines, key=lambda k: int(k[2:])):
        terminalreporter.write_line(lines[key])
