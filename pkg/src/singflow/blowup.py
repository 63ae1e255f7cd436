"""Tangent cones, the exponents nu and e, opening blow-ups and cylinder charts.

An opening blow-up comes in two flavours:

* ``OTC`` (open tangent cone): polar coordinates ``p = r * w`` with ``w`` on
  the unit sphere; the chart radius ``r`` is the slice value ``|p|``.
* ``CTC`` (cuspidal tangent cone): in coordinates adapted to the cone
  direction, ``beta(y, w) = (w**(e*N) * y + theta(w), w**N)``. The chart
  radius is the blow-up height ``w``, so the ambient height is ``r**N``.

Charts are built numerically: the top slice is labelled by normalized arc
length, and each label is carried to lower slices along the retraction
field of the slicing function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.optimize import brentq, minimize_scalar
from scipy.spatial.distance import directed_hausdorff

from .errors import BlowupError, ChartError
from .geometry import (
    HeightSlicer,
    RadialSlicer,
    Surface,
    correct_to_slice,
    retraction_field,
    retraction_flow,
    slice_curve,
)
from .series import GenSeries, SeriesFit, fit_series_detailed, leading
from .util import pmap, rotation_to_z

__all__ = [
    "TangentConeReport",
    "ExponentEstimate",
    "Branch",
    "OpeningBlowup",
    "AccumulationSet",
    "CylinderChart",
    "classify_tangent_cone",
    "estimate_nu",
    "estimate_e",
    "estimate_exponent",
    "find_branch",
    "make_blowup",
    "accumulation_set",
    "build_chart",
]

CTC_THRESHOLD = 0.05
MAX_N = 16


@dataclass
class TangentConeReport:
    kind: str
    direction: np.ndarray | None
    secant_spread: float
    spreads: list = field(default_factory=list)
    levels: list = field(default_factory=list)

    @property
    def rotation(self) -> np.ndarray:
        return np.eye(3) if self.direction is None else rotation_to_z(self.direction)


def _slices(s: Surface, levels, n_points: int):
    levels = np.asarray(levels, dtype=float)
    starts = retraction_flow(s, s.seed(), levels)
    return pmap(lambda i: slice_curve(s, float(levels[i]), n_points, start=starts[i]), range(len(levels)))


def _aitken(seq):
    a, b, c = (np.asarray(x, dtype=float) for x in seq[-3:])
    den = (c - b) - (b - a)
    safe = np.abs(den) > 1e-15
    out = c.copy()
    out[safe] = c[safe] - (c[safe] - b[safe]) ** 2 / den[safe]
    return out


def classify_tangent_cone(s: Surface, ctc_threshold: float = CTC_THRESHOLD, n_points: int = 128) -> TangentConeReport:
    """Decide OTC / CTC from secant directions on the slices at 1e-2, 1e-3, 1e-4 of epsilon0."""
    rad = s.with_slicer(RadialSlicer())
    levels = s.epsilon0 * np.array([1e-2, 1e-3, 1e-4])
    spreads, means = [], []
    for c in _slices(rad, levels, n_points):
        sec = c / np.linalg.norm(c, axis=-1, keepdims=True)
        cosmin = float(np.clip(np.min(sec @ sec.T), -1.0, 1.0))
        spreads.append(math.acos(cosmin))
        mu = sec.mean(axis=0)
        means.append(mu / np.linalg.norm(mu))
    is_ctc = spreads[-1] < ctc_threshold and spreads[-1] < spreads[-2]
    direction = None
    if is_ctc:
        # secant directions converge geometrically in the level; extrapolate
        d = _aitken(means)
        d[np.abs(d) < 1e-6] = 0.0
        direction = d / np.linalg.norm(d)
    return TangentConeReport("CTC" if is_ctc else "OTC", direction, spreads[-1], spreads, list(levels))


# ---------------------------------------------------------------------------
# exponents


class _ClosedSpline:
    """Periodic interpolant of a closed slice polyline, parameter = point index."""

    def __init__(self, pts):
        n = len(pts)
        self.n = n
        self.spline = CubicSpline(np.arange(n + 1), np.vstack([pts, pts[:1]]), bc_type="periodic", axis=0)

    def __call__(self, u):
        return self.spline(np.mod(u, self.n))


def _refine(s, level, cs, k, obj):
    """Minimize ``obj`` over slice points near grid index ``k``."""
    fun = lambda u: obj(correct_to_slice(s, cs(u), level))
    res = minimize_scalar(fun, bounds=(k - 1.0, k + 1.0), method="bounded", options={"xatol": 1e-12})
    u = res.x if res.fun <= fun(k) else float(k)
    return correct_to_slice(s, cs(u), level), u


def _stationary(s, level, cs, k, R, center=None):
    """Critical point of ``|x - center|`` on the slice near index ``k``.

    Solved as the root of ``(x - center) . T`` with T the slice tangent, which
    locates the point to rounding accuracy (minimizing only reaches the
    square root of it).
    """
    center = np.zeros(2) if center is None else center

    def g(u, scaled=False):
        q = correct_to_slice(s, cs(u), level)
        t = np.cross(s.equation.gradient(q), s.slicer.grad(q))
        a, tt = (R @ q)[:2] - center, (R @ t)[:2]
        val = float(a @ tt)
        return val / max(np.linalg.norm(a) * np.linalg.norm(tt), 1e-300) if scaled else val

    lo, mid, hi = g(k - 1.0), g(float(k)), g(k + 1.0)
    if max(abs(g(k - 1.0, True)), abs(g(float(k), True)), abs(g(k + 1.0, True))) < 1e-10:
        u = float(k)  # distance is flat along the slice; every point is critical
    elif mid == 0:
        u = float(k)
    elif lo * mid < 0:
        u = brentq(g, k - 1.0, float(k), xtol=1e-14, rtol=1e-15)
    elif mid * hi < 0:
        u = brentq(g, float(k), k + 1.0, xtol=1e-14, rtol=1e-15)
    else:
        sign = 1.0 if np.linalg.norm((R @ cs(float(k)))[:2] - center) < np.linalg.norm((R @ cs(k + 0.5))[:2] - center) else -1.0
        return _refine(s, level, cs, k, lambda q: sign * float(np.linalg.norm((R @ q)[:2] - center)))[0]
    return correct_to_slice(s, cs(u), level)


@dataclass
class ExponentEstimate:
    value: Fraction
    fit: SeriesFit
    levels: np.ndarray
    samples: np.ndarray


def _exponent_levels(eps0: float, n_levels: int = 13, decades: float = 3.0):
    return eps0 * np.geomspace(2e-5, 2e-5 * 10**decades, n_levels)


def _adapted(s: Surface, report: TangentConeReport | None):
    if report is None:
        report = classify_tangent_cone(s)
    if report.kind != "CTC":
        raise BlowupError("coordinates not adapted: the tangent cone is not cuspidal")
    return s.with_slicer(HeightSlicer(tuple(report.direction))), report.rotation


def _slice_radius(s, level, curve, R):
    xy = (curve @ R.T)[:, :2]
    k = int(np.argmax(np.hypot(xy[:, 0], xy[:, 1])))
    p = _stationary(s, level, _ClosedSpline(curve), k, R)
    return float(np.hypot(*(R @ p)[:2]))


def _slice_diameter(s, level, curve, R, rounds: int = 3):
    xy = (curve @ R.T)[:, :2]
    d = np.linalg.norm(xy[:, None, :] - xy[None, :, :], axis=-1)
    i, j = np.unravel_index(int(np.argmax(d)), d.shape)
    cs = _ClosedSpline(curve)
    pi, pj = curve[i], curve[j]
    # alternate: each end is the farthest point from the other
    for _ in range(rounds):
        pi = _stationary(s, level, cs, i, R, center=(R @ pj)[:2])
        pj = _stationary(s, level, cs, j, R, center=(R @ pi)[:2])
    return float(np.linalg.norm((R @ pi)[:2] - (R @ pj)[:2]))


def estimate_exponent(s: Surface, which: str, report=None, n_levels: int = 13, n_points: int = 256,
                      cap: int = 64, decades: float = 3.0) -> ExponentEstimate:
    """Fit the slice radius (``which='nu'``) or slice diameter (``which='e'``) against the height."""
    sa, R = _adapted(s, report)
    levels = _exponent_levels(s.epsilon0, n_levels, decades)
    curves = _slices(sa, levels, n_points)
    measure = _slice_radius if which == "nu" else _slice_diameter
    h = np.array(pmap(lambda i: measure(sa, float(levels[i]), curves[i], R), range(len(levels))))
    fit = fit_series_detailed(levels, h, max_terms=4, exponent_denominator_cap=cap)
    if fit.series.is_zero():
        raise BlowupError(f"slice {which} vanishes identically")
    value = leading(fit.series)[0]
    if value <= 1:
        raise BlowupError(f"coordinates not adapted: fitted {which} = {value} <= 1")
    return ExponentEstimate(value, fit, levels, h)


def estimate_nu(s: Surface, report=None, **kw) -> Fraction:
    return estimate_exponent(s, "nu", report, **kw).value


def estimate_e(s: Surface, report=None, **kw) -> Fraction:
    return estimate_exponent(s, "e", report, **kw).value


# ---------------------------------------------------------------------------
# branch and blow-up


@dataclass
class Branch:
    """Half-branch ``z -> (x1(z), x2(z), z)`` in adapted coordinates.

    ``theta`` is the same curve in the blow-up height ``w = z**(1/N)``,
    with last component ``w**N``.
    """

    series_z: tuple
    theta: tuple
    N: int
    m: int | None
    fits: tuple = ()


def _branch_point(s, level, curve, R, tie_tol=1e-9):
    xy = (curve @ R.T)[:, :2]
    rad = np.hypot(xy[:, 0], xy[:, 1])
    cs = _ClosedSpline(curve)
    if rad.max() - rad.min() <= tie_tol * rad.max():
        # argmin not unique: take the point at angle 0 about the slice centroid
        c = xy.mean(axis=0)
        rel = xy - c
        n = len(rel)
        cand = [k for k in range(n) if rel[k, 0] > 0 and np.sign(rel[k, 1]) != np.sign(rel[(k + 1) % n, 1])]
        if not cand:
            k = int(np.argmax(rel[:, 0]))
            return curve[k]
        k = min(cand, key=lambda k: abs(rel[k, 1]))
        g = lambda u: float((R @ correct_to_slice(s, cs(u), level))[1] - c[1])
        if g(k) == 0:
            return correct_to_slice(s, cs(k), level)
        u = brentq(g, k, k + 1, xtol=1e-13)
        return correct_to_slice(s, cs(u), level)
    return _stationary(s, level, cs, int(np.argmin(rad)), R)


def _lcm(a: int, b: int) -> int:
    return a * b // math.gcd(a, b)


def find_branch(s: Surface, report=None, e: Fraction | None = None, n_levels: int = 13, n_points: int = 256,
                cap: int = 64, noise: float = 1e-7) -> Branch:
    """Trace the slice argmin of ``|x|`` toward the origin and fit it as a Puiseux branch."""
    sa, R = _adapted(s, report)
    levels = _exponent_levels(s.epsilon0, n_levels)
    curves = _slices(sa, levels, n_points)
    pts = np.array(pmap(lambda i: _branch_point(sa, float(levels[i]), curves[i], R), range(len(levels))))
    xy = (pts @ R.T)[:, :2]
    scale = np.array([np.ptp((c @ R.T)[:, :2], axis=0).max() for c in curves])
    comps, fits = [], []
    for j in range(2):
        v = xy[:, j]
        if np.max(np.abs(v) / scale) < noise:
            comps.append(GenSeries.zero())
            fits.append(None)
            continue
        fit = fit_series_detailed(levels, v, max_terms=4, exponent_denominator_cap=cap)
        comps.append(fit.series)
        fits.append(fit)
    N = 1
    for sr in comps:
        for ex in sr.exponents:
            N = _lcm(N, ex.denominator)
    if e is not None:
        N = _lcm(N, Fraction(e).denominator)
    if N > MAX_N:
        raise BlowupError(f"ramification index {N} exceeds the cap {MAX_N}")
    theta = tuple(sr.scale_exponents(N) for sr in comps) + (GenSeries.monomial(N, 1.0),)
    orders = [leading(t)[0] for t in theta[:2] if not t.is_zero()]
    m = int(min(orders)) - 1 if orders else None
    return Branch(tuple(comps) + (GenSeries.monomial(1, 1.0),), theta, N, m, tuple(fits))


@dataclass
class OpeningBlowup:
    variant: str
    epsilon0: float
    e: Fraction | None = None
    nu: Fraction | None = None
    N: int = 1
    theta: tuple = ()
    m: int | None = None
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    @classmethod
    def otc(cls, epsilon0: float) -> "OpeningBlowup":
        return cls("OTC", epsilon0)

    @property
    def eN(self) -> int:
        return int(self.e * self.N)

    def slicer(self):
        if self.variant == "OTC":
            return RadialSlicer()
        return HeightSlicer(tuple(self.rotation[2]))

    def level(self, r):
        """Ambient slice value at chart radius ``r``."""
        r = np.asarray(r, dtype=float)
        return r if self.variant == "OTC" else r ** self.N

    def chart_r(self, level):
        level = np.asarray(level, dtype=float)
        return level if self.variant == "OTC" else level ** (1.0 / self.N)

    @property
    def level_rate(self) -> int:
        """``d log(level) / d log(r)``."""
        return 1 if self.variant == "OTC" else self.N

    def forward(self, Q, r):
        """beta: blow-up coordinates ``(Q, r)`` to ambient points."""
        Q = np.asarray(Q, dtype=float)
        r = np.asarray(r, dtype=float)
        if self.variant == "OTC":
            return r[..., None] * Q / np.linalg.norm(Q, axis=-1, keepdims=True)
        xy = (r ** self.eN)[..., None] * Q + self._theta_xy(r)
        adapted = np.concatenate([xy, (r ** self.N)[..., None]], axis=-1)
        return adapted @ self.rotation

    def inverse(self, p):
        p = np.asarray(p, dtype=float)
        if self.variant == "OTC":
            r = np.linalg.norm(p, axis=-1)
            return p / r[..., None], r
        a = p @ self.rotation.T
        if np.any(a[..., 2] <= 0):
            raise BlowupError("inverse blow-up needs positive adapted height")
        r = a[..., 2] ** (1.0 / self.N)
        return (a[..., :2] - self._theta_xy(r)) / (r ** self.eN)[..., None], r

    def _theta_xy(self, r, deriv: bool = False):
        out = []
        for t in self.theta[:2]:
            t = t.derivative() if deriv else t
            out.append(np.zeros_like(r) if t.is_zero() else np.broadcast_to(np.asarray(t(r)), r.shape))
        return np.stack(out, axis=-1)

    def dforward_dr(self, Q, dQ, r):
        """Derivative of ``beta(Q(r), r)`` given ``dQ/dr`` (CTC only)."""
        r = np.asarray(r, dtype=float)
        eN = self.eN
        dxy = (eN * r ** (eN - 1))[..., None] * Q + (r ** eN)[..., None] * dQ + self._theta_xy(r, deriv=True)
        dz = np.broadcast_to(self.N * r ** (self.N - 1), dxy.shape[:-1])[..., None]
        return np.concatenate([dxy, dz], axis=-1) @ self.rotation

    def describe(self) -> dict:
        if self.variant == "OTC":
            return {"variant": "OTC", "epsilon0": self.epsilon0}
        return {
            "variant": "CTC",
            "epsilon0": self.epsilon0,
            "e": str(self.e),
            "nu": str(self.nu),
            "N": self.N,
            "m": self.m,
            "theta": [t.to_records() for t in self.theta],
            "direction": self.rotation[2].tolist(),
        }


def make_blowup(s: Surface, report: TangentConeReport | None = None, cap: int = 64):
    """Classify the cone and build the matching opening blow-up.

    Returns ``(blowup, report, details)`` where ``details`` holds the
    exponent fits (CTC only).
    """
    if report is None:
        report = classify_tangent_cone(s)
    if report.kind == "OTC":
        return OpeningBlowup.otc(s.epsilon0), report, {}
    nu = estimate_exponent(s, "nu", report, cap=cap)
    e = estimate_exponent(s, "e", report, cap=cap)
    br = find_branch(s, report, e=e.value, cap=cap)
    b = OpeningBlowup("CTC", s.epsilon0, e.value, nu.value, br.N, br.theta, br.m, report.rotation)
    return b, report, {"nu": nu, "e": e, "branch": br}


# ---------------------------------------------------------------------------
# accumulation set


@dataclass
class AccumulationSet:
    traces: list
    levels: np.ndarray
    hausdorff: list
    diameters: list
    converged: bool


def accumulation_set(s: Surface, b: OpeningBlowup, n_levels: int = 6, n_points: int = 256,
                     lo: float = 1e-5, hi: float = 1e-1) -> AccumulationSet:
    """Blow-up traces ``beta^-1(slice)`` on shrinking slices and their Hausdorff gaps."""
    ss = s.with_slicer(b.slicer())
    levels = s.epsilon0 * np.geomspace(hi, lo, n_levels)
    traces = [b.inverse(c)[0] for c in _slices(ss, levels, n_points)]
    diam = [float(np.max(np.linalg.norm(t[:, None] - t[None], axis=-1))) for t in traces]
    haus = []
    for a, c in zip(traces, traces[1:]):
        haus.append(max(directed_hausdorff(a, c)[0], directed_hausdorff(c, a)[0]))
    converged = True
    if len(traces) > 1:
        ratio = diam[-1] / diam[0]
        growing = len(haus) > 1 and haus[-1] > 1.5 * haus[-2] and haus[-1] > 1e-6 * diam[-1]
        if ratio > 1e2 or ratio < 1e-2 or growing:
            raise BlowupError(
                f"blow-up does not open the surface (trace diameters {diam[0]:.3g} -> {diam[-1]:.3g}, "
                f"last Hausdorff gaps {haus[-2:]})"
            )
    return AccumulationSet(traces, levels, haus, diam, converged)


# ---------------------------------------------------------------------------
# cylinder chart


def _spectral_dphi(values, axis: int = 1):
    n = values.shape[axis]
    k = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
    shape = [1] * values.ndim
    shape[axis] = n
    spec = np.fft.fft(values, axis=axis) * (1j * k).reshape(shape)
    return np.real(np.fft.ifft(spec, axis=axis))


@dataclass
class CylinderChart:
    """Sampled map ``(phi, r) -> S0`` with interpolation in blow-up space."""

    epsilon: float
    phi_grid: np.ndarray
    r_grid: np.ndarray
    points: np.ndarray
    Q: np.ndarray
    d_r: np.ndarray
    d_phi: np.ndarray
    omega_flags: list
    omega_mask: np.ndarray
    gap_ratio: np.ndarray
    blowup: OpeningBlowup
    surface: Surface
    _splines: list = field(default=None, repr=False)

    @property
    def n_phi(self) -> int:
        return len(self.phi_grid)

    def level(self, r):
        return self.blowup.level(r)

    def _build_splines(self, pad: int = 4):
        phis = np.concatenate([self.phi_grid[-pad:] - 2 * np.pi, self.phi_grid, self.phi_grid[:pad] + 2 * np.pi])
        logr = np.log(self.r_grid)
        self._splines = []
        for j in range(self.Q.shape[-1]):
            vals = self.Q[:, :, j].T  # (phi, r)
            ext = np.concatenate([vals[-pad:], vals, vals[:pad]], axis=0)
            self._splines.append(RectBivariateSpline(phis, logr, ext, kx=3, ky=3, s=0))

    def evaluate(self, phi, r, snap: bool = True):
        """``Phi(phi, r)``; ``snap`` corrects the interpolated point onto the exact slice."""
        if self._splines is None:
            self._build_splines()
        phi = np.asarray(phi, dtype=float)
        r = np.asarray(r, dtype=float)
        phi, r = np.broadcast_arrays(phi, r)
        if np.any(r < self.r_grid[0] * (1 - 1e-9)) or np.any(r > self.r_grid[-1] * (1 + 1e-9)):
            raise ChartError("chart evaluated outside its radial range")
        pm = np.mod(phi, 2 * np.pi)
        lr = np.log(np.clip(r, self.r_grid[0], self.r_grid[-1]))
        Q = np.stack([sp.ev(pm, lr) for sp in self._splines], axis=-1)
        p = self.blowup.forward(Q, r)
        if snap:
            flat = correct_to_slice(self.surface, p.reshape(-1, 3), np.asarray(self.level(r)).reshape(-1))
            p = flat.reshape(p.shape)
        return p

    def locate(self, p):
        """Inverse chart for one ambient point: returns ``(phi, r)``."""
        p = np.asarray(p, dtype=float)
        r = float(self.blowup.chart_r(self.surface.slicer.value(p)))
        grid = self.evaluate(self.phi_grid, np.full(self.n_phi, r), snap=False)
        k = int(np.argmin(np.linalg.norm(grid - p, axis=-1)))
        step = 2 * np.pi / self.n_phi
        fun = lambda a: float(np.linalg.norm(self.evaluate(a, r, snap=False) - p))
        res = minimize_scalar(fun, bounds=(self.phi_grid[k] - step, self.phi_grid[k] + step), method="bounded",
                              options={"xatol": 1e-13})
        return float(np.mod(res.x, 2 * np.pi)), r

    def rows(self):
        """``(phi, r, x, y, z, omega_flag)`` rows for export."""
        for i, r in enumerate(self.r_grid):
            for k, phi in enumerate(self.phi_grid):
                x, y, z = self.points[i, k]
                yield phi, r, x, y, z, int(self.omega_mask[k])


def _ctc_normal(s: Surface, b: OpeningBlowup, y, w):
    """Normal of ``{F(beta(y, w)) = 0}`` in ``(y, w)`` space, divided by ``w**(e*N)``."""
    p = b.forward(y, w)
    g = s.equation.gradient(p) @ b.rotation.T
    eN, N = b.eN, b.N
    a_y = g[..., :2]
    shift = (eN / w)[..., None] * y + b._theta_xy(w, deriv=True) / (w ** eN)[..., None]
    a_w = np.sum(a_y * shift, axis=-1) + g[..., 2] * N * w ** (N - 1) / w ** eN
    return p, a_y, a_w


def _ctc_dy(s, b, y, w):
    """``dy/dw`` along the retraction: ``d/dw`` projected onto the blown-up surface."""
    _, a_y, a_w = _ctc_normal(s, b, y, w)
    return -a_w[..., None] * a_y / np.sum(a_y * a_y, axis=-1, keepdims=True)


def _ctc_correct(s, b, y, w, max_iter: int = 40):
    y = np.array(y, dtype=float)
    prev = np.full(y.shape[:-1], np.inf)
    for _ in range(max_iter):
        p, a_y, _ = _ctc_normal(s, b, y, w)
        res = s.equation(p) / w ** b.eN
        step = (res / np.sum(a_y * a_y, axis=-1))[..., None] * a_y
        y = y - step
        size = np.linalg.norm(step, axis=-1)
        if np.all((size == 0) | (size > 0.5 * prev)) or np.all(size < 1e-15 * (1 + np.linalg.norm(y, axis=-1))):
            break
        prev = size
    return y


def _ctc_flow(s, b, y0, r_grid, dlog: float = 0.05):
    """Carry blow-up points ``y0`` at ``r_grid[-1]`` down the retraction to every grid radius."""
    out = np.empty((len(r_grid),) + y0.shape)
    out[-1] = y0
    y = y0.copy()
    for i in range(len(r_grid) - 1, 0, -1):
        l0, l1 = math.log(r_grid[i]), math.log(r_grid[i - 1])
        n = max(1, int(math.ceil(abs(l1 - l0) / dlog)))
        h = (l1 - l0) / n
        lw = l0
        for _ in range(n):
            def f(yy, ll):
                w = np.full(yy.shape[:-1], math.exp(ll))
                return w[..., None] * _ctc_dy(s, b, yy, w)
            k1 = f(y, lw)
            k2 = f(y + 0.5 * h * k1, lw + 0.5 * h)
            k3 = f(y + 0.5 * h * k2, lw + 0.5 * h)
            k4 = f(y + h * k3, lw + h)
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            lw += h
            y = _ctc_correct(s, b, y, np.full(y.shape[:-1], math.exp(lw)))
        y = _ctc_correct(s, b, y, np.full(y.shape[:-1], r_grid[i - 1]))
        out[i - 1] = y
    return out


def _base_point(s: Surface, level: float, R, n_points: int = 128):
    """Point of the slice with the largest first adapted coordinate (root of its tangent component)."""
    curve = slice_curve(s, level, n_points)
    x1 = (curve @ R.T)[:, 0]
    k = int(np.argmax(x1))
    cs = _ClosedSpline(curve)

    def g(u):
        q = correct_to_slice(s, cs(u), level)
        return float((R @ np.cross(s.equation.gradient(q), s.slicer.grad(q)))[0])

    lo, mid, hi = g(k - 1.0), g(float(k)), g(k + 1.0)
    if mid == 0:
        u = float(k)
    elif lo * mid < 0:
        u = brentq(g, k - 1.0, float(k), xtol=1e-14, rtol=1e-15)
    elif mid * hi < 0:
        u = brentq(g, float(k), k + 1.0, xtol=1e-14, rtol=1e-15)
    else:
        return _refine(s, level, cs, k, lambda q: -float((R @ q)[0]))[0]
    return correct_to_slice(s, cs(u), level)


def build_chart(s: Surface, b: OpeningBlowup, epsilon: float | None = None, n_phi: int = 128, n_r: int = 48,
                r_min: float | None = None, omega_gap: float = 0.05, max_omega_fraction: float = 0.1) -> CylinderChart:
    """Numerical cylinder chart over ``[r_min, epsilon]`` in chart units."""
    ss = s.with_slicer(b.slicer())
    if epsilon is None:
        epsilon = float(b.chart_r(s.epsilon0))
    if r_min is None:
        r_min = epsilon * 1e-4
    if not 0 < r_min < epsilon:
        raise ChartError("need 0 < r_min < epsilon")
    if float(b.level(epsilon)) > s.epsilon0 * (1 + 1e-12):
        raise ChartError("chart radius exceeds the working radius")
    r_grid = np.geomspace(r_min, epsilon, n_r)
    levels = b.level(r_grid)
    top = float(levels[-1])
    base = _base_point(ss, top, b.rotation)
    top_pts = slice_curve(ss, top, n_phi, start=base)
    if b.variant == "OTC":
        pts = retraction_flow(ss, top_pts, levels)
        Q = b.inverse(pts)[0]
        d_r = retraction_field(ss, pts) * (b.level_rate / r_grid)[:, None, None]
    else:
        # the retraction lives in blow-up space, where slices stay of unit size
        Q = _ctc_flow(ss, b, b.inverse(top_pts)[0], r_grid)
        W = np.broadcast_to(r_grid[:, None], Q.shape[:-1])
        pts = b.forward(Q, W)
        d_r = b.dforward_dr(Q, _ctc_dy(ss, b, Q, W), W)
    d_phi = _spectral_dphi(pts, axis=1)
    phi_grid = 2 * np.pi * np.arange(n_phi) / n_phi

    # label collisions: adjacent labels much closer than the average spacing,
    # or out of order along the slice orientation
    nxt = np.roll(pts, -1, axis=1)
    gaps = np.linalg.norm(nxt - pts, axis=-1)
    ratio = gaps / gaps.mean(axis=1, keepdims=True)
    tang = np.cross(ss.equation.gradient(pts), ss.slicer.grad(pts))
    order_ok = np.sum((nxt - pts) * tang, axis=-1) > 0
    bad = (ratio < omega_gap) | ~order_ok
    mask = bad.any(axis=0)
    frac = mask.mean()
    if frac > max_omega_fraction:
        raise ChartError(f"chart degenerate: label collisions over {100 * frac:.1f}% of the circle")
    flags = []
    step = 2 * np.pi / n_phi
    for k in np.flatnonzero(mask):
        a, c = phi_grid[k], phi_grid[k] + step
        if flags and abs(flags[-1][1] - a) < 1e-12:
            flags[-1] = (flags[-1][0], c)
        else:
            flags.append((a, c))
    return CylinderChart(epsilon, phi_grid, r_grid, pts, Q, d_r, d_phi, flags, mask, ratio.min(axis=0), b, ss)
