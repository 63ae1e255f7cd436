"""Trajectories of the restricted gradient, in ambient space and on the cylinder.

Ambient trajectories are integrated in a log-scale parameter ``sigma`` with

    dp/dsigma = L(p) * v / |v|,   dt/dsigma = L(p) / |v|,

where ``v`` is the restricted gradient and ``L`` the slicing function, so a
unit of ``sigma`` shrinks the trajectory by a fixed factor no matter how
slowly it moves in physical time. Physical time ``t`` rides along as an
extra state component. Each accepted step is re-projected onto ``F = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import RectBivariateSpline

from .blowup import CylinderChart, _ClosedSpline, _spectral_dphi
from .errors import BisectionError, FitError, PreconditionError, SingflowError
from .geometry import (
    Metric,
    PolyFunction,
    Surface,
    correct_to_slice,
    project_to_surface,
    restricted_gradient,
    retraction_flow,
    slice_curve,
)
from .series import GenSeries, SeriesFit, fit_series_detailed, leading

__all__ = [
    "Trajectory",
    "CylinderTrajectory",
    "PullbackMetric",
    "CylinderSystem",
    "integrate",
    "pullback_metric",
    "transformed_system",
    "chart_integrate",
    "find_accumulating_trajectory",
    "separatrix_expansion",
]

# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


@dataclass
class Trajectory:
    t: np.ndarray
    points: np.ndarray
    f: np.ndarray
    stop_reason: str
    direction: int = 1
    levels: np.ndarray | None = None
    reliable_level: float = 0.0

    def __len__(self):
        return len(self.t)

    @property
    def final_level(self) -> float:
        return float(self.levels[-1])


class _Stationary(Exception):
    pass


def integrate(s: Surface, m: Metric | None, f: PolyFunction, p0, direction: int = 1, r_min: float = 1e-6,
              t_max: float = math.inf, rtol: float = 1e-9, atol: float = 1e-12, max_step: float = 0.05,
              max_steps: int = 20000, stop=None) -> Trajectory:
    """Integrate the restricted gradient of ``f`` (``direction=-1``: of ``-f``) from ``p0``.

    Stops when the slice value drops below ``r_min``, ``|p|`` exceeds
    epsilon0, physical time exceeds ``t_max``, or the step size collapses.
    ``stop(p, f_value)`` may return a custom stop reason.
    """
    if direction not in (1, -1):
        raise PreconditionError("direction must be +1 or -1")
    m = m or Metric()
    sl = s.slicer
    p = project_to_surface(s, np.asarray(p0, dtype=float))

    def rhs(y):
        q = y[:3]
        v = direction * restricted_gradient(s, m, f, q, check=False)
        nv = float(np.linalg.norm(v))
        if nv == 0.0 or not np.isfinite(nv):
            raise _Stationary
        L = float(sl.value(q))
        return np.concatenate([L * v / nv, [L / nv]])

    y = np.concatenate([p, [0.0]])
    ts, ps, fs, ls = [0.0], [p.copy()], [f(p)], [float(sl.value(p))]
    try:
        rhs(y)
    except _Stationary:
        raise PreconditionError("start point is a critical point of f on S")
    h = min(0.01, max_step)
    reason = "max_time"
    steps = 0
    while True:
        if steps >= max_steps:
            reason = "step_failure"
            break
        try:
            k = [rhs(y)]
            for i in range(1, 7):
                k.append(rhs(y + h * sum(a * kk for a, kk in zip(_A[i], k))))
        except _Stationary:
            reason = "step_failure"
            break
        K = np.array(k)
        y5 = y + h * (_B5 @ K)
        y4 = y + h * (_B4 @ K)
        L = max(float(sl.value(y[:3])), float(sl.value(y5[:3])))
        scale = np.empty(4)
        scale[:3] = atol * L + rtol * np.maximum(np.abs(y[:3]), np.abs(y5[:3]))
        scale[3] = atol + rtol * max(abs(y[3]), abs(y5[3]))
        err = float(np.sqrt(np.mean(((y5 - y4) / scale) ** 2)))
        if not np.isfinite(err) or err > 1.0:
            h *= max(0.2, 0.9 * err ** -0.2) if np.isfinite(err) else 0.2
            if h < 1e-12:
                reason = "step_failure"
                break
            continue
        steps += 1
        try:
            q = project_to_surface(s, y5[:3])
        except SingflowError:
            reason = "step_failure"
            break
        y = np.concatenate([q, y5[3:]])
        lv = float(sl.value(q))
        ts.append(y[3])
        ps.append(q)
        fs.append(f(q))
        ls.append(lv)
        if lv < r_min:
            reason = "reached_rmin"
            break
        if np.linalg.norm(q) > s.epsilon0:
            reason = "left_domain"
            break
        if y[3] > t_max:
            reason = "max_time"
            break
        if stop is not None:
            custom = stop(q, fs[-1])
            if custom:
                reason = custom
                break
        fac = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        h = min(h * fac, max_step)
    return Trajectory(np.array(ts), np.array(ps), np.array(fs), reason, direction, np.array(ls))


# ---------------------------------------------------------------------------
# cylinder side


@dataclass
class PullbackMetric:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    degenerate: np.ndarray
    U: np.ndarray | None = None
    U_mismatch: float | None = None


def pullback_metric(chart: CylinderChart, m: Metric | None = None, det_tol: float = 1e-12) -> PullbackMetric:
    """``A dr^2 + 2B dr dphi + C dphi^2``: the metric pulled back by the chart."""
    m = m or Metric()
    P, Pr, Pf = chart.points, chart.d_r, chart.d_phi
    A = m.inner(P, Pr, Pr)
    B = m.inner(P, Pr, Pf)
    C = m.inner(P, Pf, Pf)
    det = A * C - B * B
    degenerate = ~(det > det_tol * A * C) | ~(A > 0)
    U = mismatch = None
    if chart.blowup.variant == "OTC":
        # on the sphere: w = Phi/r, and C = r^2 * sum (w_i)_phi^2 for a Euclidean metric
        W = chart.Q
        U = np.sum(_spectral_dphi(W, axis=1) ** 2, axis=-1)
        if m.is_euclidean:
            r2 = chart.r_grid[:, None] ** 2
            mismatch = float(np.max(np.abs(C - r2 * U) / (r2 * U)))
    return PullbackMetric(A, B, C, degenerate, U, mismatch)


@dataclass
class CylinderSystem:
    """``(rdot, phidot)`` and metric coefficients sampled on a ``(r, phi)`` grid.

    Arrays have shape ``(n_r, n_phi)``. ``exponents_rdot[k]`` is the fitted
    leading ``(exponent, coefficient)`` of ``rdot`` along ``phi_grid[k]`` or
    ``None`` when the field vanishes there.
    """

    phi_grid: np.ndarray
    r_grid: np.ndarray
    rdot: np.ndarray
    phidot: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    exponents_rdot: list = field(default_factory=list)
    exponents_phidot: list = field(default_factory=list)
    omega_mask: np.ndarray | None = None
    degenerate: np.ndarray | None = None
    scale_rdot: np.ndarray | None = None
    scale_phidot: np.ndarray | None = None
    source: str = "chart"
    _interp: tuple = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.phi_grid)
        if self.omega_mask is None:
            self.omega_mask = np.zeros(n, dtype=bool)
        if self.degenerate is None:
            self.degenerate = np.zeros_like(self.rdot, dtype=bool)
        if self.scale_rdot is None:
            self.scale_rdot = np.abs(self.rdot)
        if self.scale_phidot is None:
            self.scale_phidot = np.abs(self.phidot)
        if not self.exponents_rdot:
            self.fit_exponents()

    def fit_exponents(self, noise: float = 1e-8, max_terms: int = 2):
        self.exponents_rdot = [_leading_fit(self.r_grid, self.rdot[:, k], self.scale_rdot[:, k], noise, max_terms)
                               for k in range(len(self.phi_grid))]
        self.exponents_phidot = [_leading_fit(self.r_grid, self.phidot[:, k], self.scale_phidot[:, k], noise, max_terms)
                                 for k in range(len(self.phi_grid))]

    def rescaled(self, factor) -> "CylinderSystem":
        """Same system multiplied by a positive function sampled on the grid."""
        factor = np.broadcast_to(np.asarray(factor, dtype=float), self.rdot.shape)
        if np.any(factor <= 0):
            raise PreconditionError("rescaling factor must be positive")
        return CylinderSystem(self.phi_grid, self.r_grid, self.rdot * factor, self.phidot * factor, self.A, self.B,
                              self.C, omega_mask=self.omega_mask, degenerate=self.degenerate,
                              scale_rdot=self.scale_rdot * factor, scale_phidot=self.scale_phidot * factor,
                              source=self.source)

    @classmethod
    def from_terms(cls, rdot_terms, phidot_terms, r_grid=None, n_phi: int = 128) -> "CylinderSystem":
        """Synthetic system from terms ``(coeff, power, harmonic, 'cos'|'sin')``.

        ``rdot = sum c r^a cos(k phi)`` (or ``sin``), likewise ``phidot``;
        the metric is the flat polar one.
        """
        if r_grid is None:
            r_grid = np.geomspace(1e-12, 1.0, 97)
        r_grid = np.asarray(r_grid, dtype=float)
        phi = 2 * np.pi * np.arange(n_phi) / n_phi
        R, PH = np.meshgrid(r_grid, phi, indexing="ij")

        def build(terms):
            out = np.zeros_like(R)
            mag = np.zeros_like(R)
            for c, a, k, kind in terms:
                trig = np.cos(k * PH) if kind == "cos" else np.sin(k * PH)
                out += c * R ** a * trig
                mag += np.abs(c * R ** a)
            return out, mag

        rd, srd = build(rdot_terms)
        pd, spd = build(phidot_terms)
        A = np.ones_like(R)
        return cls(phi, r_grid, rd, pd, A, np.zeros_like(R), R ** 2, scale_rdot=srd, scale_phidot=spd,
                   source="synthetic")

    # interpolated unit direction field on (phi, log r)
    def _build_interp(self, pad: int = 4):
        with np.errstate(divide="ignore", invalid="ignore"):
            a = self.rdot / self.r_grid[:, None]
            b = self.phidot
            nrm = np.hypot(a, b)
            u = np.where(nrm > 0, a / nrm, 0.0)
            w = np.where(nrm > 0, b / nrm, 0.0)
            ln = np.log(np.where(nrm > 0, nrm, np.nan))
        finite = np.isfinite(ln)
        ln = np.where(finite, ln, ln[finite].min() if finite.any() else 0.0)
        phis = np.concatenate([self.phi_grid[-pad:] - 2 * np.pi, self.phi_grid, self.phi_grid[:pad] + 2 * np.pi])
        lr = np.log(self.r_grid)

        def spline(v):
            vt = v.T
            ext = np.concatenate([vt[-pad:], vt, vt[:pad]], axis=0)
            return RectBivariateSpline(phis, lr, ext, kx=3, ky=3, s=0)

        self._interp = (spline(u), spline(w), spline(ln), float(np.max(nrm)) if np.isfinite(np.max(nrm)) else 0.0)

    def direction(self, phi, logr):
        if self._interp is None:
            self._build_interp()
        su, sw, sn, _ = self._interp
        pm = np.mod(phi, 2 * np.pi)
        u, w = float(su.ev(pm, logr)), float(sw.ev(pm, logr))
        n = math.hypot(u, w)
        return u / n if n else 0.0, w / n if n else 0.0, math.exp(float(sn.ev(pm, logr)))


def _leading_fit(r, v, scale, noise, max_terms):
    if not np.any(np.abs(v) > noise * np.max(scale)) or np.all(np.abs(v) <= noise * scale):
        return None
    try:
        fit = fit_series_detailed(r, v, max_terms=max_terms, exponent_denominator_cap=64)
    except SingflowError:
        return None
    if fit.series.is_zero():
        return None
    return leading(fit.series)


def transformed_system(chart: CylinderChart, s: Surface, m: Metric | None, f: PolyFunction,
                       metric: PullbackMetric | None = None, fit: bool = True) -> CylinderSystem:
    """``rdot = C f_r - B f_phi``, ``phidot = -B f_r + A f_phi`` on the chart grid."""
    m = m or Metric()
    pm = metric or pullback_metric(chart, m)
    g = f.gradient(chart.points)
    fr = np.sum(g * chart.d_r, axis=-1)
    fp = np.sum(g * chart.d_phi, axis=-1)
    rd = pm.C * fr - pm.B * fp
    pd = -pm.B * fr + pm.A * fp
    # natural magnitudes of the two fields, used as noise references
    gf = np.linalg.norm(g, axis=-1)
    nr = np.linalg.norm(chart.d_r, axis=-1)
    nphi = np.linalg.norm(chart.d_phi, axis=-1)
    srd = gf * nr * nphi ** 2
    spd = gf * nr ** 2 * nphi
    sys = CylinderSystem(chart.phi_grid, chart.r_grid, rd, pd, pm.A, pm.B, pm.C, exponents_rdot=[None],
                         exponents_phidot=[None], omega_mask=chart.omega_mask.copy(), degenerate=pm.degenerate,
                         scale_rdot=srd, scale_phidot=spd)
    sys.exponents_rdot, sys.exponents_phidot = [], []
    if fit:
        sys.fit_exponents()
    return sys


@dataclass
class CylinderTrajectory:
    t: np.ndarray
    phi: np.ndarray
    r: np.ndarray
    stop_reason: str


def chart_integrate(sys: CylinderSystem, start, r_min: float, direction: int = 1, max_arc: float = 1e4,
                    rtol: float = 1e-10, atol: float = 1e-12) -> CylinderTrajectory:
    """Integrate the interpolated cylinder field from ``start = (phi, r)``.

    Integration runs in arc length ``s`` of the curve in ``(log r, phi)``;
    physical time follows from ``dt/ds = 1/|(rdot/r, phidot)|``. ``phi`` is
    returned unwound.
    """
    phi0, r0 = float(start[0]), float(start[1])
    lo, hi = float(sys.r_grid[0]), float(sys.r_grid[-1])
    if not lo <= r0 <= hi:
        raise PreconditionError("start radius outside the system grid")
    if not r0 > r_min:
        raise PreconditionError("start radius must exceed r_min")
    lrmin = math.log(max(r_min, lo))

    def rhs(_, y):
        u, w, nrm = sys.direction(y[0], min(max(y[1], math.log(lo)), math.log(hi)))
        return [direction * w, direction * u, 1.0 / nrm if nrm > 0 else 0.0]

    def ev_min(_, y):
        return y[1] - lrmin

    def ev_out(_, y):
        return math.log(hi) * (1 + 1e-12) - y[1]

    ev_min.terminal = ev_out.terminal = True
    sol = solve_ivp(rhs, (0.0, max_arc), [phi0, math.log(r0), 0.0], method="DOP853", rtol=rtol, atol=atol,
                    events=[ev_min, ev_out], max_step=0.05)
    if sol.status == 1 and len(sol.t_events[0]):
        reason = "reached_rmin"
    elif sol.status == 1:
        reason = "left_grid"
    elif sol.status == 0:
        reason = "max_time"
    else:
        reason = "step_failure"
    return CylinderTrajectory(sol.y[2], sol.y[0], np.exp(sol.y[1]), reason)


# ---------------------------------------------------------------------------
# accumulating trajectories


def _top_slice(s: Surface, fraction: float = 0.5, n_points: int = 256):
    level = s.epsilon0 * fraction
    return level, slice_curve(s, level, n_points)


def find_accumulating_trajectory(s: Surface, m: Metric | None, f: PolyFunction, r_min: float = 1e-4,
                                 top_fraction: float = 0.5, n_points: int = 256, max_bisections: int = 80,
                                 **kw) -> Trajectory:
    """A gradient trajectory accumulating at the origin, found by the hitting-map argument.

    * ``f < 0`` on the top slice: start inside where ``f`` exceeds its top-slice
      maximum and follow the gradient forward; it cannot leave through the
      top slice.
    * ``f > 0``: the same with time reversed.
    * ``f`` changes sign: pass to ``-f**2`` and bisect along an arc of the top
      slice between consecutive zeros of ``f``. Each trial trajectory either
      reaches the origin or lands on the zero set near one end of the arc;
      which end is read off the sign of ``df`` along the slice orientation.
    """
    m = m or Metric()
    f0 = f - f(np.zeros(3))
    level, curve = _top_slice(s, top_fraction, n_points)
    vals = f0(curve)
    scale = float(np.max(np.abs(vals)))
    if scale == 0:
        raise PreconditionError("f is constant on the top slice")
    if np.all(vals < 0) or np.all(vals > 0):
        sign = 1 if np.all(vals < 0) else -1
        k = int(np.argmax(sign * vals))
        target = float(np.max(sign * vals))
        ladder = level * np.geomspace(0.9, 1e-3, 31)
        line = retraction_flow(s, curve[k], ladder)
        for q in line:
            if sign * f0(q) > target:
                tr = integrate(s, m, f0, q, direction=sign, r_min=r_min, **kw)
                if tr.stop_reason == "reached_rmin":
                    return tr
        raise BisectionError("no start point above the top-slice extremum reached the origin", brackets=None)

    # mixed sign: -f^2 and bisection along one arc of the top slice
    g = -(f0 * f0)
    n = len(curve)
    signs = np.sign(vals)
    zeros = [i for i in range(n) if signs[i] != signs[(i + 1) % n]]
    i0, i1 = zeros[0], zeros[1 % len(zeros)] if len(zeros) > 1 else zeros[0] + n
    if i1 <= i0:
        i1 += n
    cs = _ClosedSpline(curve)
    def start_at(u):
        return correct_to_slice(s, cs(u), level)

    def tangent(q):
        t = np.cross(s.equation.gradient(q), s.slicer.grad(q))
        return t / np.linalg.norm(t)

    def side_at(u):
        q = start_at(u)
        return float(np.sign(f0.gradient(q) @ tangent(q)))

    lo_u, hi_u = float(i0 + 1), float(i1)
    side_lo = side_at(i0 + 0.5)
    side_hi = side_at(i1 + 0.5)
    if side_lo == side_hi:
        raise BisectionError("arc ends are not separated by the zero set", brackets=(lo_u, hi_u))

    def trial(u):
        q = start_at(u)

        def stop(p, _):
            # angular distance to the zero set, scale-free near the origin
            if abs(f0(p)) < 1e-6 * np.linalg.norm(f0.gradient(p)) * np.linalg.norm(p):
                return "reached_zero_set"
            return None

        # trials go deeper than r_min so the returned curve is still on the
        # separatrix when it crosses r_min
        tr = integrate(s, m, g, q, direction=1, r_min=max(r_min * 1e-2, 1e-12), stop=stop, **kw)
        if tr.stop_reason == "reached_rmin":
            tr.reliable_level = r_min
            return tr, 0.0
        p_end = tr.points[-1]
        side = float(np.sign(f0.gradient(p_end) @ tangent(p_end)))
        return tr, side

    a, b = lo_u, hi_u
    for _ in range(max_bisections):
        mid = 0.5 * (a + b)
        tr, side = trial(mid)
        if side == 0.0:
            return tr
        if side == side_lo:
            a = mid
        else:
            b = mid
        if b - a < 1e-15 * max(1.0, abs(a)):
            break
    raise BisectionError("bisection interval collapsed without reaching the origin",
                         brackets=(start_at(a).tolist(), start_at(b).tolist()))


def separatrix_expansion(tr: Trajectory, n_samples: int = 60, max_terms: int = 4,
                         cap: int = 64, noise: float = 1e-6):
    """Fit each coordinate of an accumulating trajectory against its slice value.

    Returns ``(series, fits)`` where ``series`` is a triple of GenSeries.
    """
    L = tr.levels
    if L is None or L[-1] >= 1e-4 * max(1.0, L[0]) and L[-1] >= 1e-4:
        raise PreconditionError("trajectory does not accumulate at the origin (final slice value >= 1e-4)")
    order = np.argsort(L)
    Ls, P = L[order], tr.points[order]
    if tr.reliable_level > Ls[0]:
        i0 = max(int(np.searchsorted(Ls, tr.reliable_level)) - 1, 0)
        Ls, P = Ls[i0:], P[i0:]
    keep = np.concatenate([[True], np.diff(Ls) > 0])
    Ls, P = Ls[keep], P[keep]
    top = Ls[0] * 10 ** 3.5
    if Ls[-1] < top:
        top = Ls[-1]
    sel = Ls <= top
    if sel.sum() > n_samples:
        idx = np.unique(np.linspace(0, sel.sum() - 1, n_samples).round().astype(int))
    else:
        idx = np.arange(sel.sum())
    grid, pts = Ls[sel][idx], P[sel][idx]
    series, fits = [], []
    for j in range(3):
        vals = pts[:, j]
        if np.max(np.abs(vals) / grid) < noise:
            series.append(GenSeries.zero())
            fits.append(None)
            continue
        try:
            fit = fit_series_detailed(grid, vals, max_terms=max_terms, exponent_denominator_cap=cap)
        except FitError as exc:
            series.append(GenSeries.zero())
            fits.append(SeriesFit(GenSeries.zero(), math.inf, quality=f"fit failed: {exc}"))
            continue
        series.append(fit.series)
        fits.append(fit)
    return tuple(series), fits
