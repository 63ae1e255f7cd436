"""Implicit surfaces in R^3, metrics, and the restricted gradient field.

Everything here works on arrays of points with a trailing axis of length 3,
so a single point and a batch of points go through the same code path.

Slices of a surface are the curves ``S0 ∩ {L = c}`` for a slicing function
``L``: the distance ``|p|`` for an open tangent cone, the height along the
cone direction for a cuspidal one. They are traced by predictor-corrector
continuation; points move between slices along the retraction field, the
normalized surface gradient of ``L``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Iterable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConvergenceError, PreconditionError, SliceError

__all__ = [
    "PolyFunction",
    "Metric",
    "RadialSlicer",
    "HeightSlicer",
    "Surface",
    "project_to_surface",
    "restricted_gradient",
    "slice_curve",
    "correct_to_slice",
    "retraction_flow",
    "point_on_level",
    "sample_surface_points",
]

ON_SURFACE_TOL = 1e-9


class PolyFunction:
    """Real polynomial in three variables.

    ``monomials`` is an iterable of ``((i, j, k), coeff)``; repeated
    multi-indices are summed and zero coefficients dropped.
    """

    n = 3

    def __init__(self, monomials: Iterable = ()):
        acc: dict[tuple[int, int, int], float] = {}
        for idx, c in monomials:
            idx = tuple(int(a) for a in idx)
            if len(idx) != 3 or min(idx) < 0:
                raise ValueError(f"bad multi-index {idx!r}")
            acc[idx] = acc.get(idx, 0.0) + float(c)
        self._terms = tuple(sorted((k, v) for k, v in acc.items() if v != 0.0))
        if self._terms:
            self._exps = np.array([k for k, _ in self._terms], dtype=int)
            self._coeffs = np.array([v for _, v in self._terms], dtype=float)
        else:
            self._exps = np.zeros((0, 3), dtype=int)
            self._coeffs = np.zeros(0)
        self._grad = None

    # construction helpers -------------------------------------------------
    @classmethod
    def constant(cls, c: float) -> "PolyFunction":
        return cls([((0, 0, 0), c)])

    @classmethod
    def coordinate(cls, i: int) -> "PolyFunction":
        idx = [0, 0, 0]
        idx[i] = 1
        return cls([(tuple(idx), 1.0)])

    @classmethod
    def from_records(cls, records: Sequence) -> "PolyFunction":
        return cls((tuple(r[0]), r[1]) for r in records)

    def to_records(self) -> list:
        return [[list(k), v] for k, v in self._terms]

    @property
    def monomials(self):
        return self._terms

    @property
    def degree(self) -> int:
        return int(self._exps.sum(axis=1).max()) if self._terms else 0

    def is_zero(self) -> bool:
        return not self._terms

    # evaluation -----------------------------------------------------------
    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        if not self._terms:
            return np.zeros(p.shape[:-1]) if p.ndim > 1 else 0.0
        powers = np.prod(p[..., None, :] ** self._exps, axis=-1)
        out = powers @ self._coeffs
        return float(out) if np.ndim(out) == 0 else out

    def partial(self, i: int) -> "PolyFunction":
        out = []
        for idx, c in self._terms:
            if idx[i] > 0:
                j = list(idx)
                j[i] -= 1
                out.append((tuple(j), c * idx[i]))
        return PolyFunction(out)

    def gradient(self, p):
        if self._grad is None:
            self._grad = tuple(self.partial(i) for i in range(3))
        p = np.asarray(p, dtype=float)
        return np.stack([np.asarray(g(p), dtype=float) for g in self._grad], axis=-1)

    # algebra --------------------------------------------------------------
    def __add__(self, other):
        if not isinstance(other, PolyFunction):
            other = PolyFunction.constant(other)
        return PolyFunction(self._terms + other._terms)

    __radd__ = __add__

    def __neg__(self):
        return PolyFunction((k, -v) for k, v in self._terms)

    def __sub__(self, other):
        if not isinstance(other, PolyFunction):
            other = PolyFunction.constant(other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, PolyFunction):
            return PolyFunction((k, v * float(other)) for k, v in self._terms)
        out = []
        for (a, ca), (b, cb) in product(self._terms, other._terms):
            out.append(((a[0] + b[0], a[1] + b[1], a[2] + b[2]), ca * cb))
        return PolyFunction(out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        out = PolyFunction.constant(1.0)
        for _ in range(int(k)):
            out = out * self
        return out

    def compose_linear(self, R, shift=None) -> "PolyFunction":
        """Return ``p -> self(R @ p + shift)`` expanded as a polynomial."""
        R = np.asarray(R, dtype=float)
        shift = np.zeros(3) if shift is None else np.asarray(shift, dtype=float)
        lin = []
        for i in range(3):
            terms = [((1 if j == 0 else 0, 1 if j == 1 else 0, 1 if j == 2 else 0), R[i, j]) for j in range(3)]
            terms.append(((0, 0, 0), shift[i]))
            lin.append(PolyFunction(terms))
        out = PolyFunction()
        for idx, c in self._terms:
            out = out + (lin[0] ** idx[0]) * (lin[1] ** idx[1]) * (lin[2] ** idx[2]) * c
        return out

    def __eq__(self, other):
        return isinstance(other, PolyFunction) and self._terms == other._terms

    def __hash__(self):
        return hash(self._terms)

    def __repr__(self):
        if not self._terms:
            return "PolyFunction(0)"
        parts = []
        for (i, j, k), c in self._terms:
            mono = "*".join(f"{v}^{e}" if e > 1 else v for v, e in zip("xyz", (i, j, k)) if e)
            parts.append(f"{c:+g}" + (f"*{mono}" if mono else ""))
        return "PolyFunction(" + " ".join(parts) + ")"


@dataclass(frozen=True)
class Metric:
    """Symmetric 3x3 matrix of polynomial coefficients; ``None`` means Euclidean."""

    entries: tuple | None = None

    def __post_init__(self):
        if self.entries is None:
            return
        if len(self.entries) != 3 or any(len(row) != 3 for row in self.entries):
            raise ValueError("metric must be 3x3")
        for i in range(3):
            for j in range(i + 1, 3):
                if self.entries[i][j] != self.entries[j][i]:
                    raise ValueError("metric coefficients must be symmetric")

    @classmethod
    def euclidean(cls) -> "Metric":
        return cls(None)

    @property
    def is_euclidean(self) -> bool:
        return self.entries is None

    def matrix(self, p):
        p = np.asarray(p, dtype=float)
        if self.entries is None:
            return np.broadcast_to(np.eye(3), p.shape[:-1] + (3, 3)).copy()
        G = np.empty(p.shape[:-1] + (3, 3))
        for i in range(3):
            for j in range(3):
                G[..., i, j] = self.entries[i][j](p)
        return G

    def check_positive(self, p) -> bool:
        try:
            np.linalg.cholesky(self.matrix(p))
        except np.linalg.LinAlgError:
            return False
        return True

    def inner(self, p, u, v):
        if self.entries is None:
            return np.sum(u * v, axis=-1)
        return np.einsum("...i,...ij,...j->...", u, self.matrix(p), v)


# ---------------------------------------------------------------------------
# slicing functions


@dataclass(frozen=True)
class RadialSlicer:
    """Slice by distance to the origin."""

    kind: str = "radial"

    def value(self, p):
        return np.linalg.norm(p, axis=-1)

    def grad(self, p):
        p = np.asarray(p, dtype=float)
        return p / np.linalg.norm(p, axis=-1, keepdims=True)


@dataclass(frozen=True)
class HeightSlicer:
    """Slice by the height ``direction · p`` (adapted coordinate of a cuspidal cone)."""

    direction: tuple = (0.0, 0.0, 1.0)
    kind: str = "height"

    def value(self, p):
        return np.asarray(p, dtype=float) @ np.asarray(self.direction)

    def grad(self, p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(np.asarray(self.direction, dtype=float), p.shape).copy()


@dataclass(frozen=True)
class Surface:
    """The component ``S0`` of ``{F = 0} minus the origin`` containing ``seed_point``."""

    equation: PolyFunction
    seed_point: tuple = (1.0, 0.0, 0.0)
    epsilon0: float = 0.5
    slicer: object = field(default_factory=RadialSlicer)

    def __post_init__(self):
        if abs(self.equation(np.zeros(3))) > 0:
            raise PreconditionError("surface equation must vanish at the origin")
        if not self.epsilon0 > 0:
            raise PreconditionError("epsilon0 must be positive")

    def with_slicer(self, slicer) -> "Surface":
        return replace(self, slicer=slicer)

    def seed(self):
        return project_to_surface(self, np.asarray(self.seed_point, dtype=float))

    def check_isolated(self, n: int = 1000, rng=None, r_lo: float = 1e-4) -> float:
        """Smallest normalized ``|grad F|`` over sampled points of S0; raises if it vanishes."""
        pts = sample_surface_points(self, n, rng=rng, r_lo=r_lo)
        g = np.linalg.norm(self.equation.gradient(pts), axis=-1)
        scale = np.linalg.norm(pts, axis=-1) ** max(self.equation.degree - 1, 0)
        worst = float(np.min(g / np.maximum(scale, 1e-300)))
        if not worst > 0:
            raise PreconditionError("gradient of the surface equation vanishes on S0")
        return worst


# ---------------------------------------------------------------------------
# projection and the restricted gradient


def project_to_surface(s: Surface, p, tol: float = 1e-12, max_steps: int = 50):
    """Newton steps along ``grad F`` until ``|F| < tol`` and the step is at rounding level."""
    F = s.equation
    q = np.array(p, dtype=float)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    val = F(q)
    for _ in range(max_steps):
        g = F.gradient(q)
        gg = np.sum(g * g, axis=-1)
        if np.any(gg == 0):
            raise PreconditionError("cannot project: gradient of F vanishes (singular point)")
        step = (val / gg)[:, None] * g
        lam = np.ones(len(q))
        for _ in range(30):
            trial = q - lam[:, None] * step
            tval = F(trial)
            worse = np.abs(tval) > np.abs(val)
            if not np.any(worse & (lam > 1e-6)):
                break
            lam = np.where(worse, lam * 0.5, lam)
        q, prev, val = trial, val, tval
        small_step = np.linalg.norm(lam[:, None] * step, axis=-1) <= 1e-15 * np.linalg.norm(q, axis=-1)
        if np.all((np.abs(val) < tol) & (small_step | (np.abs(val) >= np.abs(prev) * 0.5))):
            break
    else:
        if np.any(np.abs(val) >= tol):
            raise ConvergenceError("projection did not converge in %d steps" % max_steps, float(np.max(np.abs(val))))
    if np.any(np.abs(val) >= tol):
        raise ConvergenceError("projection did not converge", float(np.max(np.abs(val))))
    return q[0] if single else q


def _normal_distance(s: Surface, p):
    g = np.linalg.norm(s.equation.gradient(p), axis=-1)
    return np.abs(s.equation(p)) / np.maximum(g, 1e-300), g


def restricted_gradient(s: Surface, m: Metric, f: PolyFunction, p, check: bool = True):
    """g-gradient of ``f`` projected g-orthogonally onto the tangent plane of S at ``p``.

    Accepts a single point or an array of points.
    """
    p = np.asarray(p, dtype=float)
    nF = s.equation.gradient(p)
    if check:
        dist, g = _normal_distance(s, p)
        if np.any(g == 0) or np.any(np.linalg.norm(p, axis=-1) == 0):
            raise PreconditionError("restricted gradient undefined at a singular point")
        if np.any(dist > ON_SURFACE_TOL * np.maximum(1.0, np.linalg.norm(p, axis=-1))):
            raise PreconditionError("point is not on the surface")
    df = f.gradient(p)
    if m is None or m.is_euclidean:
        u, w = df, nF
    else:
        G = m.matrix(p)
        u = np.linalg.solve(G, df[..., None])[..., 0]
        w = np.linalg.solve(G, nF[..., None])[..., 0]
    num = np.sum(nF * u, axis=-1)
    den = np.sum(nF * w, axis=-1)
    coef = np.where(den != 0, num / np.where(den == 0, 1.0, den), 0.0)
    return u - coef[..., None] * w


# ---------------------------------------------------------------------------
# slices


def correct_to_slice(s: Surface, q, level, max_iter: int = 40):
    """Gauss-Newton onto ``{F = 0, L = level}``; minimum-norm steps, rows normalized."""
    F, sl = s.equation, s.slicer
    q = np.array(q, dtype=float)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    level = np.broadcast_to(np.asarray(level, dtype=float), q.shape[:-1])
    active = np.ones(len(q), dtype=bool)
    prev = np.full(len(q), np.inf)
    for _ in range(max_iter):
        qa = q[active]
        gF = F.gradient(qa)
        gL = sl.grad(qa)
        nF = np.linalg.norm(gF, axis=-1)
        nL = np.linalg.norm(gL, axis=-1)
        if np.any(nF == 0) or np.any(nL == 0):
            raise SliceError("slice corrector hit a singular point")
        a, b = gF / nF[:, None], gL / nL[:, None]
        r1 = F(qa) / nF
        r2 = (sl.value(qa) - level[active]) / nL
        ab = np.sum(a * b, axis=-1)
        det = 1.0 - ab * ab
        if np.any(det < 1e-14):
            raise SliceError("slice is tangent to the surface (critical point of the slicing function)")
        l1 = (-r1 + ab * r2) / det
        l2 = (-r2 + ab * r1) / det
        q[active] = qa + l1[:, None] * a + l2[:, None] * b
        res = np.maximum(np.abs(r1), np.abs(r2))
        idx = np.flatnonzero(active)
        done = (res == 0) | (res > 0.5 * prev[idx])
        prev[idx] = res
        active[idx[done]] = False
        if not active.any():
            break
    return q[0] if single else q


def retraction_field(s: Surface, q):
    """``dq/d(log L)``: moves along S so that ``log L`` changes at unit rate."""
    gF = s.equation.gradient(q)
    n = gF / np.linalg.norm(gF, axis=-1, keepdims=True)
    gL = s.slicer.grad(q)
    t = gL - np.sum(gL * n, axis=-1, keepdims=True) * n
    den = np.sum(gL * t, axis=-1, keepdims=True)
    if np.any(den <= 0):
        raise SliceError("retraction field undefined: slicing function critical on S")
    return s.slicer.value(q)[..., None] * t / den


def retraction_flow(s: Surface, q, levels, dlog: float = 0.05):
    """Carry points ``q`` (all on one slice) to each of ``levels`` along the retraction field.

    Returns an array of shape ``(len(levels),) + q.shape``. Levels may lie on
    either side of the starting level and need not be sorted.
    """
    q = np.array(q, dtype=float)
    levels = np.asarray(levels, dtype=float)
    if np.any(levels <= 0):
        raise PreconditionError("levels must be positive")
    start = math.log(float(np.atleast_1d(s.slicer.value(q)).ravel()[0]))
    logs = np.log(levels)
    out = np.empty(levels.shape + q.shape)
    # walk each side of the start separately, nearest level first
    for side in (-1, 1):
        idx = [i for i in range(len(levels)) if (logs[i] - start) * side > 0 or (side == 1 and logs[i] == start)]
        idx.sort(key=lambda i: abs(logs[i] - start))
        cur, cur_log = q.copy(), start
        for i in idx:
            span = logs[i] - cur_log
            nsteps = int(math.ceil(abs(span) / dlog))
            h = span / nsteps if nsteps else 0.0
            for _ in range(nsteps):
                k1 = retraction_field(s, cur)
                k2 = retraction_field(s, cur + 0.5 * h * k1)
                k3 = retraction_field(s, cur + 0.5 * h * k2)
                k4 = retraction_field(s, cur + h * k3)
                cur = cur + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                cur_log += h
                cur = correct_to_slice(s, cur, math.exp(cur_log))
            cur = correct_to_slice(s, cur, levels[i])
            cur_log = logs[i]
            out[i] = cur
    return out


def point_on_level(s: Surface, level: float):
    """A point of S0 on the slice ``L = level``, reached from the seed by retraction."""
    q0 = s.seed()
    return retraction_flow(s, q0, [level])[0]


def _tangent(s: Surface, q):
    t = np.cross(s.equation.gradient(q), s.slicer.grad(q))
    n = np.linalg.norm(t)
    if n == 0:
        raise SliceError("degenerate slice tangent")
    return t / n


def _trace_closed(s: Surface, q0, level: float, max_steps: int, target_angle: float = 0.05):
    pts = [q0]
    T0 = _tangent(s, q0)
    q, T = q0, T0
    h = 1e-3 * max(level, 1e-300)
    travelled = 0.0
    rejects = 0
    prev_side = None
    steps = 0
    while steps < max_steps:
        trial = correct_to_slice(s, q + h * T, level)
        move = np.linalg.norm(trial - q)
        T1 = _tangent(s, trial)
        ang = math.acos(max(-1.0, min(1.0, float(T @ T1))))
        drift = np.linalg.norm(trial - (q + h * T))
        if ang > 2 * target_angle or drift > 0.25 * h or move == 0:
            h *= 0.25
            rejects += 1
            if rejects > 200:
                raise SliceError("slice not a closed curve (step size collapsed)")
            continue
        steps += 1
        travelled += move
        q, T = trial, T1
        # closure test: passing the start point in the direction of travel
        rel = q - q0
        side = float(rel @ T0)
        if travelled > 4 * h and np.linalg.norm(rel) < 2.0 * h and prev_side is not None and prev_side < 0 <= side:
            return np.array(pts)
        prev_side = side if np.linalg.norm(rel) < 3.0 * h else None
        pts.append(q)
        if ang < 0.5 * target_angle:
            h *= 1.5
        elif ang > target_angle:
            h *= 0.7
    raise SliceError("slice not a closed curve")


def resample_closed(s: Surface, pts, level: float, n_points: int, offset: float = 0.0, passes: int = 2):
    """Resample a closed polyline on a slice at equal arc-length spacing.

    ``offset`` (fraction of the length) shifts where sampling starts.
    """
    for _ in range(passes):
        closed = np.vstack([pts, pts[:1]])
        seg = np.linalg.norm(np.diff(closed, axis=0), axis=-1)
        u = np.concatenate([[0.0], np.cumsum(seg)])
        total = u[-1]
        spline = CubicSpline(u, closed, bc_type="periodic", axis=0)
        # arc length of the spline itself, by dense quadrature
        dense = np.linspace(0, total, 8 * len(closed) + 1)
        speed = np.linalg.norm(spline(dense, 1), axis=-1)
        arc = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(dense))])
        want = (np.arange(n_points) / n_points + offset) % 1.0 * arc[-1]
        params = np.interp(want, arc, dense)
        pts = correct_to_slice(s, spline(params), level)
        offset = 0.0
    return pts


def slice_curve(s: Surface, level: float, n_points: int = 256, start=None):
    """Ordered closed polyline sampling ``S0 ∩ {L = level}``.

    Points are equally spaced in arc length. Orientation is that of
    ``grad F × grad L``, which is the same on every slice of S0.
    """
    if n_points < 64:
        raise PreconditionError("n_points must be at least 64")
    if not 0 < level <= s.epsilon0 * (1 + 1e-12):
        raise PreconditionError(f"slice level {level} outside (0, epsilon0={s.epsilon0}]")
    q0 = point_on_level(s, level) if start is None else correct_to_slice(s, start, level)
    raw = _trace_closed(s, q0, level, max_steps=10 * n_points)
    # a dense intermediate pass keeps the arc-length spacing accurate to ~1e-10
    dense = resample_closed(s, raw, level, max(4 * n_points, 512), passes=1)
    return resample_closed(s, dense, level, n_points, passes=1)


def sample_surface_points(s: Surface, n: int, rng=None, r_lo: float = 1e-4, n_levels: int = 10):
    """Points of S0 with slice values spread log-uniformly in ``[r_lo, epsilon0)``."""
    rng = np.random.default_rng(rng)
    levels = np.geomspace(r_lo * 1.01, s.epsilon0 * 0.99, n_levels)
    per = int(math.ceil(n / n_levels))
    out = []
    for lv in levels:
        c = slice_curve(s, lv, max(64, 2 * per))
        out.append(c[rng.choice(len(c), per, replace=False)])
    pts = np.vstack(out)
    return pts[rng.permutation(len(pts))[:n]]
