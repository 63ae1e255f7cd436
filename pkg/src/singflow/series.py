"""Q-generalized power series: exact rational exponents, float coefficients.

A :class:`GenSeries` stores ``sum_k a_k T**alpha_k`` with strictly increasing
non-negative rational exponents. Besides the small algebra needed to strip
expansions (:func:`add`, :func:`mul`), the module provides
:func:`fit_series`, which recovers such a series from samples ``(t, v)``
taken as ``t -> 0+``.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import DomainError, FitError

__all__ = [
    "GenSeries",
    "SeriesFit",
    "SeriesFitWarning",
    "add",
    "mul",
    "evaluate",
    "leading",
    "snap_rational",
    "fit_series",
    "fit_series_detailed",
]

CANCEL_TOL = 1e-12
DEFAULT_MAX_EXPONENT = Fraction(20)
DEFAULT_DENOMINATOR_CAP = 64


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, str):
        return Fraction(x)
    # floats are taken at face value only when they are exact small rationals
    return Fraction(x).limit_denominator(10**6)


@dataclass(frozen=True)
class GenSeries:
    """Finite Q-generalized series, terms sorted by exponent."""

    terms: tuple[tuple[Fraction, float], ...] = ()

    def __post_init__(self):
        prev = None
        for e, c in self.terms:
            if not isinstance(e, Fraction):
                raise TypeError("exponents must be Fraction instances")
            if e < 0:
                raise ValueError(f"negative exponent {e}")
            if c == 0.0:
                raise ValueError("zero coefficients are not stored")
            if prev is not None and e <= prev:
                raise ValueError("exponents must be strictly increasing")
            prev = e

    @classmethod
    def from_terms(cls, pairs: Iterable[tuple[object, float]], tol: float = 0.0) -> "GenSeries":
        """Build a series from unsorted ``(exponent, coeff)`` pairs, merging duplicates."""
        acc: dict[Fraction, float] = {}
        for e, c in pairs:
            e = _as_fraction(e)
            acc[e] = acc.get(e, 0.0) + float(c)
        return cls(tuple((e, c) for e, c in sorted(acc.items()) if abs(c) > tol))

    @classmethod
    def zero(cls) -> "GenSeries":
        return cls(())

    @classmethod
    def monomial(cls, exponent, coeff: float = 1.0) -> "GenSeries":
        return cls.from_terms([(exponent, coeff)])

    def is_zero(self) -> bool:
        return not self.terms

    @property
    def exponents(self) -> list[Fraction]:
        return [e for e, _ in self.terms]

    @property
    def coefficients(self) -> list[float]:
        return [c for _, c in self.terms]

    def __len__(self):
        return len(self.terms)

    def __add__(self, other):
        return add(self, other)

    def __neg__(self):
        return GenSeries(tuple((e, -c) for e, c in self.terms))

    def __sub__(self, other):
        return add(self, -other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            if other == 0:
                return GenSeries.zero()
            return GenSeries(tuple((e, c * other) for e, c in self.terms))
        return mul(self, other)

    __rmul__ = __mul__

    def __call__(self, t):
        return evaluate(self, t)

    def derivative(self) -> "GenSeries":
        return GenSeries.from_terms((e - 1, c * float(e)) for e, c in self.terms if e != 0)

    def scale_exponents(self, k) -> "GenSeries":
        """Substitute ``T -> T**k`` (used to rewrite a branch in the blow-up height)."""
        k = _as_fraction(k)
        return GenSeries(tuple((e * k, c) for e, c in self.terms))

    def to_records(self) -> list[dict]:
        return [{"num": e.numerator, "den": e.denominator, "coeff": c} for e, c in self.terms]

    @classmethod
    def from_records(cls, records: Sequence[dict]) -> "GenSeries":
        return cls.from_terms((Fraction(int(r["num"]), int(r["den"])), float(r["coeff"])) for r in records)

    def __str__(self):
        if not self.terms:
            return "0"
        parts = []
        for e, c in self.terms:
            parts.append(f"{c:+.10g}*T^({e})" if e != 0 else f"{c:+.10g}")
        return " ".join(parts)


def add(a: GenSeries, b: GenSeries, tol: float = CANCEL_TOL) -> GenSeries:
    acc: dict[Fraction, float] = {}
    for e, c in a.terms + b.terms:
        acc[e] = acc.get(e, 0.0) + c
    return GenSeries(tuple((e, c) for e, c in sorted(acc.items()) if abs(c) >= tol))


def mul(a: GenSeries, b: GenSeries, max_exponent=DEFAULT_MAX_EXPONENT) -> GenSeries:
    max_exponent = _as_fraction(max_exponent)
    acc: dict[Fraction, float] = {}
    for ea, ca in a.terms:
        for eb, cb in b.terms:
            e = ea + eb
            if e > max_exponent:
                continue
            acc[e] = acc.get(e, 0.0) + ca * cb
    return GenSeries(tuple((e, c) for e, c in sorted(acc.items()) if abs(c) >= CANCEL_TOL))


def evaluate(a: GenSeries, t):
    """Sum of the stored terms at ``t > 0`` (scalar or array)."""
    arr = np.asarray(t, dtype=float)
    if np.any(arr <= 0):
        raise DomainError("series evaluation requires t > 0")
    out = np.zeros_like(arr)
    for e, c in a.terms:
        out = out + c * arr ** float(e)
    if out.ndim == 0:
        return float(out)
    return out


def leading(a: GenSeries) -> tuple[Fraction, float]:
    if not a.terms:
        raise ValueError("no leading term")
    return a.terms[0]


def snap_rational(x: float, cap: int = DEFAULT_DENOMINATOR_CAP) -> Fraction:
    """Continued-fraction best approximation of ``x`` with denominator <= cap."""
    return Fraction(float(x)).limit_denominator(cap)


# ---------------------------------------------------------------------------
# fitting


class SeriesFitWarning(UserWarning):
    pass


@dataclass
class SeriesFit:
    series: GenSeries
    residual: float
    quality: str = "ok"
    raw_exponents: list[float] = field(default_factory=list)
    history: list[float] = field(default_factory=list)


def _envelope(v: np.ndarray, width: int = 3) -> np.ndarray:
    a = np.abs(v)
    env = a.copy()
    n = len(a)
    for k in range(1, width + 1):
        env[k:] = np.maximum(env[k:], a[: n - k])
        env[: n - k] = np.maximum(env[: n - k], a[k:])
    floor = max(env.max() * 1e-300, 1e-300)
    return np.maximum(env, floor)


def _design(logt: np.ndarray, exps: Sequence[float], weight: np.ndarray) -> np.ndarray:
    return np.exp(np.outer(logt, exps)) * weight[:, None]


def _lstsq(logt, v, exps, weight):
    with np.errstate(over="ignore", invalid="ignore"):
        M = _design(logt, exps, weight)
    if not np.all(np.isfinite(M)):
        return np.zeros(len(exps)), np.full(len(v), 1e10)
    norms = np.linalg.norm(M, axis=0)
    norms[norms == 0] = 1.0
    c, *_ = np.linalg.lstsq(M / norms, v * weight, rcond=None)
    c = c / norms
    res = v * weight - M @ c
    return c, res


def _leading_slope(logt, r, env, noise):
    mask = np.abs(r) > noise * env
    if mask.sum() < 3:
        return None
    lt, lr = logt[mask], np.log(np.abs(r[mask]))
    span = lt[-1] - lt[0]
    if span <= 0:
        return None
    window = lt <= lt[0] + max(span / 3.0, 1e-12)
    if window.sum() < 3:
        window = np.zeros_like(window)
        window[:3] = True
    slope = np.polyfit(lt[window], lr[window], 1)[0]
    return float(slope)


def _refine(logt, v, weight, exps0):
    exps0 = np.asarray(exps0, float)

    def fun(x):
        return _lstsq(logt, v, x, weight)[1]

    try:
        with np.errstate(over="ignore", invalid="ignore"):
            sol = least_squares(fun, exps0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=400 * (len(exps0) + 1))
            x = sol.x
    except Exception:  # degenerate design; keep the start
        x = exps0
    return np.sort(x)


def _nearest_rationals(x: float, cap: int, k: int = 2) -> list[Fraction]:
    best = snap_rational(x, cap)
    out = [best]
    # next-best candidate on the other side of x
    step = Fraction(1, cap * cap)
    probe = Fraction(x).limit_denominator(10**9)
    side = probe + (step if best <= probe else -step)
    for _ in range(4 * cap):
        cand = side.limit_denominator(cap)
        if cand != best:
            out.append(cand)
            break
        side += step if best <= probe else -step
    return out[:k]


def _snapped_model(logt, v, weight, exps_float, cap):
    """Snap exponents to rationals and refit coefficients.

    The nearest rational is tried first; if that leaves a much larger
    residual than the continuous fit, the runner-up rational for each
    exponent is also tried.
    """
    if not exps_float:
        return [], np.zeros(0), v * weight
    options = [_nearest_rationals(x, cap) for x in exps_float]
    combos = [[o[0] for o in options]]
    if len(exps_float) <= 5:
        combos = [list(c) for c in itertools.product(*options)]
    best = None
    for combo in combos:
        snapped = sorted(set(combo))
        if any(e < 0 for e in snapped):
            continue
        c, res = _lstsq(logt, v, [float(e) for e in snapped], weight)
        rel = float(np.max(np.abs(res)))
        if best is None or rel < best[0] * (1 - 1e-9):
            best = (rel, snapped, c, res)
    if best is None:
        raise FitError("fitted a negative exponent")
    _, snapped, c, res = best
    return _prune(logt, v, weight, snapped, c, res)


def _prune(logt, v, weight, snapped, c, res, tiny=1e-9):
    """Drop terms whose weighted contribution is negligible, then refit."""
    contrib = np.max(np.abs(_design(logt, [float(e) for e in snapped], weight) * c), axis=0)
    keep = [e for e, m in zip(snapped, contrib) if m > tiny]
    if len(keep) == len(snapped) or not keep:
        return snapped, c, res
    c2, res2 = _lstsq(logt, v, [float(e) for e in keep], weight)
    if np.max(np.abs(res2)) <= max(np.max(np.abs(res)) * 10, tiny):
        return keep, c2, res2
    return snapped, c, res


def _start_guesses(logt, residual, env, exps, noise):
    guesses = []
    g = _leading_slope(logt, residual, env, noise)
    if g is not None:
        guesses.append(g)
    g = _trailing_slope(logt, residual, env, noise)
    if g is not None:
        guesses.append(g)
    srt = sorted(exps)
    for a, b in zip(srt, srt[1:]):
        guesses.append(0.5 * (a + b))
    if srt:
        guesses.append(srt[-1] + 0.25)
        guesses.append(max(srt[0] - 0.25, 0.0))
    uniq = []
    for x in guesses:
        if all(abs(x - y) > 1e-3 for y in uniq):
            uniq.append(x)
    return uniq


def _trailing_slope(logt, r, env, noise):
    mask = np.abs(r) > noise * env
    if mask.sum() < 3:
        return None
    lt, lr = logt[mask], np.log(np.abs(r[mask]))
    window = lt >= lt[-1] - max((lt[-1] - lt[0]) / 3.0, 1e-12)
    if window.sum() < 3:
        return None
    return float(np.polyfit(lt[window], lr[window], 1)[0])


def _continuous_fit(logt, v, weight, exps):
    x = _refine(logt, v, weight, exps)
    kept = [x[0]]
    for y in x[1:]:
        if y - kept[-1] > 1e-3:
            kept.append(y)
    _, res = _lstsq(logt, v, kept, weight)
    return [float(y) for y in kept], float(np.max(np.abs(res)))


def fit_series_detailed(
    t,
    v,
    max_terms: int = 4,
    exponent_denominator_cap: int = DEFAULT_DENOMINATOR_CAP,
    rel_tol: float = 1e-6,
    min_decades: float = 3.0,
) -> SeriesFit:
    """Fit a Q-generalized series to samples of a function near ``t = 0``.

    Each round estimates the leading exponent of the current residual from a
    log-log least-squares slope over its smallest-t third, adds that exponent
    to the model, jointly re-optimizes all exponents by variable projection
    (several starting points for the new exponent), snaps them to rationals
    with denominator at most ``exponent_denominator_cap`` and refits the
    coefficients.

    Rounds stop when the relative residual falls below ``rel_tol`` and one
    more term fails to improve it tenfold, or when ``max_terms`` is
    reached. The best round is kept, so a round that fits worse than its
    predecessor only flags the quality. Residuals are measured
    relative to a local envelope of ``|v|``, so every decade of ``t`` carries
    equal weight.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    if t.ndim != 1 or t.shape != v.shape or len(t) < 4:
        raise FitError("need at least 4 samples of matching shape")
    if np.any(t <= 0) or not np.all(np.isfinite(v)) or not np.all(np.isfinite(t)):
        raise FitError("samples must have t > 0 and finite values")
    if np.any(np.diff(t) <= 0):
        raise FitError("samples must be sorted by strictly increasing t")
    if t[-1] / t[0] < 10.0 ** min_decades * (1 - 1e-9):
        raise FitError(f"insufficient t-range: need {min_decades:g} decades, got {math.log10(t[-1] / t[0]):.2f}")
    if not np.any(v):
        return SeriesFit(GenSeries.zero(), 0.0)

    logt = np.log(t)
    env = _envelope(v)
    weight = 1.0 / env
    cap = int(exponent_denominator_cap)
    noise = rel_tol * 1e-3

    exps_float: list[float] = []
    best = SeriesFit(GenSeries.zero(), float(np.max(np.abs(v) * weight)))
    history = [best.residual]
    residual = v.copy()
    quality = "ok"
    for _ in range(max_terms):
        guesses = _start_guesses(logt, residual, env, exps_float, noise)
        if not guesses:
            break
        trial = None
        for g in guesses:
            cand = _continuous_fit(logt, v, weight, exps_float + [g])
            if trial is None or cand[1] < trial[1]:
                trial = cand
        exps_float = trial[0]
        snapped, coeffs, wres = _snapped_model(logt, v, weight, exps_float, cap)
        rel = float(np.max(np.abs(wres)))
        history.append(rel)
        if best.residual < rel_tol and rel > best.residual * 1e-1:
            break  # extra term did not pay for itself
        if rel < best.residual:
            best = SeriesFit(
                GenSeries.from_terms((e, float(c)) for e, c in zip(snapped, coeffs)),
                rel,
                raw_exponents=list(exps_float),
            )
        else:
            # a lone leading term can fit worse than zero when v has a root
            # in range; the next term may still resolve it
            quality = "non-monotone residual decay"
        if rel < rel_tol * 1e-6:
            break
        residual = wres / weight
    else:
        if best.residual >= rel_tol:
            quality = "max_terms reached"
    best.quality = "ok" if best.residual < rel_tol else quality
    best.history = history
    return best


def fit_series(
    samples,
    max_terms: int = 4,
    exponent_denominator_cap: int = DEFAULT_DENOMINATOR_CAP,
    rel_tol: float = 1e-6,
) -> GenSeries:
    """Fit a series to ``samples``, a sequence of ``(t, v)`` pairs sorted by ``t``.

    Emits :class:`SeriesFitWarning` when the residual did not reach ``rel_tol``.
    """
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise FitError("samples must be (t, v) pairs")
    fit = fit_series_detailed(arr[:, 0], arr[:, 1], max_terms, exponent_denominator_cap, rel_tol)
    if fit.quality != "ok":
        warnings.warn(f"fit_series: {fit.quality} (residual {fit.residual:.3g})", SeriesFitWarning, stacklevel=2)
    return fit.series
