"""Asymptotic expansion of restricted functions and limit-dynamics verdicts.

The verdicts read the leading r-orders of the cylinder system::

    Dicritical      rdot = r^(mu+1) H(phi) + ...,  phidot = O(r^(mu+eta)), eta > 0, H of one sign
    NonMonodromic   phidot = r^mu H'(phi) + ...,   rdot = O(r^(mu+1)), H' changes sign
    Spiraling       probe trajectories wind monotonically at least ``spiral_turns`` times

Everything depends only on signs, exponent differences and profile shapes,
so multiplying the field by a positive function leaves the verdict alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .blowup import CylinderChart
from .errors import ExpansionError, SingflowError
from .flow import CylinderSystem, CylinderTrajectory, Trajectory, chart_integrate
from .geometry import PolyFunction, Surface
from .series import GenSeries, fit_series_detailed, leading

__all__ = [
    "Expansion",
    "Classification",
    "SpiralReport",
    "asymptotic_expansion",
    "classify_system",
    "detect_spiraling",
    "oscillation_test",
    "winding_slope",
]

CONSTANCY_TOL = 1e-3
SPIRAL_TURNS = 3.0
VANISH_FLOOR = 1e-12
# cancellation floor of a stripped remainder, relative to the original function
STRIP_FLOOR = 1e-9


@dataclass
class Expansion:
    """``f = P(r) + r**alpha F(phi) + ...`` along the chart.

    ``alpha`` is None when the stripped remainder vanishes to numerical
    precision (``f`` equals ``P`` on the sampled range).
    """

    P: GenSeries
    alpha: Fraction | None
    phi: np.ndarray
    F_profile: np.ndarray
    kind: str
    history: list = field(default_factory=list)

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "P": [{"exponent": str(e), "coeff": c} for e, c in self.P.terms],
            "alpha": None if self.alpha is None else str(self.alpha),
            "profile": {"phi": self.phi.tolist(), "F": self.F_profile.tolist()},
            "strips": self.history,
        }


@dataclass
class Classification:
    verdict: str
    mu: Fraction | None = None
    eta: Fraction | None = None
    evidence: dict = field(default_factory=dict)


@dataclass
class SpiralReport:
    spiraling: bool
    winding: float
    crossings: list
    signs: list


def _fit_leading(r, v, max_terms=3):
    fit = fit_series_detailed(r, v, max_terms=max_terms, exponent_denominator_cap=64)
    if fit.series.is_zero():
        return None, fit
    return leading(fit.series), fit


def _coefficient_at(r, v, alpha):
    """Coefficient of ``r**alpha`` in the expansion of ``v(r)`` (0 if the order is higher)."""
    if not np.any(v != 0):
        return 0.0
    try:
        fit = fit_series_detailed(r, v, max_terms=3, exponent_denominator_cap=64)
    except SingflowError:
        return float(v[0] / r[0] ** float(alpha))
    for e, c in fit.series.terms:
        if e == alpha:
            return c
        if e > alpha:
            break
    return 0.0


def asymptotic_expansion(chart: CylinderChart, s: Surface, f: PolyFunction, max_strips: int = 4,
                         constancy_tol: float = CONSTANCY_TOL, n_profile: int = 32,
                         min_points: int = 10) -> Expansion:
    """Strip constant circle profiles from ``f`` along the chart until one is not constant.

    The expansion variable is the chart radius ``r``. Each round fits the
    leading exponent of ``mu(r) = max_phi |f_k|`` and the limit profile
    ``f_k / r**alpha_k`` per direction; a constant profile is stripped as
    ``a_k r**alpha_k``.
    """
    r = chart.r_grid
    vals = np.asarray(f(chart.points), dtype=float)
    mu0 = np.max(np.abs(vals), axis=1)
    if mu0[-1] < VANISH_FLOOR:
        raise ExpansionError("function vanishes on component")
    stride = max(1, chart.n_phi // n_profile)
    cols = np.arange(0, chart.n_phi, stride)
    phi = chart.phi_grid[cols]
    P = GenSeries.zero()
    history = []
    cur = vals
    for _ in range(max_strips):
        mu = np.max(np.abs(cur), axis=1)
        ok = mu > STRIP_FLOOR * mu0
        if ok.sum() < min_points:
            return Expansion(P, None, phi, np.zeros(len(phi)), "pure_series", history)
        rr = r[ok]
        lead, _ = _fit_leading(rr, mu[ok])
        if lead is None:
            return Expansion(P, None, phi, np.zeros(len(phi)), "pure_series", history)
        alpha = lead[0]
        prof = np.array([_coefficient_at(rr, cur[ok, k], alpha) for k in cols])
        scale = np.max(np.abs(prof))
        variation = float((prof.max() - prof.min()) / scale) if scale > 0 else 0.0
        history.append({"alpha": str(alpha), "variation": variation})
        if scale == 0 or variation >= constancy_tol:
            return Expansion(P, alpha, phi, prof, "angular_remainder", history)
        a = _coefficient_at(rr, np.mean(cur[ok], axis=1), alpha)
        history[-1]["coeff"] = a
        P = P + GenSeries.monomial(alpha, a)
        cur = cur - a * r[:, None] ** float(alpha)
    # every profile was constant up to the strip budget; the next order is alpha
    mu = np.max(np.abs(cur), axis=1)
    ok = mu > STRIP_FLOOR * mu0
    alpha = None
    if ok.sum() >= min_points:
        lead, _ = _fit_leading(r[ok], mu[ok])
        alpha = None if lead is None else lead[0]
    return Expansion(P, alpha, phi, np.zeros(len(phi)), "pure_series", history)


# ---------------------------------------------------------------------------
# crossings and winding


def _branch_values(branch, r):
    if callable(branch):
        return np.asarray(branch(r), dtype=float) * np.ones_like(r)
    return np.full_like(r, float(branch))


def detect_spiraling(traj: CylinderTrajectory, half_branches, min_crossings: int = 3) -> SpiralReport:
    """Signed crossings of ``traj`` with branches ``phi = b`` (constants or callables of r).

    A crossing of the branch happens whenever ``phi_unwound - b(r)`` passes a
    multiple of ``2 pi``.
    """
    phi = np.asarray(traj.phi, dtype=float)
    crossings, signs = [], []
    for b in half_branches:
        d = phi - _branch_values(b, np.asarray(traj.r, dtype=float))
        k = np.floor(d / (2 * np.pi))
        jumps = np.diff(k)
        jumps = jumps[jumps != 0]
        crossings.append(int(np.sum(np.abs(jumps))))
        signs.append(sorted({int(np.sign(j)) for j in jumps}))
    winding = float((phi[-1] - phi[0]) / (2 * np.pi)) if len(phi) else 0.0
    spiraling = bool(half_branches) and all(c >= min_crossings and len(sg) == 1 for c, sg in zip(crossings, signs))
    return SpiralReport(spiraling, winding, crossings, signs)


def winding_slope(traj: CylinderTrajectory) -> float:
    """Least-squares slope of ``phi_unwound`` against ``-log r``."""
    x = -np.log(np.asarray(traj.r, dtype=float))
    y = np.asarray(traj.phi, dtype=float)
    A = np.vstack([x, np.ones_like(x)]).T
    return float(np.linalg.lstsq(A, y, rcond=None)[0][0])


def oscillation_test(tr: Trajectory, h: PolyFunction, side: PolyFunction | None = None) -> int:
    """Number of sign changes of ``h`` along the samples of ``tr``.

    With ``side`` only changes where ``side > 0`` count, which turns the zero
    set of ``h`` into a half-branch. Exact zeros inherit the previous sign.
    """
    v = np.asarray(h(tr.points), dtype=float)
    sgn = np.sign(v)
    for i in range(1, len(sgn)):
        if sgn[i] == 0:
            sgn[i] = sgn[i - 1]
    change = np.flatnonzero(sgn[1:] * sgn[:-1] < 0)
    if side is not None:
        sv = np.asarray(side(tr.points), dtype=float)
        keep = (sv[change] > 0) | (sv[change + 1] > 0)
        change = change[keep]
    return int(len(change))


# ---------------------------------------------------------------------------
# verdicts


def _leading_profile(exps, mask):
    """Minimal exponent over unmasked directions and the coefficient profile at it."""
    orders = [e[0] for e, m in zip(exps, mask) if e is not None and not m]
    if not orders:
        return None, np.zeros(len(exps))
    a = min(orders)
    prof = np.array([e[1] if (e is not None and e[0] == a) else 0.0 for e in exps])
    return a, prof


def _sign_changes(v, mask, tol):
    s = [np.sign(x) for x, m in zip(v, mask) if not m and abs(x) > tol]
    if not s:
        return 0
    return int(sum(1 for a, b in zip(s, s[1:] + s[:1]) if a != b))


def _probe(sys: CylinderSystem, n_probes: int, r_start: float, r_min: float):
    out = []
    mask = sys.omega_mask
    cand = [k for k in range(len(sys.phi_grid)) if not mask[k]]
    if not cand:
        return out
    picks = [cand[int(i)] for i in np.linspace(0, len(cand) - 1, n_probes, endpoint=False).round()]
    lr = math.log(r_start)
    for k in dict.fromkeys(picks):
        phi0 = float(sys.phi_grid[k])
        u, w, _ = sys.direction(phi0, lr)
        if u == 0 and w == 0:
            continue
        # toward the bottom circle when the field allows it
        direction = -1 if u > 0 else 1
        tr = chart_integrate(sys, (phi0, r_start), r_min=r_min, direction=direction, max_arc=200.0)
        out.append((phi0, direction, tr))
    return out


def classify_system(sys: CylinderSystem, exp: Expansion | None = None, n_probes: int = 8,
                    spiral_turns: float = SPIRAL_TURNS, profile_tol: float = 1e-6,
                    zero_mean_tol: float = 1e-3) -> Classification:
    """Dicritical / NonMonodromic / Spiraling / Undetermined with diagnostics."""
    mask = np.asarray(sys.omega_mask, dtype=bool)
    a_r, H = _leading_profile(sys.exponents_rdot, mask)
    a_p, K = _leading_profile(sys.exponents_phidot, mask)
    ev = {
        "rdot_order": None if a_r is None else str(a_r),
        "phidot_order": None if a_p is None else str(a_p),
        "omega_fraction": float(mask.mean()),
    }
    if exp is not None:
        ev["expansion"] = exp.describe()

    # probes: integrated winding near the bottom circle
    r_hi, r_lo = float(sys.r_grid[-1]), float(sys.r_grid[0])
    r_start = r_lo * (r_hi / r_lo) ** 0.9
    probes = _probe(sys, n_probes, r_start, r_lo * 1.0001)
    stats = []
    spiral = False
    for phi0, direction, tr in probes:
        inner = tr.r < min(1e-3, r_start * 1e-2)
        dphi = np.diff(tr.phi)
        monotone = bool(np.all(dphi >= -1e-12) or np.all(dphi <= 1e-12))
        turns = abs(tr.phi[-1] - tr.phi[0]) / (2 * np.pi)
        inner_turns = float(abs(tr.phi[inner][-1] - tr.phi[inner][0]) / (2 * np.pi)) if inner.sum() > 1 else 0.0
        rep = detect_spiraling(tr, [phi0 + np.pi / 2])
        stats.append({"phi0": phi0, "direction": direction, "stop": tr.stop_reason, "r_end": float(tr.r[-1]),
                      "turns": float(turns), "inner_turns": inner_turns, "monotone": monotone,
                      "crossings": rep.crossings[0]})
        if monotone and turns >= spiral_turns and tr.r[-1] < tr.r[0]:
            spiral = True
    ev["probes"] = stats

    # Dicritical: rdot leads with a one-signed profile, phidot lags by eta > 0
    if a_r is not None:
        Hm = np.max(np.abs(H[~mask]))
        live = H[~mask]
        one_sign = Hm > 0 and (np.all(live < -profile_tol * Hm) or np.all(live > profile_tol * Hm))
        mu = a_r - 1
        eta = None if a_p is None else a_p - mu
        ev["H_sign"] = int(np.sign(live[0])) if one_sign else 0
        ev["H_profile"] = H.tolist()
        if one_sign and (eta is None or eta > 0):
            ev["eta_note"] = "phidot vanishes to all fitted orders" if eta is None else None
            ev["time_reversed"] = bool(live[0] > 0)
            return Classification("Dicritical", mu=mu, eta=eta, evidence=ev)

    # NonMonodromic: phidot leads with a sign-changing profile, rdot one order higher
    if a_p is not None:
        Km = np.max(np.abs(K[~mask]))
        changes = _sign_changes(K, mask, profile_tol * Km)
        mean = float(np.mean(K[~mask]) / Km) if Km > 0 else 0.0
        ev["phidot_profile"] = K.tolist()
        ev["phidot_sign_changes"] = changes
        ev["phidot_mean_ratio"] = mean
        ev["phidot_zero_mean"] = abs(mean) < zero_mean_tol
        if changes >= 2 and (a_r is None or a_r >= a_p + 1):
            return Classification("NonMonodromic", mu=a_p, evidence=ev)

    if spiral:
        slopes = [winding_slope(tr) for _, _, tr in probes]
        ev["winding_slopes"] = slopes
        return Classification("Spiraling", evidence=ev)
    return Classification("Undetermined", evidence=ev)
