"""Scenario files: JSON with polynomial coefficient lists and run options.

A polynomial is a list of terms, each either ``[[i, j, k], c]`` or
``{"exponents": [i, j, k], "coeff": c}`` for ``c x^i y^j z^k``. Example::

    {
      "name": "cusp",
      "surface": [[[2, 0, 0], 1], [[0, 2, 0], 1], [[0, 0, 5], -1]],
      "function": [[[0, 0, 1], -1]],
      "seed_point": [0.00316, 0, 0.1],
      "options": {"r_min": 1e-6}
    }

An optional ``metric`` is a 3x3 array of polynomials (symmetric). A file
with a ``system`` entry instead describes a synthetic cylinder system for
the ``classify`` subcommand; see :func:`system_from_spec`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ScenarioError
from .geometry import Metric, PolyFunction, Surface

__all__ = ["Options", "Scenario", "load_scenario", "parse_scenario", "parse_poly", "system_from_spec"]


@dataclass
class Options:
    epsilon0: float = 0.5
    r_min: float = 1e-6
    n_phi: int = 128
    n_r: int = 48
    denominator_cap: int = 64
    max_strips: int = 4
    rng_seed: int = 0
    constancy: float = 1e-3
    spiral_turns: float = 3.0
    omega_gap: float = 0.05
    n_probes: int = 8

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Scenario:
    name: str
    surface_eq: PolyFunction
    function: PolyFunction
    seed_point: tuple
    metric: Metric | None = None
    options: Options = field(default_factory=Options)

    def surface(self) -> Surface:
        return Surface(self.surface_eq, seed_point=self.seed_point, epsilon0=self.options.epsilon0)


def parse_poly(raw, where: str) -> PolyFunction:
    if not isinstance(raw, list) or not raw:
        raise ScenarioError(f"{where}: expected a non-empty list of terms", field=where)
    terms = []
    for i, t in enumerate(raw):
        loc = f"{where}[{i}]"
        if isinstance(t, dict):
            if "exponents" not in t or "coeff" not in t:
                raise ScenarioError(f"{loc}: term needs 'exponents' and 'coeff'", field=loc)
            idx, c = t["exponents"], t["coeff"]
        elif isinstance(t, list) and len(t) == 2:
            idx, c = t
        else:
            raise ScenarioError(f"{loc}: term must be [[i, j, k], coeff]", field=loc)
        if (not isinstance(idx, list) or len(idx) != 3
                or not all(isinstance(a, int) and not isinstance(a, bool) and a >= 0 for a in idx)):
            raise ScenarioError(f"{loc}: exponents must be three non-negative integers", field=loc)
        if not isinstance(c, (int, float)) or isinstance(c, bool) or not math.isfinite(c):
            raise ScenarioError(f"{loc}: coefficient must be a finite number", field=loc)
        terms.append((tuple(idx), float(c)))
    return PolyFunction(terms)


def _parse_metric(raw) -> Metric | None:
    if raw is None:
        return None
    if not isinstance(raw, list) or len(raw) != 3 or any(not isinstance(row, list) or len(row) != 3 for row in raw):
        raise ScenarioError("metric: expected a 3x3 array of polynomials", field="metric")
    entries = tuple(tuple(parse_poly(raw[i][j], f"metric[{i}][{j}]") for j in range(3)) for i in range(3))
    try:
        return Metric(entries)
    except ValueError as exc:
        raise ScenarioError(f"metric: {exc}", field="metric") from exc


_RANGES = {
    "epsilon0": (float, lambda v: v > 0, "must be > 0"),
    "r_min": (float, lambda v: v > 0, "must be > 0"),
    "n_phi": (int, lambda v: 16 <= v <= 4096, "must be in [16, 4096]"),
    "n_r": (int, lambda v: 8 <= v <= 1024, "must be in [8, 1024]"),
    "denominator_cap": (int, lambda v: 1 <= v <= 1000, "must be in [1, 1000]"),
    "max_strips": (int, lambda v: 1 <= v <= 20, "must be in [1, 20]"),
    "rng_seed": (int, lambda v: v >= 0, "must be >= 0"),
    "constancy": (float, lambda v: 0 < v < 1, "must be in (0, 1)"),
    "spiral_turns": (float, lambda v: v > 0, "must be > 0"),
    "omega_gap": (float, lambda v: 0 < v < 1, "must be in (0, 1)"),
    "n_probes": (int, lambda v: 1 <= v <= 256, "must be in [1, 256]"),
}


def _parse_options(raw) -> Options:
    if raw is None:
        return Options()
    if not isinstance(raw, dict):
        raise ScenarioError("options: expected an object", field="options")
    flat = {k: v for k, v in raw.items() if k != "thresholds"}
    th = raw.get("thresholds", {})
    if not isinstance(th, dict):
        raise ScenarioError("options.thresholds: expected an object", field="options.thresholds")
    for k, v in th.items():
        flat[k] = v
    opts = Options()
    for k, v in flat.items():
        loc = f"options.{k}" if k in raw else f"options.thresholds.{k}"
        if k not in _RANGES:
            raise ScenarioError(f"{loc}: unknown option", field=loc)
        kind, ok, msg = _RANGES[k]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ScenarioError(f"{loc}: expected a number", field=loc)
        if kind is int and (not float(v).is_integer()):
            raise ScenarioError(f"{loc}: expected an integer", field=loc)
        v = kind(v)
        if not ok(v):
            raise ScenarioError(f"{loc}: {msg}", field=loc)
        setattr(opts, k, v)
    if not opts.r_min < opts.epsilon0:
        raise ScenarioError("options.r_min: need 0 < r_min < epsilon0", field="options.r_min")
    return opts


def parse_scenario(data: dict, name: str = "scenario") -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object", field="<root>")
    for key in ("surface", "function", "seed_point"):
        if key not in data:
            raise ScenarioError(f"missing field '{key}'", field=key)
    surface = parse_poly(data["surface"], "surface")
    function = parse_poly(data["function"], "function")
    sp = data["seed_point"]
    if (not isinstance(sp, list) or len(sp) != 3
            or not all(isinstance(a, (int, float)) and not isinstance(a, bool) and math.isfinite(a) for a in sp)):
        raise ScenarioError("seed_point: expected three finite numbers", field="seed_point")
    if surface(np.zeros(3)) != 0:
        raise ScenarioError("surface: equation must vanish at the origin", field="surface")
    return Scenario(str(data.get("name", name)), surface, function, tuple(float(a) for a in sp),
                    _parse_metric(data.get("metric")), _parse_options(data.get("options")))


def load_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}", field="<file>") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}",
                            field="<file>") from exc


def load_scenario(path) -> Scenario:
    return parse_scenario(load_json(path), name=Path(path).stem)


def system_from_spec(raw):
    """Cylinder system from a ``system`` entry.

    Either terms ``{"rdot": [[c, a, k, "cos"|"sin"], ...], "phidot": [...]}``
    (``c r^a cos(k phi)``), optionally with ``"r_grid": [lo, hi, n]`` and
    ``"n_phi"``, or sampled arrays ``phi_grid``, ``r_grid``, ``rdot``,
    ``phidot`` of shapes ``(n_phi,)``, ``(n_r,)``, ``(n_r, n_phi)``.
    """
    from .flow import CylinderSystem

    if not isinstance(raw, dict):
        raise ScenarioError("system: expected an object", field="system")
    if "phi_grid" in raw:
        try:
            phi = np.asarray(raw["phi_grid"], dtype=float)
            r = np.asarray(raw["r_grid"], dtype=float)
            rd = np.asarray(raw["rdot"], dtype=float)
            pd = np.asarray(raw["phidot"], dtype=float)
        except (KeyError, ValueError, TypeError) as exc:
            raise ScenarioError(f"system: bad sampled arrays ({exc})", field="system") from exc
        if rd.shape != (len(r), len(phi)) or pd.shape != rd.shape:
            raise ScenarioError("system: rdot/phidot must have shape (n_r, n_phi)", field="system.rdot")
        R = np.broadcast_to(r[:, None], rd.shape)
        return CylinderSystem(phi, r, rd, pd, np.ones_like(rd), np.zeros_like(rd), R ** 2, source="sampled")

    def terms(key):
        out = []
        items = raw.get(key)
        if not isinstance(items, list):
            raise ScenarioError(f"system.{key}: expected a list of terms", field=f"system.{key}")
        for i, t in enumerate(items):
            loc = f"system.{key}[{i}]"
            if not (isinstance(t, list) and len(t) == 4 and t[3] in ("cos", "sin")
                    and all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in t[:3])):
                raise ScenarioError(f"{loc}: expected [coeff, power, harmonic, 'cos'|'sin']", field=loc)
            out.append((float(t[0]), float(t[1]), int(t[2]), t[3]))
        return out

    rg = raw.get("r_grid", [1e-12, 1.0, 97])
    if not (isinstance(rg, list) and len(rg) == 3 and 0 < rg[0] < rg[1] and int(rg[2]) >= 8):
        raise ScenarioError("system.r_grid: expected [lo, hi, n] with 0 < lo < hi, n >= 8", field="system.r_grid")
    n_phi = raw.get("n_phi", 128)
    if not isinstance(n_phi, int) or n_phi < 16:
        raise ScenarioError("system.n_phi: expected an integer >= 16", field="system.n_phi")
    return CylinderSystem.from_terms(terms("rdot"), terms("phidot"),
                                     r_grid=np.geomspace(rg[0], rg[1], int(rg[2])), n_phi=n_phi)
