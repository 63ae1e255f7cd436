"""Artifact writers: CSV tables, JSON reports and a self-contained SVG phase portrait."""
from __future__ import annotations

import csv
import json
import math
from fractions import Fraction
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

__all__ = [
    "to_jsonable",
    "write_json",
    "write_csv",
    "trajectory_rows",
    "phase_portrait_svg",
    "read_curves",
]


def to_jsonable(obj):
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def write_json(path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(to_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path


def _fmt(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def trajectory_rows(tr, phi):
    """Rows ``(t, x, y, z, r, phi_unwound, f)``; ``r`` is the slice value."""
    L = tr.levels if tr.levels is not None else np.linalg.norm(tr.points, axis=-1)
    for t, p, l, a, f in zip(tr.t, tr.points, L, phi, tr.f):
        yield t, p[0], p[1], p[2], l, a, f


def read_curves(path):
    """``(phi_unwound, r)`` columns of a trajectory CSV of either kind."""
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "phi_unwound" not in rows[0] or "r" not in rows[0]:
        raise ValueError(f"{path}: expected columns phi_unwound and r")
    return np.array([float(r["phi_unwound"]) for r in rows]), np.array([float(r["r"]) for r in rows])


_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"]


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (step * m) <= n:
            step *= m
            break
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-12 * step:
        out.append(round(v, 12))
        v += step
    return out


def phase_portrait_svg(curves, title: str = "", width: int = 640, height: int = 480) -> str:
    """Polylines of ``phi_unwound`` (horizontal) against ``log10 r`` (vertical).

    ``curves`` is a list of ``(label, phi, r)``.
    """
    ml, mr, mt, mb = 64, 16, 32, 48
    pts = []
    for _, phi, r in curves:
        ok = (np.asarray(r) > 0) & np.isfinite(phi)
        pts.append((np.asarray(phi)[ok], np.log10(np.asarray(r)[ok])))
    xs = np.concatenate([p[0] for p in pts]) if pts else np.array([0.0, 1.0])
    ys = np.concatenate([p[1] for p in pts]) if pts else np.array([0.0, 1.0])
    if xs.size == 0:
        xs, ys = np.array([0.0, 1.0]), np.array([0.0, 1.0])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 - x0 < 1e-9:
        x0, x1 = x0 - 1, x1 + 1
    if y1 - y0 < 1e-9:
        y0, y1 = y0 - 1, y1 + 1
    pw, ph = width - ml - mr, height - mt - mb

    def X(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def Y(v):
        return mt + (y1 - v) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">phi (unwound)</text>',
        f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {mt + ph / 2:.1f})">log10 r</text>',
    ]
    for v in _ticks(x0, x1):
        out.append(f'<line x1="{X(v):.2f}" y1="{mt + ph}" x2="{X(v):.2f}" y2="{mt + ph + 4}" stroke="#444"/>')
        out.append(f'<text x="{X(v):.2f}" y="{mt + ph + 16}" text-anchor="middle">{v:g}</text>')
    for v in _ticks(y0, y1):
        out.append(f'<line x1="{ml - 4}" y1="{Y(v):.2f}" x2="{ml}" y2="{Y(v):.2f}" stroke="#444"/>')
        out.append(f'<text x="{ml - 6}" y="{Y(v) + 4:.2f}" text-anchor="end">{v:g}</text>')
    for i, ((label, _, _), (px, py)) in enumerate(zip(curves, pts)):
        if len(px) == 0:
            continue
        col = _PALETTE[i % len(_PALETTE)]
        step = max(1, len(px) // 2000)
        coords = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in zip(px[::step], py[::step]))
        out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.2" points="{coords}">'
                   f'<title>{escape(str(label))}</title></polyline>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
