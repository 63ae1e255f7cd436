"""Command-line frontend.

Exit codes: 0 success, 2 parse or input error, 3 numeric-stage failure,
4 classification Undetermined.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .blowup import accumulation_set, build_chart, classify_tangent_cone, make_blowup
from .classify import asymptotic_expansion, classify_system, detect_spiraling, oscillation_test
from .errors import ScenarioError, SingflowError
from .flow import (
    chart_integrate,
    find_accumulating_trajectory,
    integrate,
    pullback_metric,
    separatrix_expansion,
    transformed_system,
)
from .geometry import PolyFunction, project_to_surface
from .report import phase_portrait_svg, read_curves, trajectory_rows, write_csv, write_json
from .scenario import load_json, load_scenario, parse_scenario, system_from_spec

EXIT_OK, EXIT_PARSE, EXIT_NUMERIC, EXIT_UNDETERMINED = 0, 2, 3, 4


class StageFailure(Exception):
    def __init__(self, stage, exc):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.exc = exc


class _Stages:
    """Runs named stages, records timings and tags failures with the stage name."""

    def __init__(self):
        self.log = []

    def __call__(self, name, fn, *a, **kw):
        t0 = time.perf_counter()
        try:
            out = fn(*a, **kw)
        except SingflowError as exc:
            raise StageFailure(name, exc) from exc
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            raise StageFailure(name, exc) from exc
        self.log.append({"stage": name, "seconds": round(time.perf_counter() - t0, 3)})
        return out


def _ambient_phi(b, report, points):
    """Unwound angle of ambient points around the tangent direction."""
    if b.variant == "OTC":
        a = points @ report.rotation.T
        ang = np.arctan2(a[:, 1], a[:, 0])
    else:
        Q = b.inverse(points)[0]
        ang = np.arctan2(Q[:, 1], Q[:, 0])
    return np.unwrap(ang)


def _half_planes(n=8):
    """Linear forms whose zero sets through the axis give ``n`` half-branches."""
    out = []
    for k in range(n):
        a = 2 * np.pi * k / n
        h = PolyFunction([((1, 0, 0), -np.sin(a)), ((0, 1, 0), np.cos(a))])
        side = PolyFunction([((1, 0, 0), np.cos(a)), ((0, 1, 0), np.sin(a))])
        out.append((a, h, side))
    return out


def _scenario(args):
    sc = load_scenario(args.scenario)
    if args.r_min is not None:
        if not 0 < args.r_min < sc.options.epsilon0:
            raise ScenarioError("--r-min: need 0 < r_min < epsilon0", field="--r-min")
        sc.options.r_min = args.r_min
    if args.seed is not None:
        sc.options.rng_seed = args.seed
    return sc


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parameters(sc):
    return {
        "options": sc.options.as_dict(),
        "integrator": {"method": "Dormand-Prince 5(4) with projection", "rtol": 1e-9, "atol": 1e-12},
        "fit": {"denominator_cap": sc.options.denominator_cap, "rel_tol": 1e-6},
    }


def _build(sc, st, details_out):
    s = sc.surface()
    st("seed", s.seed)
    rng = np.random.default_rng(sc.options.rng_seed)
    details_out["isolation_margin"] = st("isolation", s.check_isolated, 200, rng)
    report = st("tangent_cone", classify_tangent_cone, s)
    b, report, det = st("blowup", make_blowup, s, report, sc.options.denominator_cap)
    acc = st("accumulation_set", accumulation_set, s, b)
    details_out["accumulation"] = {"diameters": acc.diameters, "hausdorff": acc.hausdorff}
    chart = st("chart", build_chart, s, b, n_phi=sc.options.n_phi, n_r=sc.options.n_r,
               omega_gap=sc.options.omega_gap)
    return s, report, b, det, chart


def cmd_analyze(args) -> int:
    sc = _scenario(args)
    out = _out(args)
    st = _Stages()
    info = {}
    s, report, b, det, chart = _build(sc, st, info)
    pm = st("pullback_metric", pullback_metric, chart, sc.metric)
    sys_ = st("transformed_system", transformed_system, chart, s, sc.metric, sc.function, pm)
    exp = st("expansion", asymptotic_expansion, chart, s, sc.function, sc.options.max_strips, sc.options.constancy)
    cls = st("classification", classify_system, sys_, exp, n_probes=sc.options.n_probes,
             spiral_turns=sc.options.spiral_turns)

    det_txt = {}
    for key in ("nu", "e"):
        if key in det:
            det_txt[key] = str(det[key].value)
            det_txt[f"{key}_residual"] = det[key].fit.residual
    rep = {
        "scenario": sc.name,
        "parameters": _parameters(sc),
        "tangent_cone": {"kind": report.kind, "direction": report.direction, "secant_spread": report.secant_spread},
        "exponents": det_txt,
        "blowup": b.describe(),
        "chart": {"epsilon": chart.epsilon, "r_range": [chart.r_grid[0], chart.r_grid[-1]],
                  "n_phi": chart.n_phi, "n_r": len(chart.r_grid), "omega_flags": chart.omega_flags},
        "metric": {"degenerate_cells": int(pm.degenerate.sum()), "U_mismatch": pm.U_mismatch,
                   "min_det_ratio": float(np.min((pm.A * pm.C - pm.B ** 2) / (pm.A * pm.C)))},
        "expansion": exp.describe(),
        "classification": {"verdict": cls.verdict, "mu": cls.mu, "eta": cls.eta, "evidence": cls.evidence},
        "checks": info,
        "stages": st.log,
    }
    write_json(out / "report.json", rep)
    write_csv(out / "chart.csv", ["phi", "r", "x", "y", "z", "omega_flag"], chart.rows())
    write_json(out / "cylinder_system.json", {
        "system": {"phi_grid": sys_.phi_grid, "r_grid": sys_.r_grid, "rdot": sys_.rdot, "phidot": sys_.phidot}})
    curves = []
    for i, (phi0, direction, tr) in enumerate(_probe_trajectories(sys_, sc.options.n_probes)):
        write_csv(out / f"probe_{i}.csv", ["t", "phi_unwound", "r"], zip(tr.t, tr.phi, tr.r))
        curves.append((f"phi0={phi0:.3f}", tr.phi, tr.r))
    (out / "phase_portrait.svg").write_text(phase_portrait_svg(curves, f"{sc.name}: {cls.verdict}"))
    print(f"{sc.name}: verdict {cls.verdict}" + (f", nu = {det_txt['nu']}, e = {det_txt['e']}" if det_txt else ""))
    return EXIT_UNDETERMINED if cls.verdict == "Undetermined" else EXIT_OK


def _probe_trajectories(sys_, n):
    from .classify import _probe

    r_lo, r_hi = float(sys_.r_grid[0]), float(sys_.r_grid[-1])
    return _probe(sys_, n, r_lo * (r_hi / r_lo) ** 0.9, r_lo * 1.0001)


def cmd_trace(args) -> int:
    sc = _scenario(args)
    out = _out(args)
    st = _Stages()
    s = sc.surface()
    p = np.asarray(args.start if args.start is not None else sc.seed_point, dtype=float)
    F = s.equation
    g = np.linalg.norm(F.gradient(p))
    # auto-project only when the start is close to the surface
    if not (np.linalg.norm(p) > 0 and g > 0 and abs(F(p)) / g < 1e-2 * np.linalg.norm(p)):
        raise ScenarioError("start point is too far from the surface to project", field="--start")
    p = st("projection", project_to_surface, s, p)
    report = st("tangent_cone", classify_tangent_cone, s)
    b, report, _ = st("blowup", make_blowup, s, report, sc.options.denominator_cap)
    ss = s.with_slicer(b.slicer())
    tr = st("integrate", integrate, ss, sc.metric, sc.function, p, direction=args.direction,
            r_min=sc.options.r_min)
    phi = _ambient_phi(b, report, tr.points)
    write_csv(out / "trajectory.csv", ["t", "x", "y", "z", "r", "phi_unwound", "f"], trajectory_rows(tr, phi))
    curves = [("ambient", phi, tr.levels)]
    summary = {"scenario": sc.name, "parameters": _parameters(sc), "stop_reason": tr.stop_reason,
               "final_level": tr.final_level, "samples": len(tr), "direction": args.direction}

    # the same curve through the cylinder chart
    chart = st("chart", build_chart, s, b, n_phi=sc.options.n_phi, n_r=sc.options.n_r,
               omega_gap=sc.options.omega_gap)
    r0 = float(b.chart_r(ss.slicer.value(p)))
    if chart.r_grid[0] < r0 <= chart.r_grid[-1]:
        sys_ = st("transformed_system", transformed_system, chart, s, sc.metric, sc.function, fit=False)
        start = chart.locate(p)
        r_min = max(float(b.chart_r(sc.options.r_min)), chart.r_grid[0] * 1.0001)
        if start[1] > r_min:
            ctr = st("chart_integrate", chart_integrate, sys_, start, r_min, direction=args.direction)
            write_csv(out / "cylinder_trajectory.csv", ["t", "phi_unwound", "r"], zip(ctr.t, ctr.phi, ctr.r))
            summary["cylinder"] = {"stop_reason": ctr.stop_reason, "winding": float((ctr.phi[-1] - ctr.phi[0]) / (2 * np.pi))}
            rep = detect_spiraling(ctr, [a for a, _, _ in _half_planes()])
            summary["cylinder"]["crossings"] = rep.crossings
            summary["cylinder"]["spiraling"] = rep.spiraling
    else:
        summary["cylinder"] = {"skipped": "start outside the chart radial range"}
    summary["oscillation"] = [{"angle": a, "crossings": oscillation_test(tr, h, side)} for a, h, side in _half_planes()]
    summary["ambient_winding"] = float((phi[-1] - phi[0]) / (2 * np.pi))
    summary["stages"] = st.log
    write_json(out / "trace_report.json", summary)
    (out / "trajectory.svg").write_text(phase_portrait_svg(curves, f"{sc.name}: trajectory"))
    print(f"{sc.name}: {tr.stop_reason} after {len(tr)} samples, final slice value {tr.final_level:.3e}")
    return EXIT_OK


def cmd_separatrix(args) -> int:
    sc = _scenario(args)
    out = _out(args)
    st = _Stages()
    s = sc.surface()
    report = st("tangent_cone", classify_tangent_cone, s)
    b, report, _ = st("blowup", make_blowup, s, report, sc.options.denominator_cap)
    ss = s.with_slicer(b.slicer())
    r_min = args.r_min if args.r_min is not None else 1e-4
    tr = st("bisection", find_accumulating_trajectory, ss, sc.metric, sc.function, r_min=r_min)
    series, fits = st("expansion", separatrix_expansion, tr, cap=sc.options.denominator_cap)
    phi = _ambient_phi(b, report, tr.points)
    write_csv(out / "separatrix.csv", ["t", "x", "y", "z", "r", "phi_unwound", "f"], trajectory_rows(tr, phi))
    comps = []
    for name, ser, fit in zip("xyz", series, fits):
        comps.append({"component": name, "terms": [{"exponent": str(e), "coeff": c} for e, c in ser.terms],
                      "residual": None if fit is None else fit.residual,
                      "quality": "zero below noise" if fit is None else fit.quality})
    rep = {"scenario": sc.name, "parameters": _parameters(sc), "direction": tr.direction,
           "stop_reason": tr.stop_reason, "final_level": tr.final_level, "reliable_level": tr.reliable_level,
           "expansion_variable": "slice value", "components": comps,
           "ambient_winding": float((phi[-1] - phi[0]) / (2 * np.pi)), "stages": st.log}
    write_json(out / "separatrix.json", rep)
    print(f"{sc.name}: separatrix reached {tr.final_level:.3e} (t = slice value)")
    for c in comps:
        terms = " + ".join(f"{t['coeff']:.6g} t^{t['exponent']}" for t in c["terms"]) or "0"
        print(f"  {c['component']}(t) = {terms}")
    return EXIT_OK


def cmd_classify(args) -> int:
    data = load_json(args.scenario)
    out = _out(args)
    st = _Stages()
    if isinstance(data, dict) and "system" in data:
        sys_ = system_from_spec(data["system"])
        n_probes = int(data.get("options", {}).get("n_probes", 8))
        turns = float(data.get("options", {}).get("spiral_turns", 3.0))
        exp = None
        name = data.get("name", Path(args.scenario).stem)
    else:
        sc = parse_scenario(data, Path(args.scenario).stem)
        s, _, _, _, chart = _build(sc, st, {})
        sys_ = st("transformed_system", transformed_system, chart, s, sc.metric, sc.function)
        exp = st("expansion", asymptotic_expansion, chart, s, sc.function, sc.options.max_strips, sc.options.constancy)
        n_probes, turns, name = sc.options.n_probes, sc.options.spiral_turns, sc.name
    cls = st("classification", classify_system, sys_, exp, n_probes=n_probes, spiral_turns=turns)
    write_json(out / "classification.json", {"scenario": name, "verdict": cls.verdict, "mu": cls.mu,
                                             "eta": cls.eta, "evidence": cls.evidence, "stages": st.log})
    print(f"{name}: verdict {cls.verdict}")
    return EXIT_UNDETERMINED if cls.verdict == "Undetermined" else EXIT_OK


def cmd_plot(args) -> int:
    out = _out(args)
    curves = []
    for path in args.inputs:
        try:
            phi, r = read_curves(path)
        except (OSError, ValueError) as exc:
            raise ScenarioError(str(exc), field=str(path)) from exc
        curves.append((Path(path).stem, phi, r))
    target = out / (args.name or "plot.svg")
    target.write_text(phase_portrait_svg(curves, args.title or ""))
    print(str(target))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="singflow", description="Gradient trajectories near isolated surface singularities.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True):
        if scenario:
            sp.add_argument("--scenario", required=True, metavar="PATH", help="scenario JSON file")
        sp.add_argument("--out", default="singflow-out", metavar="DIR", help="output directory")
        sp.add_argument("--r-min", type=float, default=None, help="override the stopping slice value")
        sp.add_argument("--seed", type=int, default=None, help="override options.rng_seed")

    common(sub.add_parser("analyze", help="full pipeline: cone, exponents, chart, expansion, verdict"))
    sp = sub.add_parser("trace", help="integrate one trajectory")
    common(sp)
    sp.add_argument("--start", type=float, nargs=3, metavar=("X", "Y", "Z"), help="start point (default: seed)")
    sp.add_argument("--direction", type=int, choices=(-1, 1), default=1)
    common(sub.add_parser("separatrix", help="accumulating trajectory and its expansion"))
    common(sub.add_parser("classify", help="verdict for a scenario or a synthetic cylinder system"))
    sp = sub.add_parser("plot", help="phase portrait SVG from trajectory CSVs")
    common(sp, scenario=False)
    sp.add_argument("inputs", nargs="+", metavar="CSV")
    sp.add_argument("--title", default=None)
    sp.add_argument("--name", default=None, help="output file name (default plot.svg)")
    return p


_COMMANDS = {"analyze": cmd_analyze, "trace": cmd_trace, "separatrix": cmd_separatrix, "classify": cmd_classify,
             "plot": cmd_plot}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ScenarioError as exc:
        print(f"error: parse error in field '{exc.field}': {exc}", file=sys.stderr)
        return EXIT_PARSE
    except StageFailure as exc:
        detail = {"stage": exc.stage, "error": type(exc.exc).__name__, "message": str(exc.exc)}
        for attr in ("residual", "brackets"):
            if getattr(exc.exc, attr, None) is not None:
                detail[attr] = exc.exc.__dict__[attr]
        print("error: stage failure " + json.dumps(detail, default=str), file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
