import csv
import json
import subprocess
import sys

import pytest

from conftest import SCENARIOS
from singflow import __version__
from singflow.cli import main

SADDLE = str(SCENARIOS / "plane_saddle.json")
DICRITICAL = str(SCENARIOS / "plane_dicritical.json")
FOCUS = str(SCENARIOS / "focus_system.json")


def _write(tmp_path, data, name="bad.json"):
    p = tmp_path / name
    p.write_text(data if isinstance(data, str) else json.dumps(data))
    return str(p)


GOOD = {"surface": [[[0, 0, 1], 1]], "function": [[[2, 0, 0], -1]], "seed_point": [0.3, 0.0, 0.0]}


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"function": None}, "function"),
        ({"surface": [[[0, 0, 1], "one"]]}, "surface[0]"),
        ({"surface": [[[0, 0, -1], 1.0]]}, "surface[0]"),
        ({"seed_point": [0.3, 0.0]}, "seed_point"),
        ({"options": {"r_min": -1}}, "options.r_min"),
        ({"options": {"thresholds": {"constancy": 2.0}}}, "options.thresholds.constancy"),
        ({"options": {"speed": 3}}, "options.speed"),
        ({"surface": [[[0, 0, 0], 1.0], [[0, 0, 1], 1.0]]}, "surface"),
    ],
)
def test_parse_errors_name_the_field(tmp_path, capsys, patch, field):
    data = dict(GOOD)
    for k, v in patch.items():
        if v is None:
            data.pop(k)
        else:
            data[k] = v
    rc = main(["analyze", "--scenario", _write(tmp_path, data), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert f"field '{field}'" in capsys.readouterr().err


def test_invalid_json_reports_position(tmp_path, capsys):
    rc = main(["analyze", "--scenario", _write(tmp_path, '{"surface": [}'), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "line 1" in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert main(["analyze", "--scenario", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 2


@pytest.fixture(scope="module")
def saddle_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("saddle")
    rcs = [main(["analyze", "--scenario", SADDLE, "--out", str(base / name)]) for name in ("a", "b")]
    return rcs, base


def test_analyze_writes_report_and_artifacts(saddle_runs):
    rcs, base = saddle_runs
    assert rcs == [0, 0]
    out = base / "a"
    for name in ("report.json", "chart.csv", "cylinder_system.json", "phase_portrait.svg", "probe_0.csv"):
        assert (out / name).exists()
    rep = json.loads((out / "report.json").read_text())
    assert rep["classification"]["verdict"] == "NonMonodromic"
    assert rep["tangent_cone"]["kind"] == "OTC"
    assert (out / "phase_portrait.svg").read_text().startswith("<svg")


def test_report_cites_parameters(saddle_runs):
    rep = json.loads((saddle_runs[1] / "a" / "report.json").read_text())
    opts = rep["parameters"]["options"]
    assert opts["r_min"] == 1e-6 and opts["rng_seed"] == 0
    assert opts["constancy"] == 1e-3 and opts["spiral_turns"] == 3.0
    assert rep["parameters"]["integrator"]["rtol"] == 1e-9
    stages = [s["stage"] for s in rep["stages"]]
    assert stages.index("tangent_cone") < stages.index("blowup") < stages.index("classification")


def test_reruns_are_byte_identical(saddle_runs):
    base = saddle_runs[1]
    for name in ("chart.csv", "probe_0.csv", "probe_5.csv", "cylinder_system.json"):
        assert (base / "a" / name).read_bytes() == (base / "b" / name).read_bytes()


def test_analyze_dicritical(tmp_path):
    assert main(["analyze", "--scenario", DICRITICAL, "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["classification"]["verdict"] == "Dicritical"


def test_classify_synthetic_focus(tmp_path, capsys):
    assert main(["classify", "--scenario", FOCUS, "--out", str(tmp_path)]) == 0
    assert "Spiraling" in capsys.readouterr().out
    data = json.loads((tmp_path / "classification.json").read_text())
    assert data["verdict"] == "Spiraling"


def test_classify_undetermined_exit_code(tmp_path):
    spec = {"system": {"rdot": [], "phidot": [], "r_grid": [1e-8, 1.0, 33], "n_phi": 32}}
    assert main(["classify", "--scenario", _write(tmp_path, spec, "zero.json"), "--out", str(tmp_path)]) == 4


def test_classify_bad_system_term(tmp_path, capsys):
    spec = {"system": {"rdot": [[1.0, 1, 0, "tan"]], "phidot": []}}
    assert main(["classify", "--scenario", _write(tmp_path, spec), "--out", str(tmp_path)]) == 2
    assert "system.rdot[0]" in capsys.readouterr().err


def test_trace_is_reproducible(tmp_path):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["trace", "--scenario", DICRITICAL, "--out", str(out), "--start", "0.2", "0.1", "0",
                     "--r-min", "1e-5", "--seed", "3"]) == 0
        runs.append(out)
    a, b = runs
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()
    with open(a / "trajectory.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:4] == ["t", "x", "y", "z"]
    rep = json.loads((a / "trace_report.json").read_text())
    assert rep["stop_reason"] == "reached_rmin"
    assert len(rep["oscillation"]) == 8
    assert all(o["crossings"] == 0 for o in rep["oscillation"])


def test_trace_rejects_off_surface_start(tmp_path, capsys):
    rc = main(["trace", "--scenario", DICRITICAL, "--out", str(tmp_path), "--start", "0.2", "0.1", "0.1"])
    assert rc == 2
    assert "--start" in capsys.readouterr().err


def test_trace_critical_start_is_stage_failure(tmp_path, capsys):
    scen = dict(GOOD, function=[[[0, 0, 1], 1.0]])
    rc = main(["trace", "--scenario", _write(tmp_path, scen), "--out", str(tmp_path)])
    assert rc == 3
    err = capsys.readouterr().err
    assert '"stage": "integrate"' in err and "PreconditionError" in err


def test_separatrix(tmp_path):
    assert main(["separatrix", "--scenario", DICRITICAL, "--out", str(tmp_path), "--r-min", "1e-5"]) == 0
    data = json.loads((tmp_path / "separatrix.json").read_text())
    assert data["final_level"] < 1e-4
    assert (tmp_path / "separatrix.csv").exists()


def test_plot_from_csv(saddle_runs, tmp_path):
    base = saddle_runs[1] / "a"
    rc = main(["plot", str(base / "probe_0.csv"), str(base / "probe_1.csv"), "--out", str(tmp_path),
               "--title", "saddle", "--name", "p.svg"])
    assert rc == 0
    svg = (tmp_path / "p.svg").read_text()
    assert svg.startswith("<svg") and "saddle" in svg


def test_plot_rejects_unreadable_input(tmp_path):
    bad = tmp_path / "x.csv"
    bad.write_text("not,a,trajectory\n1,2,3\n")
    assert main(["plot", str(bad), "--out", str(tmp_path)]) == 2


def test_console_script_version():
    out = subprocess.run([sys.executable, "-m", "singflow.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and __version__ in out.stdout
