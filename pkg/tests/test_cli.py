import io
import json

import pytest

from hormander_mp.cli import run


def call(argv):
    buf = io.StringIO()
    code = run(argv, stdout=buf)
    return code, json.loads(buf.getvalue()) if buf.getvalue() else None, buf.getvalue()


def test_ops_validate():
    code, doc, _ = call(["ops", "validate", "--preset", "grushin3"])
    assert code == 0 and doc["results"]["Q"] == 4 and doc["status"] == "ok"
    assert doc["provenance"]["kernel_backend"] in ("python", "cython")


def test_bad_spec_exit_1():
    spec = json.dumps({"sigma": [1, 1, 2], "fields": [["1", "0", "0"], ["0", "1", "0"]]})
    code, doc, _ = call(["ops", "validate", "--spec", spec])
    assert code == 1 and doc["error"]["check"] == "hormander_rank"


def test_unknown_command_exit_1():
    assert call(["frobnicate"])[0] == 1
    assert call(["dist", "--x", "0,0", "--y", "1,0,0"])[0] == 1


def test_missing_constant_exit_2():
    code, doc, _ = call(["cartan", "--atoms", "3"])
    assert code == 2 and doc["error"]["type"] == "MissingConstantError"


def test_mmatrix_exit_2():
    code, doc, _ = call(["fd", "verify", "--scheme", "splitting", "--n", "17"])
    assert code == 2 and doc["error"]["node"] is not None


def test_dist_deterministic():
    argv = ["dist", "--x", "0,0,0", "--y", "1,0,0", "--restarts", "4"]
    a, b = call(argv), call(argv)
    assert a[0] == 0 and a[2] == b[2]
    assert abs(a[1]["results"]["upper"] - 1) < 0.02


def test_classify_and_cone():
    code, doc, _ = call(["mp", "classify", "--domain", "halfspace:v=0,1,0:h=1"])
    assert code == 0 and doc["results"]["verdict"] == "MP_CERTIFIED"
    code, doc, _ = call(["mp", "classify", "--domain", "whole"])
    assert doc["results"]["verdict"] == "UNKNOWN"
    code, doc, _ = call(["cone", "detect", "--domain", "halfspace:v=1,0,0", "--gamma-cone", "--levels", "4"])
    assert code == 0 and doc["results"]["gamma_cone"]["valid"]
    assert call(["mp", "classify", "--domain", "blob:v=1"])[0] == 1


def test_calibrate_then_cartan(tmp_path):
    out = tmp_path / "cal.json"
    code, _, _ = call(["calibrate", "--samples", "1000", "--trials", "300", "-o", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["results"]["calibration_id"].startswith("cal-")
    assert (tmp_path / "cal.json.time.json").exists()
    code, cart, _ = call(["cartan", "--atoms", "5", "--test-points", "100", "--constants", str(out)])
    assert code == 0 and cart["results"]["ok"]
    assert cart["provenance"]["calibration_id"] == doc["results"]["calibration_id"]


def test_output_env(tmp_path, monkeypatch):
    monkeypatch.setenv("HORMANDER_MP_OUTPUT_DIR", str(tmp_path))
    code, _, text = call(["volume", "--preset", "heisenberg"])
    assert code == 0 and text == ""
    first = (tmp_path / "volume.json").read_text()
    call(["volume", "--preset", "heisenberg"])
    assert (tmp_path / "volume.json").read_text() == first


def test_gamma_and_cover(tmp_path):
    code, doc, _ = call(["gamma", "eval", "--x", "0,0,0", "--y", "1,0,0"])
    assert code == 0 and doc["results"]["gamma_hat"] > 0
    csv = tmp_path / "decay.csv"
    code, doc, _ = call(["gamma", "decay", "--y", "0.3,0.1,0.2", "--csv", str(csv)])
    assert doc["results"]["decreasing"] and csv.read_text().startswith("lambda,")
    balls = json.dumps([{"center": [2.0 ** k, 0, 0], "radius": 4.0 ** k} for k in range(15)])
    code, doc, _ = call(["cover", "check", "--cover", balls])
    assert code == 0 and doc["results"]["verdict"] == "UNBOUNDED_EVIDENCE"


def test_fd_verify_small(tmp_path):
    csv = tmp_path / "slice.csv"
    code, doc, _ = call(["fd", "verify", "--preset", "grushin3", "--n", "11", "--trials", "3",
                         "--csv", str(csv)])
    r = doc["results"]
    assert code == 0 and r["trials"]["violations"] == 0 and r["solve"]["ok"]
    assert r["comparison"]["ok"] and r["semilinear"]["nonpositive"]
    code, doc, _ = call(["fd", "verify", "--preset", "grushin3", "--domain", "halfspace:v=1,0,0",
                         "--n", "11", "--radii", "1,2"])
    assert code == 0 and doc["results"]["truncation_study"]["monotone_decreasing"]


@pytest.mark.parametrize("argv", [["--version"], ["ops", "validate", "--help"]])
def test_help_exits_zero(argv, capsys):
    assert run(argv) == 0
