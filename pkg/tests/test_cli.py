import csv
import json
import math
import subprocess
import sys

import pytest

from spherecrits import cli


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_moments_rows_pass(tmp_path, capsys):
    out = tmp_path / "m.csv"
    assert cli.main(["moments", "--out", str(out)]) == 0
    rows = {r["quantity"]: r for r in _rows(out)}
    assert all(r["pass"] == "true" for r in rows.values())
    assert float(rows["I0"]["value"]) == pytest.approx(4 / math.sqrt(3), rel=1e-14)
    assert abs(float(rows["cubic_coeff"]["value"])) <= 1e-10
    assert float(rows["log_coeff"]["reference"]) == pytest.approx(1 / (27 * math.pi ** 2), rel=1e-15)
    summary = json.loads((tmp_path / "m.csv.summary.json").read_text())
    assert summary["passed"] is True and summary["parameters"]["seed"] == 0
    assert "numpy" in summary["provenance"]


def test_k2_curve_deterministic_files(tmp_path):
    args = ["k2-curve", "--l", "50", "--grid", "40", "--samples", "5000", "--seed", "3"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(args + ["--out", str(a)]) == 0
    assert cli.main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.csv.dat").read_bytes() == (tmp_path / "b.csv.dat").read_bytes()
    rows = _rows(a)
    assert len(rows) == 40
    assert all(float(r["k2"]) >= -3 * float(r["se"]) for r in rows)
    # multithreaded runs use the same substreams and reduction order
    c = tmp_path / "c.csv"
    assert cli.main(args + ["--threads", "3", "--out", str(c)]) == 0
    assert a.read_bytes() == c.read_bytes()


def test_k2_scales_like_l4(tmp_path):
    # C = l puts the first grid point at phi = 1
    vals = {}
    for l in (20, 40):
        out = tmp_path / f"k{l}.csv"
        assert cli.main(["k2-curve", "--l", str(l), "--C", str(l), "--grid", "2",
                         "--samples", "20000", "--out", str(out)]) == 0
        r = _rows(out)[0]
        assert float(r["phi"]) == pytest.approx(1.0, rel=1e-12)
        vals[l] = float(r["k2"])
    assert 0.5 <= vals[40] / vals[20] / 2 ** 4 <= 2


def test_taylor_check_rows(tmp_path):
    out = tmp_path / "t.json"
    assert cli.main(["taylor-check", "--format", "json", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["passed"] is True
    assert {"A3", "A7", "A37"} <= set(rep["summary"])
    assert all(rep["summary"][k]["pass"] for k in ("A3", "A7", "A37"))
    assert {r["l"] for r in rep["rows"]} == {64, 128, 256}


def test_simulate_morse_rows(tmp_path):
    out = tmp_path / "s.csv"
    assert cli.main(["simulate", "--l", "6", "--n", "40", "--seed", "9", "--out", str(out)]) == 0
    rows = _rows(out)
    assert len(rows) == 40
    for r in rows:
        assert int(r["n_e"]) - int(r["n_c"]) / 2 - 1 == 0
    summary = json.loads((tmp_path / "s.csv.summary.json").read_text())["summary"]
    assert summary["violations"] == 0


def test_simulate_interval(tmp_path):
    out = tmp_path / "si.csv"
    assert cli.main(["simulate", "--l", "5", "--n", "10", "--interval", "0,inf", "--kind", "e",
                     "--out", str(out)]) == 0
    assert all(0 <= int(r["n_interval"]) <= int(r["n_e"]) for r in _rows(out))


def test_legendre_check(tmp_path):
    out = tmp_path / "l.csv"
    assert cli.main(["legendre-check", "--out", str(out)]) == 0
    rows = _rows(out)
    assert all(r["pass"] == "true" for r in rows)
    assert any(r["check"].startswith("p1_band") for r in rows)
    assert all(float(r["error"]) == 0.0 for r in rows if r["check"] == "P(1)")


def test_exit_code_check_failure(tmp_path):
    # five tracked terms vs the full integral disagree badly at small l
    assert cli.main(["variance-integral", "--l", "16", "--out", str(tmp_path / "v.csv")]) == 2


def test_exit_code_degenerate(tmp_path, capsys):
    assert cli.main(["k2-curve", "--l", "20", "--C", "0", "--out", str(tmp_path / "d.csv")]) == 3
    assert cli.main(["variance-integral", "--l", "16", "--C", "0"]) == 3
    assert "degenerate" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    [],
    ["nosuch"],
    ["moments", "--bogus"],
    ["simulate", "--l", "x"],
    ["simulate", "--kind", "q"],
    ["k2-curve", "--threads", "0"],
    ["moments", "--format", "xml"],
    ["moments", "--config", "/nonexistent/cfg"],
])
def test_exit_code_bad_arguments(argv, capsys):
    assert cli.main(argv) == 4
    assert capsys.readouterr().err.startswith("spherecrits:")


def test_config_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nl = 7\nn=3\nseed = 11\n")
    monkeypatch.setenv("SPHERECRITS_SEED", "99")
    cmd, p = cli.resolve(["simulate", "--config", str(cfg), "--n", "5"])
    assert (cmd, p["l"], p["n"], p["seed"]) == ("simulate", 7, 5, 11)
    cmd, p = cli.resolve(["simulate", "--config", str(cfg), "--seed", "4"])
    assert p["seed"] == 4
    cmd, p = cli.resolve(["simulate"])
    assert p["seed"] == 99 and p["l"] == 10
    monkeypatch.delenv("SPHERECRITS_SEED")
    assert cli.resolve(["simulate"])[1]["seed"] == 0
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = red\n")
    assert cli.main(["simulate", "--config", str(bad)]) == 4
    monkeypatch.setenv("SPHERECRITS_SEED", "abc")
    assert cli.main(["moments"]) == 4


def test_env_seed_reaches_report(tmp_path, monkeypatch):
    monkeypatch.setenv("SPHERECRITS_SEED", "123")
    out = tmp_path / "s.json"
    assert cli.main(["simulate", "--l", "3", "--n", "4", "--format", "json", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["seed"] == 123 and rep["parameters"]["seed"] == 123


def test_json_to_stdout(capsys):
    assert cli.main(["simulate", "--l", "2", "--n", "3", "--format", "json"]) == 0
    cap = capsys.readouterr()
    rep = json.loads(cap.out)
    assert rep["command"] == "simulate" and len(rep["rows"]) == 3
    assert "simulate: pass" in cap.err


def test_report_csv_quoting():
    rep = cli.ExperimentReport("x", {}, 0, [{"a": 'he said "hi", twice', "b": 0.1, "c": True}])
    text = rep.to_csv()
    assert list(csv.DictReader(text.splitlines())) == [{"a": 'he said "hi", twice', "b": "0.1", "c": "true"}]


def test_module_and_script_entry_points(tmp_path):
    out = tmp_path / "m.csv"
    r = subprocess.run([sys.executable, "-m", "spherecrits", "moments", "--out", str(out)],
                       capture_output=True, text=True)
    assert r.returncode == 0 and out.exists()
    r = subprocess.run(["spherecrits", "nosuch"], capture_output=True, text=True)
    assert r.returncode == 4


@pytest.fixture(scope="module")
def simulate_10(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim") / "s.csv"
    assert cli.main(["simulate", "--l", "10", "--n", "200", "--out", str(out)]) == 0
    return json.loads(open(str(out) + ".summary.json").read())["summary"]


def test_simulate_10_matches_exact_mean(simulate_10):
    assert simulate_10["violations"] == 0
    assert simulate_10["exact_within_3se"] is True
    assert simulate_10["leading_mean"] == pytest.approx(115.47, abs=0.01)


@pytest.mark.xfail(strict=True, reason="the O(l) term puts the mean near 125.9 at l=10, about 9% above 115.5")
def test_simulate_10_within_3pct_of_leading(simulate_10):
    assert abs(simulate_10["mean_nc"] / 115.5 - 1) <= 0.03
