import csv
import json
import subprocess
import sys

import jsonschema
import pytest

from ecindex.cli import REPORT_SCHEMA, main

SIM = {
    "m": 400,
    "baseline": {"kind": "weibull", "shape": 1.5, "scale": 1.0},
    "beta": [0.9, -0.6],
    "covariates": [{"dist": "normal"}, {"dist": "bernoulli", "p": 0.4}],
    "censoring": {"kind": "both", "time": 2.0, "rate": 0.2},
    "groups": {"kind": "multinomial", "labels": ["A", "B", "C"], "probs": [0.2, 0.3, 0.5]},
    "seed": 1,
}
STUDY = {"replicates": 4, "seed": 2, "follow_up_horizon": 1.5, "scenario": "synthetic"}


@pytest.fixture
def files(tmp_path):
    sim = tmp_path / "sim.json"
    sim.write_text(json.dumps(SIM))
    study = tmp_path / "study.json"
    study.write_text(json.dumps(STUDY))
    return tmp_path, sim, study


@pytest.fixture
def simulated(files):
    tmp, sim, study = files
    assert main(["simulate", "--config", str(sim), "--out", str(tmp / "sim")]) == 0
    return tmp, tmp / "sim" / "cohort.csv", study


def test_simulate_outputs(files):
    tmp, sim, _ = files
    small = tmp / "small.json"
    small.write_text(json.dumps({"m": 10, "seed": 3}))
    assert main(["simulate", "--config", str(small), "--out", str(tmp / "o")]) == 0
    lines = (tmp / "o" / "cohort.csv").read_text().splitlines()
    assert len(lines) == 11
    assert lines[0] == "id,time,event,group"
    truth = json.loads((tmp / "o" / "truth.json").read_text())
    assert len(truth["hazards"]) == 10
    man = json.loads((tmp / "o" / "manifest.json").read_text())
    assert man["command"] == "simulate" and man["status"] == "ok" and man["seed"] == 3


def test_simulate_byte_identical_and_seed_override(files):
    tmp, sim, _ = files
    for name in ("a", "b"):
        assert main(["simulate", "--config", str(sim), "--out", str(tmp / name)]) == 0
    assert (tmp / "a" / "cohort.csv").read_bytes() == (tmp / "b" / "cohort.csv").read_bytes()
    assert main(["simulate", "--config", str(sim), "--seed", "77", "--out", str(tmp / "c")]) == 0
    assert (tmp / "a" / "cohort.csv").read_bytes() != (tmp / "c" / "cohort.csv").read_bytes()


@pytest.mark.parametrize(
    "text",
    ['{"m": ', '{"m": 1}', '{"m": 10, "colour": "red"}', '[1, 2]', '{"m": 10, "censoring": {"kind": "sometimes"}}'],
)
def test_simulate_bad_config_exit_2(tmp_path, text, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(text)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "ecindex:" in capsys.readouterr().err
    assert sorted(p.name for p in (tmp_path / "o").iterdir()) == ["manifest.json"]
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["status"] == "failed"


def test_evaluate_outputs(simulated):
    tmp, cohort, study = simulated
    out = tmp / "ev"
    assert main(["evaluate", "--cohort", str(cohort), "--config", str(study), "--out", str(out)]) == 0
    body = json.loads((out / "report.json").read_text())
    jsonschema.validate(body, REPORT_SCHEMA)
    assert len(body["reports"]) == 4

    for r in body["reports"]:
        assert r["dr"] == pytest.approx((r["ci"] - 0.5) / (r["eci"] - 0.5), abs=1e-12)
        w = sum(g["pair_count"] / (2 * r["pair_count"]) * g["subci"] for g in r["per_group"].values())
        assert w == pytest.approx(r["ci"], abs=1e-9)

    s = body["summaries"]
    rows = list(csv.DictReader((out / "summary.csv").open()))
    by = {(r["metric"], r["group"]): r for r in rows}
    assert float(by[("ci", "")]["mean"]) == round(s["ci"]["mean"], 3)
    assert float(by[("eci", "")]["ci_hi"]) == round(s["eci"]["ci95"][1], 3)
    assert float(by[("dr", "")]["mean"]) == round(s["dr"], 3)
    for g, gs in s["groups"].items():
        assert float(by[("subci", g)]["sd"]) == round(gs["subci"]["sd"], 3)

    md = (out / "tables.md").read_text()
    assert f"{100 * s['dr']:.2f}%" in md
    assert "| synthetic | A |" in md


def test_evaluate_threads_env(simulated, monkeypatch):
    tmp, cohort, study = simulated
    monkeypatch.setenv("ECINDEX_THREADS", "2")
    assert main(["evaluate", "--cohort", str(cohort), "--config", str(study), "--out", str(tmp / "t2")]) == 0
    assert main(["evaluate", "--cohort", str(cohort), "--config", str(study), "--out", str(tmp / "t1"), "--threads", "1"]) == 0
    a = json.loads((tmp / "t1" / "report.json").read_text())["reports"]
    b = json.loads((tmp / "t2" / "report.json").read_text())["reports"]
    assert a == b
    monkeypatch.setenv("ECINDEX_THREADS", "lots")
    assert main(["evaluate", "--cohort", str(cohort), "--config", str(study), "--out", str(tmp / "t3")]) == 2


def test_evaluate_bad_csv_reports_line(tmp_path, capsys):
    bad = tmp_path / "c.csv"
    bad.write_text("id,time,event,group,x\na,1.0,1,g,0.5\nb,2.0,7,g,0.1\n")
    assert main(["evaluate", "--cohort", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert ":3:" in capsys.readouterr().err


def test_runtime_failure_removes_partial_outputs(tmp_path, monkeypatch):
    c = tmp_path / "c.csv"
    c.write_text("id,time,event,group,x\n" + "".join(f"r{k},{k + 1}.0,{int(k == 0)},g,{k}\n" for k in range(8)))
    out = tmp_path / "o"
    assert main(["evaluate", "--cohort", str(c), "--out", str(out)]) == 1
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json"]

    # failure after the first result file was written
    import ecindex.cli as cli

    def broken(summaries):
        raise RuntimeError("disk full")

    monkeypatch.setattr(cli, "render_summary_csv", broken)
    sim = tmp_path / "sim.json"
    sim.write_text(json.dumps({**SIM, "m": 200}))
    assert main(["simulate", "--config", str(sim), "--out", str(tmp_path / "s")]) == 0
    out2 = tmp_path / "o2"
    assert main(["evaluate", "--cohort", str(tmp_path / "s" / "cohort.csv"), "--out", str(out2)]) == 1
    assert sorted(p.name for p in out2.iterdir()) == ["manifest.json"]
    assert "disk full" in json.loads((out2 / "manifest.json").read_text())["error"]


def test_sweep(simulated):
    tmp, cohort, study = simulated
    out = tmp / "sw"
    args = ["sweep", "--cohort", str(cohort), "--config", str(study), "--fractions", "0.3,0.5,0.7", "--out", str(out)]
    assert main(args) == 0
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    assert [float(r["fraction"]) for r in rows] == [0.3, 0.5, 0.7]
    assert sum(int(r["argmin"]) for r in rows) == 1
    assert "minimum sd" in (out / "sweep.md").read_text()
    bad = args[:-4] + ["--fractions", "0.3,0.3", "--out", str(tmp / "sw2")]
    assert main(bad) == 2


def test_report_rerenders(simulated):
    tmp, cohort, study = simulated
    assert main(["evaluate", "--cohort", str(cohort), "--config", str(study), "--out", str(tmp / "ev")]) == 0
    assert main(["report", "--report", str(tmp / "ev" / "report.json"), "--out", str(tmp / "rp")]) == 0
    for name in ("summary.csv", "tables.md"):
        assert (tmp / "rp" / name).read_text() == (tmp / "ev" / name).read_text()


def test_unknown_study_key(simulated):
    tmp, cohort, _ = simulated
    cfg = tmp / "s.json"
    cfg.write_text(json.dumps({"replicates": 2, "folds": 5}))
    assert main(["evaluate", "--cohort", str(cohort), "--config", str(cfg), "--out", str(tmp / "o")]) == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ecindex", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "simulate" in r.stdout
    r = subprocess.run([sys.executable, "-m", "ecindex", "evaluate"], capture_output=True, text=True)
    assert r.returncode == 2
