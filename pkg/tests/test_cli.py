import json
import subprocess
import sys

import pytest

from runrace.cli import main
from runrace.formats import load_traces, parse_report


@pytest.fixture
def corpus(tmp_path):
    path = tmp_path / "runs.csv"
    assert main(["synth", "--runs", "5", "--horizon", "15", "--seed", "2", "--out", str(path)]) == 0
    return path


def test_synth_writes_trace_and_manifest(corpus):
    ts = load_traces(corpus)
    assert ts.horizon() == 15 and len(ts.traces) == 5
    assert {"family", "asymptote", "params"} <= set(ts.configs["run-0"])


def test_simulate_machine_report(corpus, tmp_path, capsys):
    out = tmp_path / "rep.json"
    assert main(["simulate", str(corpus), "--criterion", "a", "--delta", "0.3", "--out", str(out)]) == 0
    rep = parse_report(out.read_text())
    assert (rep.criterion, rep.delta, rep.horizon_T, rep.n_runs) == ("a", 0.3, 15, 5)
    assert main(["simulate", str(corpus), "--format", "table"]) == 0
    assert capsys.readouterr().out.startswith("testbed")


def test_sweep_writes_document_and_series(corpus, tmp_path, capsys):
    out = tmp_path / "sweep.json"
    assert main(["sweep", str(corpus), "--criteria", "a,f", "--deltas", "0,0.5", "--out", str(out)]) == 0
    table = capsys.readouterr().out.splitlines()
    assert len(table) == 5 and table[1].split()[0] == "runs"
    doc = parse_report(out.read_text())
    assert [r.criterion for r in doc.testbeds["runs"]] == ["a", "a", "f", "f"]
    series = json.loads((tmp_path / "sweep.series.json").read_text())
    assert [p["delta"] for p in series["f"]] == [0.0, 0.5]


def test_ktable(capsys):
    assert main(["ktable", "--n", "250,50", "--deltas", "0.5,0.05"]) == 0
    rows = [line.split() for line in capsys.readouterr().out.splitlines()]
    assert rows == [["n", "0.5", "0.05"], ["250", "125", "19"], ["50", "25", "6"]]


def test_fit_reports_estimates(corpus, capsys):
    assert main(["fit", str(corpus), "--run", "run-1", "--epochs", "8"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["epochs_observed"] == 8 and doc["n_samples"] == 100
    assert doc["validity"] in {"ok", "negative-loss", "low-correlation", "insufficient-data"}


def test_errors_are_json_with_exit_codes(corpus, tmp_path, capsys):
    assert main(["fit", str(corpus), "--run", "nope"]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "not-found"
    bad = tmp_path / "bad.csv"
    bad.write_text("run_id,epoch,validation_error\na,0,0.3\n")
    assert main(["simulate", str(bad)]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "format-error" and err["message"].startswith("line 2")
    assert main(["simulate", str(tmp_path / "missing.csv")]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "io-error"
    assert main(["ktable", "--deltas", "1.5"]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "domain-error"
    with pytest.raises(SystemExit) as exc:
        main(["simulate"])
    assert exc.value.code == 2
    assert json.loads(capsys.readouterr().err)["error"] == "usage-error"


def test_serve_over_a_pipe():
    requests = [{"action": "register", "run_id": "a"},
                {"action": "report", "run_id": "a", "epoch": 1, "error": 0.4},
                {"action": "decision", "run_id": "a"}]
    proc = subprocess.run([sys.executable, "-m", "runrace", "serve", "--horizon", "10", "--criterion", "a"],
                          input="".join(json.dumps(r) + "\n" for r in requests),
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    replies = [json.loads(x) for x in proc.stdout.splitlines()]
    assert [r["ok"] for r in replies] == [True, True, True]
    assert replies[2]["reason"] == "warmup"


def test_serve_requires_horizon(capsys):
    assert main(["serve"]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "domain-error"
