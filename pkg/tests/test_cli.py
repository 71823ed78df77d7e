import json
import os

import pytest

from mcphydro.cli import main

ARCH = "MC{O=const,L=const}"


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    path = d / "synthetic.csv"
    rc = main(["synth", "--out", str(path), "--seed", "7", "--years", "6"])
    assert rc == 0
    return str(path)


@pytest.fixture(scope="module")
def trained_dir(data_csv, tmp_path_factory):
    out = tmp_path_factory.mktemp("work")
    rc = main(["train", "--data", data_csv, "--out", str(out),
               "--arch", ARCH, "--seeds", "2925,9998", "--epochs", "15"])
    assert rc == 0
    return out


def test_ingest_ok(data_csv, capsys):
    assert main(["ingest", "--data", data_csv]) == 0
    msg = capsys.readouterr().out
    assert "complete water years: 6" in msg
    assert "observed output: yes" in msg


def test_ingest_missing_file(tmp_path):
    assert main(["ingest", "--data", str(tmp_path / "nope.csv")]) == 2


def test_ingest_malformed(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("date,precip_mm,pet_mm\n2000-01-01,1.0,not_a_number\n")
    assert main(["ingest", "--data", str(bad)]) == 2
    assert "error" in capsys.readouterr().err


def test_missing_data_flag():
    assert main(["train", "--arch", ARCH]) == 2


def test_synth_deterministic(tmp_path, data_csv):
    again = tmp_path / "again.csv"
    assert main(["synth", "--out", str(again), "--seed", "7",
                 "--years", "6"]) == 0
    assert again.read_bytes() == open(data_csv, "rb").read()


def test_train_layout_and_summary(trained_dir, capsys):
    run_dir = trained_dir / "runs" / ARCH
    assert (run_dir / "best.json").exists()
    assert (run_dir / "2925" / "params.json").exists()


def test_train_resume_exit_zero(data_csv, trained_dir, capsys):
    rc = main(["train", "--data", data_csv, "--out", str(trained_dir),
               "--arch", ARCH, "--seeds", "2925,9998", "--epochs", "15",
               "--resume"])
    assert rc == 0
    assert ARCH in capsys.readouterr().out


def test_train_bad_grammar(data_csv, tmp_path):
    assert main(["train", "--data", data_csv, "--out", str(tmp_path),
                 "--arch", "MC{O=bogus,L=sig}"]) == 2


def test_plan_missing_stages(data_csv, tmp_path):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"stages": []}))
    assert main(["train", "--data", data_csv, "--out", str(tmp_path),
                 "--plan", str(plan)]) == 4


def test_plan_missing_parent(data_csv, tmp_path):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps(
        {"stages": [{"arch": ARCH, "parent": "MC{O=sig,L=sig}"}]}))
    assert main(["train", "--data", data_csv, "--out", str(tmp_path),
                 "--plan", str(plan), "--seeds", "2925",
                 "--epochs", "5"]) == 4


def test_plan_two_stage_inheritance(data_csv, tmp_path, capsys):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"stages": [
        {"arch": ARCH},
        {"arch": "MC{O=sig,L=sig}", "parent": ARCH},
    ]}))
    rc = main(["train", "--data", data_csv, "--out", str(tmp_path),
               "--plan", str(plan), "--seeds", "2925", "--epochs", "10"])
    assert rc == 0
    out = capsys.readouterr().out
    assert ARCH in out and "MC{O=sig,L=sig}" in out


def test_evaluate(data_csv, trained_dir, tmp_path, capsys):
    params = trained_dir / "runs" / ARCH / "2925" / "params.json"
    rc = main(["evaluate", "--data", data_csv, "--arch", ARCH,
               "--params", str(params), "--out", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "mass residual" in out and "kge_ss" in out
    assert (tmp_path / "trace.csv").exists()


def test_report(data_csv, trained_dir, tmp_path):
    rc = main(["report", "--data", data_csv, "--runs", str(trained_dir),
               "--out", str(tmp_path), "--years", "2003"])
    assert rc == 0
    for fname in ("percentiles.csv", "percentiles.json", "boxplot.svg"):
        assert (tmp_path / fname).exists(), fname
    assert any(f.startswith("hydrograph_") for f in os.listdir(tmp_path))


def test_report_empty_runs(data_csv, tmp_path):
    assert main(["report", "--data", data_csv, "--runs", str(tmp_path),
                 "--out", str(tmp_path)]) == 2


def test_grad_check_ok(capsys):
    rc = main(["grad-check", "--arch", "MC{O=sig,L=sig:con}",
               "--steps", "60"])
    assert rc == 0
    assert "ok" in capsys.readouterr().out


def test_benchmark(data_csv, tmp_path, capsys):
    rc = main(["benchmark", "--data", data_csv, "--out", str(tmp_path),
               "--seeds", "2925", "--epochs", "25"])
    assert rc == 0
    rows = json.loads((tmp_path / "benchmarks.json").read_text())
    assert [r["model"] for r in rows] == ["ARX", "ANN(1)", "RNN(1)",
                                          "LSTM(1,seq1)"]
