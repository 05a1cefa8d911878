import csv
import json

import numpy as np
import pytest

from projmon.cli import main
from projmon.covest import matrix_from_json


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, (json.loads(out) if code == 0 and out.strip() else None)


@pytest.fixture
def break_csv(tmp_path, capsys):
    path = tmp_path / "y.csv"
    code, info = run(capsys, "datagen", "--kind", "covbreak", "--n", 3000, "--d", 3, "--break-at", 1200, "--seed", 1, "--out", path)
    assert code == 0 and info["n"] == 3000
    return path


def test_datagen_row_counts(tmp_path, capsys):
    for kind, n in (("vectorma", 250), ("locallystationary", 120), ("regression63", 4000)):
        path = tmp_path / f"{kind}.csv"
        assert run(capsys, "datagen", "--kind", kind, "--n", n, "--d", 2, "--out", path)[0] == 0
        with open(path) as fh:
            assert sum(1 for _ in fh) == n + 1
    assert "z" in open(tmp_path / "regression63.csv").readline()


def test_monitor_outputs_round_trip(break_csv, tmp_path, capsys):
    out = tmp_path / "run"
    code, summary = run(capsys, "monitor", "--input", break_csv, "--m", 1000, "--v", "1,0,0", "--horizon", 2, "--out", out)
    assert code == 0
    assert json.loads((out / "summary.json").read_text()) == summary
    rows = [json.loads(r) for r in (out / "trajectory.jsonl").read_text().splitlines()]
    assert rows and "k" in rows[0]
    assert json.loads((out / "v.json").read_text())["entries"] == [1.0, 0.0, 0.0]
    assert summary["signal_time"] > 1200
    code, csv_summary = run(capsys, "monitor", "--input", break_csv, "--m", 1000, "--v", "1,0,0", "--T", 2, "--format", "csv", "--out", out)
    assert csv_summary == summary
    with open(out / "trajectory.csv") as fh:
        assert next(csv.reader(fh)) == ["k", "stat", "bound"]


def test_monitor_estimated_vector(break_csv, capsys):
    code, summary = run(capsys, "monitor", "--input", break_csv, "--m", 1000, "--v-estimator", "minvar", "--threshold", "lasso", "--c-th", 1.0)
    assert code == 0 and summary["v_source"] == "estimator:minvar"
    assert summary["covariance"]["threshold"] == "lasso"


def test_exit_codes(break_csv, tmp_path, capsys):
    assert run(capsys, "monitor", "--input", break_csv, "--m", 1000, "--v", "1,0")[0] == 2
    assert run(capsys, "monitor", "--input", tmp_path / "missing.csv", "--m", 10, "--v", "1")[0] == 1
    assert run(capsys, "monitor", "--input", break_csv, "--m", 5000, "--v", "1,0,0")[0] == 2
    assert run(capsys, "monitor", "--input", break_csv, "--m", 100)[0] == 2
    assert run(capsys, "nonsense")[0] == 2
    assert run(capsys, "critval", "--gamma", 0.7)[0] == 2


def test_config_merging_and_rejection(break_csv, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\nm = 1000\nv = 1,0,0\nhorizon = 2\nc = 50\n")
    code, summary = run(capsys, "monitor", "--input", break_csv, "--config", cfg)
    assert code == 0 and summary["c"] == 50 and "signal_time" not in summary
    code, summary = run(capsys, "monitor", "--input", break_csv, "--config", cfg, "--c", 2.0)
    assert summary["c"] == 2.0
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = red\n")
    assert run(capsys, "monitor", "--input", break_csv, "--config", bad)[0] == 2


def test_critval_uses_shipped_table(capsys):
    code, rec = run(capsys, "critval", "--gamma", 0.25, "--delta", 0.1, "--alpha", 0.05, "--T", 2)
    assert code == 0 and rec["cached"] and rec["c"] == pytest.approx(2.1454, abs=1e-3)


def test_covest_and_portfolio(break_csv, tmp_path, capsys):
    code, res = run(capsys, "covest", "--input", break_csv, "--m", 1000, "--threshold", "hard", "--t", 0.2, "--out", tmp_path / "cov")
    assert code == 0 and res["nonzero_offdiag"] == 0
    S = matrix_from_json((tmp_path / "cov" / "covariance.json").read_text())
    assert S.shape == (3, 3) and np.count_nonzero(S - np.diag(np.diag(S))) == 0
    code, rep = run(capsys, "portfolio", "--input", break_csv, "--m", 1000)
    assert code == 0 and abs(sum(rep["weights"]) - 1) < 1e-12
    code, rep = run(capsys, "portfolio", "--input", break_csv, "--kind", "target", "--mu0", 0.01)
    assert code == 0 and abs(rep["constraints_residuals"]["target_return"]) < 1e-10


def test_experiment63_small(tmp_path, capsys):
    args = ["experiment63", "--n", 2600, "--m", 500, "--epochs", 3, "--plot-len", 2600, "--out", tmp_path]
    code, res = run(capsys, *args, "--no-retrain")
    assert code == 0 and res["n_trainings"] == 1
    with open(tmp_path / "figure.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "episode", "x1", "z", "D_proj", "D_res", "B"] and len(rows) == 2601
    code, res = run(capsys, *args, "--seeds", 2)
    assert code == 0 and len(res["runs"]) == 2 and (tmp_path / "delays.csv").exists()
