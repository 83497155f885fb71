import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from qbvine.cli import main

FAST = {"n_perms": 2, "cv_folds": 3, "bandwidth_grid": [1.25, 2.0], "rho_grid": [0.5, 0.9],
        "energy_samples": 20}


def write(path, x, header):
    np.savetxt(path, x, delimiter=",", header=",".join(header), comments="")
    return str(path)


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    r = np.random.default_rng(0)
    x = r.multivariate_normal([0, 0], [[1, 0.6], [0.6, 1]], 80)
    write(tmp_path / "toy.csv", x, ["a", "b"])
    X = r.standard_normal((120, 2))
    X = X[np.abs(X.sum(axis=1)) > 0.7]
    y = (X.sum(axis=1) > 0).astype(int)
    write(tmp_path / "cls.csv", np.column_stack([X, y]), ["f1", "f2", "label"])
    write(tmp_path / "reg.csv", np.column_stack([X, X[:, 0] + 0.1 * r.standard_normal(len(X))]),
          ["f1", "f2", "y"])
    (tmp_path / "fast.json").write_text(json.dumps(FAST))
    return tmp_path


def run(*args):
    return main([str(a) for a in args])


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_fit_outputs_and_report(work):
    assert run("fit", "toy.csv", "--config", "fast.json", "--out", "o") == 0
    assert (work / "o/model.json").is_file()
    report = json.loads((work / "o/fit_report.json").read_text())
    assert len(report["rho"]) == 2
    manifest = json.loads((work / "o/manifest.json").read_text())
    assert manifest["command"] == "fit" and set(manifest["outputs"]) == {"model.json", "fit_report.json"}
    assert list(manifest["inputs"].values())[0] and "marginals" in manifest["timings"]


def test_fit_report_reproducible_across_runs_and_threads(work):
    for out, threads in (("a", 1), ("b", 1), ("c", 3)):
        assert run("fit", "toy.csv", "--config", "fast.json", "--seed", 5, "--threads", threads, "--out", out) == 0
    ref = (work / "a/fit_report.json").read_bytes()
    assert ref == (work / "b/fit_report.json").read_bytes() == (work / "c/fit_report.json").read_bytes()
    assert (work / "a/model.json").read_bytes() == (work / "c/model.json").read_bytes()


def test_precedence(work):
    (work / "seeded.toml").write_text('seed = 11\nn_perms = 2\ncv_folds = 3\nbandwidth_grid = [1.25]\n'
                                      'rho_grid = [0.5]\nenergy_samples = 20\n')
    assert run("fit", "toy.csv", "--config", "seeded.toml", "--out", "f") == 0
    assert run("fit", "toy.csv", "--config", "seeded.toml", "--seed", 4, "--set", "n_perms=1", "--out", "g") == 0
    f = json.loads((work / "f/manifest.json").read_text())
    g = json.loads((work / "g/manifest.json").read_text())
    assert f["seed"] == 11 and f["config"]["n_perms"] == 2
    assert g["seed"] == 4 and g["config"]["n_perms"] == 1


def test_config_key_errors_name_the_key(work, capsys):
    (work / "bad.json").write_text(json.dumps({"n_perm": 3}))
    assert run("fit", "toy.csv", "--config", "bad.json", "--out", "o") == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "n_perm" in json.loads(err[0])["message"]
    (work / "bad.json").write_text(json.dumps({"rho_grid": {"start": 0.1, "stop": 0.9}}))
    assert run("fit", "toy.csv", "--config", "bad.json", "--out", "o") == 2
    assert "num" in json.loads(capsys.readouterr().err)["message"]


def test_exit_codes(work, capsys):
    assert run("fit", "--out", "o") == 2
    assert run("bogus") == 2
    assert run("fit", "missing.csv", "--out", "o") == 3
    (work / "text.csv").write_text("a,b\n1,x\n")
    assert run("fit", "text.csv", "--out", "o") == 3
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["exit_code"] == 3 and "row 2, column 2" in rec["message"]
    (work / "const.csv").write_text("a,b\n" + "\n".join(f"{i},1" for i in range(20)))
    assert run("fit", "const.csv", "--config", "fast.json", "--out", "o") == 3


def test_density_and_sample(work):
    assert run("fit", "toy.csv", "--config", "fast.json", "--out", "m") == 0
    assert run("density", "m/model.json", "toy.csv", "--out", "d") == 0
    rows = read_rows(work / "d/density.csv")
    assert rows[0] == ["log_density"] and len(rows) == 81
    summary = json.loads((work / "d/density_summary.json").read_text())
    assert np.isfinite(summary["lps"]) and summary["lps_2se"] > 0 and summary["n"] == 80
    assert run("sample", "m/model.json", "--count", 37, "--seed", 2, "--out", "s") == 0
    rows = read_rows(work / "s/samples.csv")
    assert rows[0] == ["a", "b"] and len(rows) == 38
    assert run("sample", "m/model.json", "--count", 37, "--seed", 2, "--out", "s2") == 0
    assert (work / "s/samples.csv").read_bytes() == (work / "s2/samples.csv").read_bytes()


def test_density_dimension_mismatch(work):
    assert run("fit", "toy.csv", "--config", "fast.json", "--out", "m") == 0
    assert run("density", "m/model.json", "cls.csv", "--out", "d") == 3


def test_classification_predict(work):
    assert run("fit-conditional", "cls.csv", "--target", "label", "--task", "classification",
               "--config", "fast.json", "--out", "c") == 0
    assert run("predict", "c/model.json", "cls.csv", "--out", "p") == 0
    rows = read_rows(work / "p/predictions.csv")
    assert rows[0][:3] == ["prob_positive", "label", "degenerate"]
    probs = np.array([float(r[0]) for r in rows[1:]])
    labels = {r[1] for r in rows[1:]}
    assert labels <= {"0", "1"} and np.all((probs >= 0) & (probs <= 1))
    summary = json.loads((work / "p/predict_summary.json").read_text())
    assert summary["accuracy"] >= 0.8
    # features only, no target column
    X = np.loadtxt(work / "cls.csv", delimiter=",", skiprows=1)[:, :2]
    write(work / "feat.csv", X, ["f1", "f2"])
    assert run("predict", "c/model.json", "feat.csv", "--out", "p2") == 0
    assert "accuracy" not in json.loads((work / "p2/predict_summary.json").read_text())


def test_regression_predict(work):
    assert run("fit-conditional", "reg.csv", "--target", 2, "--config", "fast.json", "--out", "r") == 0
    assert run("predict", "r/model.json", "reg.csv", "--out", "p") == 0
    summary = json.loads((work / "p/predict_summary.json").read_text())
    assert summary["task"] == "regression" and summary["rmse"] < 0.6 and np.isfinite(summary["conditional_lps"])
    # unnamed columns fall back to position when the count matches
    assert run("predict", "r/model.json", "toy.csv", "--out", "p3") == 0
    assert len(read_rows(work / "p3/predictions.csv")) == 81


def test_single_class_is_data_error(work):
    X = np.random.default_rng(1).standard_normal((30, 2))
    write(work / "one.csv", np.column_stack([X, np.ones(30)]), ["a", "b", "y"])
    assert run("fit-conditional", "one.csv", "--target", "y", "--task", "classification",
               "--config", "fast.json", "--out", "o") == 3


def test_bench_gmm_table(work):
    assert run("bench-gmm", "--dims", 2, "--n", 40, "--seeds", 0, 1, 2, "--config", "fast.json", "--out", "b") == 0
    rows = list(csv.DictReader(open(work / "b/bench_table.csv")))
    assert len(rows) == 1
    row = rows[0]
    for col in ("qbvine", "indep_baseline", "gaussian_baseline", "oracle"):
        assert col in row and col + "_2se" in row
    oracle = float(row["oracle"])
    for col in ("qbvine", "indep_baseline", "gaussian_baseline"):
        assert oracle <= float(row[col]) + float(row[col + "_2se"]) + float(row["oracle_2se"])
    assert len(list(csv.DictReader(open(work / "b/bench_runs.csv")))) == 3


def test_writes_only_inside_out_dir(work):
    before = {p for p in work.rglob("*")}
    assert run("fit", "toy.csv", "--config", "fast.json", "--out", "deep/out") == 0
    assert run("sample", "deep/out/model.json", "--count", 5, "--out", "deep/s") == 0
    new = {p for p in work.rglob("*")} - before
    assert new and all(p == work / "deep" or (work / "deep") in p.parents for p in new)


def test_console_script_error_record(work):
    env = {**os.environ, "PYTHONPATH": os.pathsep.join(sys.path)}
    proc = subprocess.run([sys.executable, "-m", "qbvine.cli", "density", "nope.json", "toy.csv", "--out", "x"],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 3
    lines = proc.stderr.strip().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["error"] == "DataError"
