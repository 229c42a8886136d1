import json
import subprocess
import sys
import time

import numpy as np
import pytest

from infebm import serialization
from infebm.cli import main


def write_csv(path, X, y, names=None):
    names = names or [f"x{k}" for k in range(X.shape[1])]
    rows = [",".join(names + ["y"])]
    rows += [",".join(repr(float(v)) for v in list(x) + [t]) for x, t in zip(X, y)]
    path.write_text("\n".join(rows) + "\n")
    return str(path)


@pytest.fixture
def csv_file(tmp_path, rng):
    X = rng.random((200, 2))
    y = 3 * np.sin(3 * X[:, 0]) + X[:, 1] + 0.3 * rng.standard_normal(200)
    return write_csv(tmp_path / "train.csv", X, y, ["age", "dose"])


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def json_rows(text):
    return [json.loads(line) for line in text.splitlines() if line]


def train(capsys, csv_file, out, *extra):
    return run(capsys, "train", csv_file, "--target", "y", "--out", out, "--rounds", 60, *extra)


def test_train_writes_model_and_summary(capsys, csv_file, tmp_path):
    model = tmp_path / "m.json"
    code, out, _ = train(capsys, csv_file, model)
    assert code == 0 and model.exists()
    assert "intercept" in out and "age" in out and "dose" in out


def test_train_is_deterministic(capsys, csv_file, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    train(capsys, csv_file, a, "--seed", 5)
    train(capsys, csv_file, b, "--seed", 5)
    assert a.read_bytes() == b.read_bytes()


def test_constant_target(capsys, tmp_path, rng):
    csv = write_csv(tmp_path / "c.csv", rng.random((30, 2)), np.full(30, 4.0))
    model = tmp_path / "m.json"
    code, _, _ = train(capsys, csv, model)
    assert code == 0
    est = serialization.load(model)
    assert est.intercept_ == pytest.approx(4.0)
    assert all(np.all(e == 0) for e in est.model_.effects)
    code, out, _ = run(capsys, "explain", "--model", model, "--feature", "x0", "--grid", 5,
                       "--format", "json-lines")
    for r in json_rows(out):
        assert r["effect"] == 0 and r["lower"] == r["upper"] == 0


def test_rejected_rows_reported(capsys, tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,y\n" + "".join(f"{i},{i % 3}\n" for i in range(20)) + "oops,1\n")
    code, _, err = train(capsys, str(path), tmp_path / "m.json")
    assert code == 0 and "1 rows" in err


def test_predict_matches_in_memory(capsys, csv_file, tmp_path):
    model = tmp_path / "m.json"
    train(capsys, csv_file, model)
    est = serialization.load(model)
    data = np.loadtxt(csv_file, delimiter=",", skiprows=1)
    _, out, _ = run(capsys, "predict", csv_file, "--model", model, "--format", "json-lines")
    preds = [r["prediction"] for r in json_rows(out)]
    np.testing.assert_allclose(preds, est.predict(data[:, :2]))

    _, ci, _ = run(capsys, "predict", csv_file, "--model", model, "--interval", "ci",
                   "--format", "json-lines")
    _, ri, _ = run(capsys, "predict", csv_file, "--model", model, "--interval", "ri",
                   "--format", "json-lines")
    _, pi, _ = run(capsys, "predict", csv_file, "--model", model, "--interval", "pi",
                   "--format", "json-lines")
    w = lambda rows: np.array([r["upper"] - r["lower"] for r in json_rows(rows)])
    np.testing.assert_allclose(w(ri), np.sqrt(2) * w(ci), rtol=1e-12)
    assert np.all(w(pi) >= w(ci))


def test_predict_schema_mismatch(capsys, csv_file, tmp_path, rng):
    model = tmp_path / "m.json"
    train(capsys, csv_file, model)
    other = write_csv(tmp_path / "o.csv", rng.random((5, 2)), np.zeros(5), ["age", "weight"])
    code, _, err = run(capsys, "predict", other, "--model", model)
    assert code == 1 and "schema mismatch" in err


def test_explain_band(capsys, csv_file, tmp_path):
    model = tmp_path / "m.json"
    train(capsys, csv_file, model)
    code, out, _ = run(capsys, "explain", "--model", model, "--feature", "age", "--grid", 25,
                       "--format", "json-lines")
    rows = json_rows(out)
    xs = [r["x"] for r in rows]
    assert code == 0 and len(rows) == 25 and np.all(np.diff(xs) > 0)
    assert all(r["lower"] <= r["effect"] <= r["upper"] for r in rows)
    code, out, _ = run(capsys, "explain", "--model", model, "--feature", "1",
                       "--grid-values", "0.5,0.1", "--format", "json-lines")
    assert [r["x"] for r in json_rows(out)] == [0.1, 0.5]


def test_explain_unknown_feature(capsys, csv_file, tmp_path):
    model = tmp_path / "m.json"
    train(capsys, csv_file, model)
    code, _, err = run(capsys, "explain", "--model", model, "--feature", "height")
    assert code == 1 and "unknown feature" in err


def test_errors_exit_nonzero(capsys, tmp_path, csv_file):
    code, _, err = run(capsys, "predict", csv_file, "--model", tmp_path / "none.json")
    assert code == 1 and "not found" in err
    code, _, err = run(capsys, "train", tmp_path / "none.csv", "--target", "y", "--out",
                       tmp_path / "m.json")
    assert code == 1
    code, _, err = run(capsys, "train", csv_file, "--target", "zzz", "--out", tmp_path / "m.json")
    assert code == 1 and "zzz" in err


def test_verify_passes_quickly(capsys):
    t0 = time.perf_counter()
    code, out, _ = run(capsys, "verify", "--n", 50, "--format", "json-lines")
    assert time.perf_counter() - t0 < 5
    rows = json_rows(out)
    assert code == 0 and {r["check"] for r in rows} == {"decomposition", "woodbury", "fixed_point"}
    assert all(r["status"] == "pass" for r in rows)


def test_verify_detects_corruption(capsys):
    code, out, err = run(capsys, "verify", "--n", 50, "--scale", 0.1, "--corrupt")
    assert code == 1 and "FAIL" in out


def test_experiment_command(capsys):
    code, out, _ = run(capsys, "experiment", "overfit", "--dgp", "fast_wave", "--n", 100,
                       "--rounds", 100, "--format", "json-lines")
    rows = json_rows(out)
    assert code == 0 and any(r["rounds"] == "flatness" for r in rows)


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "infebm", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "train" in res.stdout
