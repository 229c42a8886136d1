"""End-to-end acceptance criteria.

Each test records a one-line verdict that is printed in the pytest terminal
summary, then asserts the criterion at its stated tolerance.
"""

import time

import numpy as np
import pytest

from infebm import experiments as ex
from infebm import oracle
from infebm.boost import BoostConfig, train
from infebm.checks import check_decomposition, check_woodbury
from infebm.cli import main
from infebm.data import bin_features

pytestmark = pytest.mark.slow


def test_bin_decomposition(acceptance):
    t0 = time.perf_counter()
    res = check_decomposition(instances=100, n_max=200, bins_max=16, tol=1e-10)
    elapsed = time.perf_counter() - t0
    ok = res.passed and elapsed < 10
    acceptance("bin-level structure decomposition", ok,
               f"max deviation {res.max_deviation:.2e} (tol 1e-10), {elapsed:.1f}s (limit 10s)")
    assert ok


def test_woodbury_equivalence(acceptance):
    t0 = time.perf_counter()
    res = check_woodbury(instances=50, n_max=200, p_max=3, tol=1e-8)
    elapsed = time.perf_counter() - t0
    ok = res.passed and elapsed < 30
    acceptance("bin-space influence norms", ok,
               f"max deviation {res.max_deviation:.2e} (tol 1e-8), {elapsed:.1f}s (limit 30s)")
    assert ok


def _fixed_point_problem():
    rng = np.random.default_rng(2024)
    X = rng.random((100, 2))
    y = np.sin(2 * np.pi * X[:, 0]) + (X[:, 1] - 0.5) ** 2 + 0.5 * rng.standard_normal(100)
    return bin_features(X), y


def _limit_error(variant, solve):
    binned, y = _fixed_point_problem()
    cfg = BoostConfig(variant=variant, learning_rate=1.0, n_rounds=5000, freeze_after=500,
                      seed=0)
    t0 = time.perf_counter()
    model, acc = train(binned, y, cfg)
    Ks = [oracle.kernel_from_block(H, oracle.assignment_matrix(binned, k))
          for k, H in enumerate(acc.blocks())]
    fp = solve(Ks, y)
    limit = fp.intercept + model.rescale * (fp.fitted - fp.intercept)
    pred = model.predict_bins(binned.bin_index)
    rel = np.linalg.norm(pred - limit) / np.linalg.norm(limit)
    gap = abs(model.intercept - y.mean()) / y.std(ddof=1)
    return rel, gap, time.perf_counter() - t0


def test_fixed_point_parallel(acceptance):
    rel, gap, elapsed = _limit_error("parallel", lambda K, y: oracle.fixed_point_A(K, y, 1.0))
    ok = rel <= 1e-2 and gap <= 1e-3 and elapsed < 120
    acceptance("fixed point, parallel loop", ok,
               f"relative error {rel:.2e} (tol 1e-2), |beta - ybar|/sd {gap:.1e} (tol 1e-3), "
               f"{elapsed:.0f}s")
    assert ok


def test_fixed_point_leave_one_out(acceptance):
    rel, gap, elapsed = _limit_error("loo", oracle.fixed_point_B)
    ok = rel <= 2e-2 and gap <= 1e-3 and elapsed < 120
    acceptance("fixed point, leave-one-out loop", ok,
               f"relative error {rel:.2e} (tol 2e-2), |beta - ybar|/sd {gap:.1e} (tol 1e-3), "
               f"{elapsed:.0f}s")
    assert ok


def test_coverage(acceptance):
    t0 = time.perf_counter()
    rows = ex.coverage_experiment(ex.friedman_like(1.0), n=2000, trials=50, alpha=0.05)
    elapsed = time.perf_counter() - t0
    by = {(r["interval"], r["feature"]): r["coverage"] for r in rows}
    features = [by[("feature_ci", k)] for k in range(4)]
    intercept = by[("intercept_ci", "")]
    conformal = by[("conformal_pi", "")]
    ri = by[("ri", "")]
    checks = {
        "feature CI in [0.88, 0.99]": all(0.88 <= c <= 0.99 for c in features),
        "intercept CI in [0.90, 0.99]": 0.90 <= intercept <= 0.99,
        "conformal PI in [0.90, 0.98]": 0.90 <= conformal <= 0.98,
        "RI >= 0.93": ri >= 0.93,
        "runtime <= 20 min": elapsed <= 1200,
    }
    for name, ok in checks.items():
        acceptance(f"coverage: {name}", ok,
                   {"feature CI in [0.88, 0.99]": "per-feature " + ", ".join(f"{c:.3f}" for c in features),
                    "intercept CI in [0.90, 0.99]": f"{intercept:.3f} (population mean target "
                                                    f"{by[('intercept_ci_population', '')]:.3f})",
                    "conformal PI in [0.90, 0.98]": f"{conformal:.3f}",
                    "RI >= 0.93": f"{ri:.3f}",
                    "runtime <= 20 min": f"{elapsed:.0f}s"}[name])
    failed = [name for name, ok in checks.items() if not ok]
    assert not failed, f"coverage criteria not met: {failed}; table:\n{ex.format_table(rows)}"


@pytest.fixture(scope="module")
def rate_rows():
    # leaf sizes governed by the n^(2/3) minimum-leaf rule rather than a depth cap
    t0 = time.perf_counter()
    rows = ex.rate_experiment(ex.friedman_like(1.0), n_grid=(500, 1000, 2000, 4000), trials=10,
                              n_rounds=500, max_depth=12)
    return rows, time.perf_counter() - t0


def _slope(rows, name):
    return next(r["slope"] for r in rows if r["experiment"] == name)


def test_mse_rate(acceptance, rate_rows):
    rows, elapsed = rate_rows
    slope = _slope(rows, "mse_rate")
    ok = -0.9 <= slope <= -0.45 and elapsed <= 900
    acceptance("MSE rate", ok, f"log-log slope {slope:.3f} in [-0.9, -0.45], {elapsed:.0f}s")
    assert ok


def test_r_norm_rate(acceptance, rate_rows):
    rows, _ = rate_rows
    slope = _slope(rows, "r_norm_rate")
    ok = -0.48 <= slope <= -0.18
    acceptance("influence-norm rate", ok, f"log-log slope {slope:.3f} in [-0.48, -0.18]")
    assert ok


def test_query_time_independent_of_n(acceptance):
    rows = ex.query_time_experiment(sizes=(1_000, 100_000), max_bins=64)
    small, large = rows[0]["seconds_per_query"], rows[1]["seconds_per_query"]
    same_bins = rows[0]["bins"] == rows[1]["bins"]
    ok = same_bins and large <= 2 * small
    acceptance("query time independent of n", ok,
               f"{small * 1e6:.0f}us at n=1e3, {large * 1e6:.0f}us at n=1e5 "
               f"(ratio {large / small:.2f}, limit 2), equal bins {same_bins}")
    assert ok


def test_overfitting_robustness(acceptance):
    rows = ex.overfit_experiment(ex.fast_wave(1.0), n=500, B_max=5000, every=50)
    flat = {r["method"]: r["rmse"] for r in rows if r["rounds"] == "flatness"}
    ok = flat["boulevard"] <= 1.05
    acceptance("overfitting robustness", ok,
               f"final/min test RMSE {flat['boulevard']:.4f} (limit 1.05); summed boosting "
               f"contrast {flat['additive']:.3f}")
    assert ok


def test_cli_train_explain_smoke(acceptance, tmp_path, capsys):
    d = ex.generate(ex.friedman_like(1.0), 500, seed=0)
    csv = tmp_path / "data.csv"
    names = [f"f{k}" for k in range(4)]
    lines = [",".join(names + ["target"])]
    lines += [",".join(repr(float(v)) for v in [*x, t]) for x, t in zip(d.X, d.y)]
    csv.write_text("\n".join(lines) + "\n")
    model = tmp_path / "model.json"
    train_code = main(["train", str(csv), "--target", "target", "--out", str(model),
                       "--rounds", "200"])
    explain_code = main(["explain", "--model", str(model), "--feature", "f0",
                         "--format", "json-lines"])
    out = capsys.readouterr().out
    ok = train_code == 0 and explain_code == 0 and out.count('"effect"') == 50
    acceptance("CLI train/explain smoke test", ok,
               f"train exit {train_code}, explain exit {explain_code}")
    assert ok
