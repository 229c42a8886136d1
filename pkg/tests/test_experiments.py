import json
import math

import numpy as np
import pytest

from infebm import experiments as ex


def test_additive4_hand_value():
    dgp = ex.friedman_like(0.0)
    # -5 + 10 sin(pi/2) + 5 cos(pi/2) + 20 * 0 + 10 * 0.5 - 5 * 0.5
    assert dgp.mean_function(np.full((1, 4), 0.5))[0] == pytest.approx(7.5)


def test_zero_dgp_is_zero():
    d = ex.generate(ex.null_dgp(2, noise=0.0), 50, seed=0)
    np.testing.assert_array_equal(d.y, 0.0)


def test_generate_mean_and_determinism():
    dgp = ex.friedman_like(1.0)
    d = ex.generate(dgp, 4000, seed=3)
    sd = math.sqrt(np.var(dgp.mean_function(d.X)) + 1.0)
    assert abs(d.y.mean() - dgp.population_mean) <= 3 * sd / math.sqrt(4000)
    np.testing.assert_array_equal(ex.generate(dgp, 10, 1).X, ex.generate(dgp, 10, 1).X)
    with pytest.raises(ValueError):
        ex.generate(dgp, 1, 0)


def test_centered_components_have_zero_mean():
    dgp = ex.friedman_like()
    u = np.random.default_rng(0).random(200_000)
    for k in range(4):
        assert abs(dgp.centered_component(k, u).mean()) < 0.05
    assert dgp.component_means()[2] == pytest.approx(5.0, abs=0.01)


def test_query_grid():
    g = ex.query_grid()
    assert len(g) == 50 and g[0] == pytest.approx(0.02) and g[-1] == pytest.approx(0.98)


def test_binomial_se():
    assert ex.binomial_se(0.5, 100) == pytest.approx(0.05)


def test_degenerate_coverage_is_one():
    rows = ex.coverage_experiment(ex.null_dgp(2, noise=0.0), n=100, trials=10, n_rounds=10,
                                  n_test=20, n_cal=20, grid_size=5)
    for r in rows:
        if r["interval"] in ("feature_ci", "intercept_ci", "overall_ci", "pi"):
            assert r["coverage"] == 1.0


def test_coverage_requires_trials():
    with pytest.raises(ValueError):
        ex.coverage_experiment(trials=5)


def test_widths_shrink_with_n():
    rows = ex.rate_experiment(ex.wave(1.0), n_grid=(250, 1000, 4000), trials=2, n_rounds=60,
                              n_test=200)
    rn = [r["r_norm"] for r in rows if r["experiment"] == "rate"]
    assert rn[-1] < rn[0]
    assert rows[-1]["experiment"] == "r_norm_rate" and rows[-1]["slope"] < 0


def test_constant_response_gives_flat_curve():
    rows = ex.overfit_experiment(ex.null_dgp(1, noise=0.0), n=100, B_max=100, every=25,
                                 n_test=50, baseline=False)
    assert all(r["rmse"] == 0.0 for r in rows if r["rounds"] != "flatness")


def test_loglog_slope():
    n = np.array([100, 200, 400, 800])
    assert ex.loglog_slope(n, n ** -0.5) == pytest.approx(-0.5)


def test_table_and_json_lines():
    rows = [{"a": 1, "b": 0.5}, {"a": 2, "b": float("nan"), "c": np.float64(3.0)}]
    table = ex.format_table(rows).splitlines()
    assert table[0].split() == ["a", "b", "c"]
    assert len(table) == 3
    recs = [json.loads(line) for line in ex.to_json_lines(rows).splitlines()]
    assert recs[1] == {"a": 2, "b": None, "c": 3.0}
    assert ex.format_table([]) == ""
