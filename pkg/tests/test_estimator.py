import warnings

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.utils.estimator_checks import parametrize_with_checks

from infebm import InferableEBMRegressor


@parametrize_with_checks([InferableEBMRegressor(n_rounds=20, max_bins=16)])
def test_sklearn_compatible(estimator, check):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        check(estimator)


@pytest.fixture
def data(rng):
    X = rng.random((400, 3))
    y = 2 * np.sin(2 * np.pi * X[:, 0]) + X[:, 1] ** 2 + 0.3 * rng.standard_normal(400)
    return X, y


def test_fit_predict_quality(data):
    X, y = data
    est = InferableEBMRegressor(n_rounds=200).fit(X, y)
    assert est.score(X, y) > 0.8
    contrib = est.contributions(X)
    np.testing.assert_allclose(est.intercept_ + contrib.sum(axis=1), est.predict(X))
    assert abs(contrib[:, 2]).max() < abs(contrib[:, 0]).max()


def test_not_fitted():
    with pytest.raises(NotFittedError):
        InferableEBMRegressor().predict(np.zeros((2, 2)))


def test_wrong_width(data):
    X, y = data
    est = InferableEBMRegressor(n_rounds=10).fit(X, y)
    with pytest.raises(ValueError, match="features"):
        est.predict(X[:, :2])


def test_intervals_api(data):
    X, y = data
    est = InferableEBMRegressor(n_rounds=100, calibration_fraction=0.25).fit(X, y)
    q = X[:5]
    ci = est.confidence_interval(q)
    pi = est.prediction_interval(q)
    cpi = est.prediction_interval(q, conformal=True)
    ri = est.reproduction_interval(q)
    assert np.all(pi.half_width >= ci.half_width)
    np.testing.assert_allclose(ri.half_width, np.sqrt(2) * ci.half_width)
    assert np.all(np.isfinite(cpi.half_width))
    fi = est.feature_interval(0, [0.1, 0.5])
    np.testing.assert_allclose(fi.center, est.feature_effect(0, [0.1, 0.5]))
    np.testing.assert_allclose(fi.r_norm, est.r_norm(0, [0.1, 0.5]))
    assert est.intercept_interval().center == est.intercept_
    assert est.feature_significance(0, 0.25).p_value < 0.05


def test_calibration_split_leaves_fewer_training_rows(data):
    X, y = data
    est = InferableEBMRegressor(n_rounds=10, calibration_fraction=0.25).fit(X, y)
    assert est.cache_.n == 300
    assert len(est.cache_.calibration_scores) == 100
    with pytest.raises(ValueError):
        InferableEBMRegressor(calibration_fraction=1.0).fit(X, y)


def test_clone_and_pipeline(data):
    X, y = data
    est = InferableEBMRegressor(n_rounds=30, variant="loo")
    assert clone(est).get_params() == est.get_params()
    scores = cross_val_score(make_pipeline(StandardScaler(), est), X, y, cv=3)
    assert np.all(scores > 0.5)


@pytest.mark.parametrize("variant", ["parallel", "loo", "cyclic"])
def test_variants_fit(data, variant):
    X, y = data
    est = InferableEBMRegressor(variant=variant, n_rounds=150).fit(X, y)
    assert est.score(X, y) > 0.6
    assert est.cache_.rescale == (1.0 if variant == "loo" else 2.0)


def test_aligned_method(data):
    X, y = data
    est = InferableEBMRegressor(n_rounds=30, inference_method="aligned").fit(X, y)
    assert np.all(est.r_norm(0, [0.2, 0.8]) > 0)


def test_strip_keeps_queries(data):
    X, y = data
    est = InferableEBMRegressor(n_rounds=20).fit(X, y)
    before = est.confidence_interval(X[:3]).half_width
    est.strip()
    assert not hasattr(est, "binned_")
    np.testing.assert_array_equal(est.confidence_interval(X[:3]).half_width, before)


def test_small_sample_sigma_fallback(rng):
    X = rng.random((6, 2))
    with pytest.warns(RuntimeWarning, match="uncorrected"):
        est = InferableEBMRegressor(n_rounds=5, min_leaf_samples=1).fit(X, rng.random(6))
    assert est.sigma_ >= 0
