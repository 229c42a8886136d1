"""Scikit-learn style estimator wrapping binning, training and inference."""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import inference
from .boost import BoostConfig, strip_trace, train
from .data import DEFAULT_MAX_BINS, bin_features


class InferableEBMRegressor(RegressorMixin, BaseEstimator):
    """Additive boosted-tree regressor with closed-form uncertainty.

    Each feature gets its own sequence of shallow histogram trees; the trees
    are averaged rather than summed, which makes the fitted shape functions
    converge to a kernel ridge regression and lets every feature effect carry
    a confidence interval.

    Parameters
    ----------
    variant : {"parallel", "loo", "cyclic"}, default="parallel"
        Training loop. ``"parallel"`` fits all features to the joint residual
        each round, ``"loo"`` fits each feature to its leave-one-out residual,
        ``"cyclic"`` updates one randomly chosen feature per round.
    learning_rate : float, default=1.0
        Shrinkage ``lam`` in (0, 1]. Ignored by ``"loo"``.
    n_rounds : int, default=1000
        Number of boosting rounds.
    subsample : float, default=0.8
        Row fraction drawn for each tree.
    max_bins : int, default=255
        Histogram bins per feature.
    max_depth : int, default=3
        Depth of each tree.
    min_leaf_samples : int or None, default=None
        Minimum training samples per leaf; ``None`` picks a value growing like
        ``n^(2/3)``.
    truncation : float or None, default=None
        Leaf values are clipped to ``[-truncation, truncation]``; ``None`` uses
        four standard deviations of ``y``.
    burn_in : int or None, default=None
        Rounds excluded from the kernel average.
    freeze_after : int or None, default=None
        If set, later rounds only refit leaf values on structures sampled
        from those grown up to this round.
    pool_size : int, default=50
        Size of the frozen structure pool.
    honest : bool, default=False
        Choose splits and leaf values on disjoint halves of each subsample.
    sigma_mode : {"in_sample", "oob"}, default="in_sample"
        Noise-scale estimator.
    inference_method : {"joint", "aligned"}, default="joint"
        Bin-space solver for influence norms.
    calibration_fraction : float, default=0.0
        Share of rows held out for conformal prediction intervals.
    random_state : int, default=0
    n_jobs : int or None, default=None
        Worker threads for the per-feature tree fits.

    Attributes
    ----------
    model_ : EnsembleModel
    cache_ : InferenceCache
    sigma_ : float
    intercept_ : float
    n_features_in_ : int
    """

    def __init__(self, variant="parallel", learning_rate=1.0, n_rounds=1000, subsample=0.8,
                 max_bins=DEFAULT_MAX_BINS, max_depth=3, min_leaf_samples=None,
                 truncation=None, burn_in=None, freeze_after=None, pool_size=50,
                 honest=False, sigma_mode="in_sample", inference_method="joint",
                 calibration_fraction=0.0, random_state=0, n_jobs=None):
        self.variant = variant
        self.learning_rate = learning_rate
        self.n_rounds = n_rounds
        self.subsample = subsample
        self.max_bins = max_bins
        self.max_depth = max_depth
        self.min_leaf_samples = min_leaf_samples
        self.truncation = truncation
        self.burn_in = burn_in
        self.freeze_after = freeze_after
        self.pool_size = pool_size
        self.honest = honest
        self.sigma_mode = sigma_mode
        self.inference_method = inference_method
        self.calibration_fraction = calibration_fraction
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _config(self):
        return BoostConfig(
            variant=self.variant, learning_rate=float(self.learning_rate),
            n_rounds=int(self.n_rounds), subsample=float(self.subsample),
            truncation=self.truncation, max_depth=int(self.max_depth),
            min_leaf_samples=self.min_leaf_samples, burn_in=self.burn_in,
            freeze_after=self.freeze_after, pool_size=int(self.pool_size), honest=bool(self.honest),
            seed=int(self.random_state), n_jobs=self.n_jobs).validate()

    def fit(self, X, y, callback=None):
        """Bin the features, run the boosting loop and build the inference cache.

        ``callback(b, model)`` is forwarded to the training loop.
        """
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if X.shape[0] < 2:
            raise ValueError(f"n_samples = {X.shape[0]}; need at least 2 samples")
        cfg = self._config()
        if not 0 <= self.calibration_fraction < 1:
            raise ValueError("calibration_fraction must lie in [0, 1)")
        X_cal = y_cal = None
        if self.calibration_fraction > 0:
            rng = np.random.default_rng([cfg.seed, 0xCA1])
            order = rng.permutation(X.shape[0])
            n_cal = max(1, int(round(self.calibration_fraction * X.shape[0])))
            cal, fit_rows = np.sort(order[:n_cal]), np.sort(order[n_cal:])
            X_cal, y_cal = X[cal], y[cal]
            X, y = X[fit_rows], y[fit_rows]
        self.n_features_in_ = X.shape[1]
        self.binned_ = bin_features(X, self.max_bins)
        model, acc = train(self.binned_, y, cfg, callback=callback)
        self.sigma_ = self._sigma(model, y)
        self.model_ = model
        self.accumulator_ = acc
        self.cache_ = inference.build_cache(acc, self.binned_, self.sigma_, model,
                                            method=self.inference_method)
        self.intercept_ = float(model.intercept)
        if X_cal is not None:
            self.calibrate(X_cal, y_cal)
        return self

    def _sigma(self, model, y):
        try:
            return inference.estimate_sigma(model, self.binned_, y, self.sigma_mode)
        except ValueError as exc:
            if self.sigma_mode != "in_sample" or "degrees of freedom" not in str(exc):
                raise
            # too few rows for the leaf-count correction: fall back to RSS / n
            warnings.warn(f"{exc}; sigma_ uses the uncorrected residual variance",
                          RuntimeWarning, stacklevel=3)
            resid = y - model.predict_bins(self.binned_.bin_index)
            return float(np.sqrt(resid @ resid / len(y)))

    def calibrate(self, X, y):
        """Record held-out residual scores used by conformal prediction intervals."""
        check_is_fitted(self, "cache_")
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        self.cache_.calibration_scores = inference.calibration_scores(
            self.model_, self.cache_, X, y)
        return self

    def _check_X(self, X):
        check_is_fitted(self, "cache_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but {type(self).__name__} "
                             f"is expecting {self.n_features_in_} features as input")
        return X

    def _bins(self, X):
        return np.column_stack([self.cache_.bins_of(k, X[:, k])
                                for k in range(self.n_features_in_)])

    def predict(self, X):
        X = self._check_X(X)
        return self.model_.predict_bins(self._bins(X))

    def contributions(self, X):
        """Per-feature (rescaled) shape-function contributions, shape (n, p)."""
        X = self._check_X(X)
        return self.model_.contributions(self._bins(X))

    def feature_effect(self, k, x_k):
        check_is_fitted(self, "cache_")
        return self.model_.feature_effect_bin(k, self.cache_.bins_of(k, x_k))

    def r_norm(self, k, x_k):
        check_is_fitted(self, "cache_")
        return inference.r_norm(self.cache_, k, x_k)

    def feature_interval(self, k, x_k, alpha=0.05):
        check_is_fitted(self, "cache_")
        return inference.feature_ci(self.model_, self.cache_, k, x_k, alpha)

    def intercept_interval(self, alpha=0.05):
        check_is_fitted(self, "cache_")
        return inference.intercept_ci(self.model_, self.cache_, alpha)

    def confidence_interval(self, X, alpha=0.05, mode="orthogonal_sum"):
        X = self._check_X(X)
        return inference.overall_ci(self.model_, self.cache_, X, alpha, mode)

    def prediction_interval(self, X, alpha=0.05, conformal=False, mode="orthogonal_sum"):
        X = self._check_X(X)
        return inference.prediction_interval(self.model_, self.cache_, X, alpha,
                                             conformal=conformal, mode=mode)

    def reproduction_interval(self, X, alpha=0.05, mode="orthogonal_sum"):
        return inference.reproduction_interval(self.confidence_interval(X, alpha, mode))

    def feature_significance(self, k, x_k):
        check_is_fitted(self, "cache_")
        return inference.feature_significance(self.model_, self.cache_, k, x_k)

    def strip(self):
        """Drop training-set-sized state (bin assignments, out-of-bag trace)."""
        self.model_ = strip_trace(self.model_)
        for name in ("binned_", "accumulator_"):
            if hasattr(self, name):
                delattr(self, name)
        return self
