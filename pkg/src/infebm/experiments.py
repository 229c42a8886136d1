"""Synthetic data generators and simulation studies.

Every study is seed-deterministic and returns a list of flat result records
(``dict`` rows) that :func:`format_table` or :func:`to_json_lines` render.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .boost import BoostConfig
from .data import Dataset, bin_features
from .estimator import InferableEBMRegressor
from .trees import TreeParams, center_and_truncate, fit_tree

CENTERING_DRAWS = 1_000_000
CENTERING_SEED = 20240601


@dataclass(frozen=True)
class SyntheticDGP:
    """Additive regression function with uniform covariates and Gaussian noise.

    ``components[k]`` maps a column of feature ``k`` to its contribution;
    features beyond ``len(components)`` are pure noise columns.
    """

    name: str
    components: tuple
    noise: float = 1.0
    constant: float = 0.0
    n_features: int | None = None
    seed: int = 0
    extra: dict = field(default_factory=dict, compare=False, hash=False)

    @property
    def p(self) -> int:
        return self.n_features if self.n_features is not None else len(self.components)

    def component(self, k, x):
        x = np.asarray(x, dtype=float)
        if k >= len(self.components):
            return np.zeros_like(x)
        return self.components[k](x)

    def mean_function(self, X):
        X = np.atleast_2d(X)
        return self.constant + sum(self.component(k, X[:, k]) for k in range(self.p))

    def component_means(self) -> np.ndarray:
        """Monte-Carlo means of every component under the covariate law."""
        return _component_means(self)

    def centered_component(self, k, x):
        return self.component(k, x) - self.component_means()[k]

    @property
    def population_mean(self) -> float:
        return self.constant + float(self.component_means().sum())


@lru_cache(maxsize=32)
def _component_means(dgp):
    rng = np.random.default_rng(CENTERING_SEED)
    u = rng.random(CENTERING_DRAWS)
    return np.array([float(np.mean(dgp.component(k, u))) for k in range(dgp.p)])


def with_noise(dgp: SyntheticDGP, noise: float) -> SyntheticDGP:
    return SyntheticDGP(dgp.name, dgp.components, noise, dgp.constant, dgp.n_features, dgp.seed)


def with_features(dgp: SyntheticDGP, p: int) -> SyntheticDGP:
    return SyntheticDGP(dgp.name, dgp.components, dgp.noise, dgp.constant, p, dgp.seed)


def _sin1(x):
    return 10.0 * np.sin(np.pi * x)


def _bowl(x):
    return 5.0 * np.cos(np.pi * x) + 20.0 * (x - 0.5) ** 2


def _lin3(x):
    return 10.0 * x


def _lin4(x):
    return -5.0 * x


def _wave(x):
    return 2.0 * np.sin(2.0 * np.pi * x) + x ** 2


def _fast_wave(x):
    return np.sin(4.0 * np.pi * x)


def _zero(x):
    return np.zeros_like(x)


def friedman_like(noise: float = 1.0) -> SyntheticDGP:
    """Four-feature benchmark used for the coverage and rate studies."""
    return SyntheticDGP("additive4", (_sin1, _bowl, _lin3, _lin4), noise, constant=-5.0)


def wave(noise: float = 1.0) -> SyntheticDGP:
    """``2 sin(2 pi x) + x^2`` on one feature."""
    return SyntheticDGP("wave", (_wave,), noise)


def fast_wave(noise: float = 1.0) -> SyntheticDGP:
    """``sin(4 pi x)`` on one feature."""
    return SyntheticDGP("fast_wave", (_fast_wave,), noise)


def null_dgp(p: int = 1, noise: float = 1.0) -> SyntheticDGP:
    return SyntheticDGP("null", (_zero,) * p, noise)


DGPS = {"additive4": friedman_like, "wave": wave, "fast_wave": fast_wave}


def generate(dgp: SyntheticDGP, n: int, seed: int) -> Dataset:
    """I.i.d. uniform covariates on ``[0, 1]^p`` and Gaussian noise."""
    if n < 2:
        raise ValueError("n must be at least 2")
    rng = np.random.default_rng([dgp.seed, seed])
    X = rng.random((n, dgp.p))
    y = dgp.mean_function(X) + dgp.noise * rng.standard_normal(n)
    return Dataset(X, y, target="y")


def query_grid(size: int = 50) -> np.ndarray:
    return np.linspace(0.02, 0.98, size)


def binomial_se(rate: float, count: int) -> float:
    return math.sqrt(max(rate * (1.0 - rate), 0.0) / max(count, 1))


def _map(fn, items, n_jobs):
    if n_jobs is None or n_jobs <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(n_jobs) as ex:
        return list(ex.map(fn, items))


def default_estimator(variant="parallel", n_rounds=500, seed=0, **kw) -> InferableEBMRegressor:
    params = dict(variant=variant, n_rounds=n_rounds, random_state=seed)
    params.update(kw)
    return InferableEBMRegressor(**params)


def _coverage_trial(dgp, n, alpha, variant, n_rounds, n_test, n_cal, grid, t, est_kw):
    data = generate(dgp, n, 3 * t)
    twin = generate(dgp, n, 3 * t + 1)
    fresh = generate(dgp, n_test + n_cal, 3 * t + 2)
    est = default_estimator(variant, n_rounds, seed=t, **est_kw).fit(data.X, data.y)
    other = default_estimator(variant, n_rounds, seed=10_000 + t, **est_kw).fit(twin.X, twin.y)
    est.calibrate(fresh.X[n_test:], fresh.y[n_test:])
    X_test, y_test = fresh.X[:n_test], fresh.y[:n_test]
    truth_test = dgp.mean_function(X_test)

    out = {"features": [], "widths": [], "feature_ri": []}
    for k in range(dgp.p):
        ci = est.feature_interval(k, grid, alpha)
        truth = dgp.centered_component(k, grid)
        out["features"].append(ci.contains(truth))
        out["widths"].append(2.0 * ci.half_width)
        ri = other.feature_effect(k, grid)
        out["feature_ri"].append(
            np.abs(ri - ci.center) <= math.sqrt(2.0) * ci.half_width)

    ici = est.intercept_interval(alpha)
    design_mean = float(np.mean(dgp.mean_function(data.X)))
    out["intercept_design"] = bool(ici.contains(design_mean))
    out["intercept_population"] = bool(ici.contains(dgp.population_mean))
    out["intercept_width"] = 2.0 * ici.half_width

    ci = est.confidence_interval(X_test, alpha)
    out["overall_ci"] = ci.contains(truth_test)
    out["overall_ci_width"] = 2.0 * ci.half_width
    pi = est.prediction_interval(X_test, alpha, conformal=False)
    out["pi"] = pi.contains(y_test)
    out["pi_width"] = 2.0 * pi.half_width
    cpi = est.prediction_interval(X_test, alpha, conformal=True)
    out["conformal_pi"] = cpi.contains(y_test)
    out["conformal_pi_width"] = 2.0 * cpi.half_width
    ri = est.reproduction_interval(X_test, alpha)
    out["ri"] = ri.contains(other.predict(X_test))
    out["ri_width"] = 2.0 * ri.half_width
    out["sigma"] = est.sigma_
    return out


def coverage_experiment(dgp=None, n=2000, trials=50, alpha=0.05, variant="parallel",
                        n_rounds=500, n_test=200, n_cal=500, grid_size=50, n_jobs=None,
                        **est_kw) -> list[dict]:
    """Coverage and width of every interval type over repeated fresh datasets.

    Feature CIs are scored on a fixed grid against the population-centered
    component. The intercept CI is scored against the mean of the regression
    function over the training design (``intercept``) and against the
    population mean (``intercept_population``). Overall CIs target the
    regression function at fresh points, prediction intervals fresh responses,
    and reproduction intervals the prediction of a model retrained on an
    independent sample. Conformal intervals use a separate calibration sample.
    """
    if trials < 10:
        raise ValueError("trials must be at least 10")
    dgp = dgp or friedman_like()
    grid = query_grid(grid_size)
    results = _map(lambda t: _coverage_trial(dgp, n, alpha, variant, n_rounds, n_test,
                                              n_cal, grid, t, est_kw), range(trials), n_jobs)
    rows = []

    def row(name, hits, widths, feature=""):
        hits = np.asarray(hits, dtype=float)
        per_trial = hits.reshape(trials, -1).mean(axis=1)
        rate = float(hits.mean())
        rows.append({"experiment": "coverage", "interval": name, "feature": feature, "n": n,
                     "trials": trials, "coverage": rate,
                     "coverage_se": float(per_trial.std(ddof=1) / math.sqrt(trials)),
                     "pointwise_min": float(hits.reshape(trials, -1).mean(axis=0).min()),
                     "mean_width": float(np.mean(widths))})

    for k in range(dgp.p):
        row("feature_ci", [r["features"][k] for r in results],
            [r["widths"][k] for r in results], feature=k)
    for k in range(dgp.p):
        row("feature_ri", [r["feature_ri"][k] for r in results],
            [math.sqrt(2.0) * r["widths"][k] for r in results], feature=k)
    row("intercept_ci", [r["intercept_design"] for r in results],
        [r["intercept_width"] for r in results])
    row("intercept_ci_population", [r["intercept_population"] for r in results],
        [r["intercept_width"] for r in results])
    for name in ("overall_ci", "pi", "conformal_pi", "ri"):
        row(name, [r[name] for r in results], [r[name + "_width"] for r in results])
    rows.append({"experiment": "coverage", "interval": "sigma_hat", "feature": "", "n": n,
                 "trials": trials, "coverage": float("nan"), "coverage_se": float("nan"),
                 "pointwise_min": float("nan"),
                 "mean_width": float(np.mean([r["sigma"] for r in results]))})
    return rows


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])


def _rate_trial(dgp, n, t, n_rounds, n_test, grid, est_kw):
    data = generate(dgp, n, 7919 * t + n)
    est = default_estimator("parallel", n_rounds, seed=t, **est_kw).fit(data.X, data.y)
    U = np.random.default_rng([dgp.seed, 99, t]).random((n_test, dgp.p))
    contrib = est.contributions(U)
    mse = [float(np.mean((contrib[:, k] - dgp.centered_component(k, U[:, k])) ** 2))
           for k in range(dgp.p)]
    rn = [float(np.median(est.r_norm(k, grid))) for k in range(dgp.p)]
    return mse, rn


def rate_experiment(dgp=None, n_grid=(500, 1000, 2000, 4000), trials=10, n_rounds=500,
                    n_test=2000, n_jobs=None, **est_kw) -> list[dict]:
    """Per-feature MSE and median influence norm as functions of ``n``.

    Rows with ``feature == "all"`` carry the log-log slopes of the mean
    per-feature MSE and of the median ``||r||`` across the grid.
    """
    if len(n_grid) < 3:
        raise ValueError("n_grid needs at least 3 sizes")
    dgp = dgp or friedman_like()
    grid = query_grid()
    rows, mse_curve, rn_curve = [], [], []
    for n in n_grid:
        res = _map(lambda t: _rate_trial(dgp, n, t, n_rounds, n_test, grid, est_kw),
                   range(trials), n_jobs)
        mse = np.mean([r[0] for r in res], axis=0)
        rn = np.median([r[1] for r in res], axis=0)
        mse_curve.append(mse.mean())
        rn_curve.append(float(np.median(rn)))
        for k in range(dgp.p):
            rows.append({"experiment": "rate", "feature": k, "n": n, "trials": trials,
                         "mse": float(mse[k]), "r_norm": float(rn[k]), "slope": float("nan")})
    rows.append({"experiment": "mse_rate", "feature": "all", "n": "", "trials": trials,
                 "mse": float("nan"), "r_norm": float("nan"),
                 "slope": loglog_slope(n_grid, mse_curve)})
    rows.append({"experiment": "r_norm_rate", "feature": "all", "n": "", "trials": trials,
                 "mse": float("nan"), "r_norm": float("nan"),
                 "slope": loglog_slope(n_grid, rn_curve)})
    return rows


def additive_boosting_curve(binned, y, bins_test, y_test, rounds, checkpoints,
                            learning_rate=0.5, max_depth=3, min_leaf_samples=None, seed=0):
    """Test RMSE of plain (summed, unaveraged) cyclic boosting on the same trees."""
    n, p = binned.bin_index.shape
    params = TreeParams(max_depth, min_leaf_samples).resolve(n)
    effects = [np.zeros(m) for m in binned.n_bins]
    intercept = float(y.mean())
    fitted = np.full(n, intercept)
    rng = np.random.default_rng(seed)
    out, marks = [], set(checkpoints)
    for b in range(1, rounds + 1):
        k = (b - 1) % p
        mask = rng.random(n) < 0.8
        if not mask.any():
            mask[0] = True
        tree = center_and_truncate(fit_tree(binned, k, y - fitted, mask, params), binned)
        step = learning_rate * tree.bin_values()
        effects[k] = effects[k] + step
        fitted += step[binned.bin_index[:, k]]
        if b in marks:
            pred = intercept + sum(effects[j][np.clip(bins_test[:, j], 0, len(effects[j]) - 1)]
                                   for j in range(p))
            out.append(float(np.sqrt(np.mean((pred - y_test) ** 2))))
    return out


def _flatness(curve):
    """Final over minimum RMSE; a curve that is identically zero counts as flat."""
    low = min(curve)
    return 1.0 if curve[-1] == low else curve[-1] / low


def overfit_experiment(dgp=None, n=500, B_max=5000, every=50, n_test=2000, seed=0,
                       baseline=True, **est_kw) -> list[dict]:
    """Test RMSE along the boosting path, without early stopping.

    ``flatness`` is the final RMSE over the minimum along the path. The
    contrast run sums its trees instead of averaging them.
    """
    if B_max < 100:
        raise ValueError("B_max must be at least 100")
    dgp = dgp or fast_wave()
    data = generate(dgp, n, seed)
    test = generate(dgp, n_test, seed + 1)
    checkpoints = list(range(every, B_max + 1, every))
    curve = []
    est = default_estimator("parallel", B_max, seed=seed, **est_kw)
    binned = bin_features(data.X, est.max_bins)
    bins_test = binned.bins_of(test.X)

    def record(b, model):
        if b % every == 0:
            pred = model.predict_bins(bins_test)
            curve.append(float(np.sqrt(np.mean((pred - test.y) ** 2))))

    est.fit(data.X, data.y, callback=record)
    rows = [{"experiment": "overfit", "method": "boulevard", "rounds": b, "rmse": r}
            for b, r in zip(checkpoints, curve)]
    rows.append({"experiment": "overfit", "method": "boulevard", "rounds": "flatness",
                 "rmse": _flatness(curve)})
    if baseline:
        base = additive_boosting_curve(binned, data.y, bins_test, test.y, B_max, checkpoints,
                                       max_depth=est.max_depth, seed=seed)
        rows += [{"experiment": "overfit", "method": "additive", "rounds": b, "rmse": r}
                 for b, r in zip(checkpoints, base)]
        rows.append({"experiment": "overfit", "method": "additive", "rounds": "flatness",
                     "rmse": _flatness(base)})
    return rows


def query_time_experiment(sizes=(1_000, 100_000), max_bins=64, n_queries=2000, n_rounds=20,
                          repeats=5, seed=0) -> list[dict]:
    """Wall time of influence-norm queries for models trained on different ``n``.

    Every size uses the same bin budget, so the cached systems have equal
    dimension; per-query time is the best of ``repeats`` batches.
    """
    dgp = friedman_like()
    rows = []
    xq = np.random.default_rng(seed).random(n_queries)
    for n in sizes:
        data = generate(dgp, n, seed)
        est = default_estimator("parallel", n_rounds, seed=seed, max_bins=max_bins)
        est.fit(data.X, data.y)
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            for x in xq[:200]:
                est.r_norm(0, float(x))
            best = min(best, (time.perf_counter() - t0) / 200)
        rows.append({"experiment": "query_time", "n": n,
                     "bins": int(est.cache_.n_bins.sum()), "seconds_per_query": best})
    return rows


def format_table(rows: list[dict]) -> str:
    """Aligned plain-text table with the union of the record keys as columns."""
    if not rows:
        return ""
    cols = list(dict.fromkeys(k for r in rows for k in r))

    def cell(v):
        if isinstance(v, float):
            return "nan" if math.isnan(v) else f"{v:.6g}"
        return "" if v is None else str(v)

    body = [[cell(r.get(c)) for c in cols] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines)


def to_json_lines(rows: list[dict]) -> str:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return None
        if isinstance(v, np.generic):
            return v.item()
        return v
    return "\n".join(json.dumps({k: clean(v) for k, v in r.items()}) for r in rows)
