"""Randomized equivalence checks between the bin-space code and dense oracles."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import oracle
from .boost import BoostConfig, train
from .data import bin_features
from .inference import build_cache, r_norm_bins
from .trees import TreeParams, bin_structure, fit_tree


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_deviation: float
    tolerance: float
    instances: int
    seconds: float

    def record(self) -> dict:
        return {"check": self.name, "status": "pass" if self.passed else "FAIL",
                "max_deviation": self.max_deviation, "tolerance": self.tolerance,
                "instances": self.instances, "seconds": round(self.seconds, 3)}


def _random_problem(rng, n_max, p_max, bins_max):
    n = int(rng.integers(max(8, n_max // 4), n_max + 1))
    p = int(rng.integers(1, p_max + 1))
    X = rng.random((n, p))
    if rng.random() < 0.3:
        X = np.round(X * rng.integers(3, 12), 1)
    y = np.sin(3 * X[:, 0]) + rng.standard_normal(n)
    return bin_features(X, int(rng.integers(2, bins_max + 1))), y


def check_decomposition(instances=100, n_max=200, bins_max=16, seed=0, tol=1e-10):
    """``(Z D) B (Z D)^T`` against the leaf co-membership matrix of random trees."""
    rng = np.random.default_rng(seed)
    t0, worst = time.perf_counter(), 0.0
    for _ in range(instances):
        binned, y = _random_problem(rng, n_max, 1, bins_max)
        mask = rng.random(binned.n) < rng.uniform(0.5, 1.0)
        mask[rng.integers(binned.n)] = True
        tree = fit_tree(binned, 0, y, mask,
                        TreeParams(int(rng.integers(1, 5)), int(rng.integers(1, 6))))
        bs = bin_structure(tree)
        ZD = oracle.assignment_matrix(binned, 0) * bs.xi[None, :]
        worst = max(worst, float(np.abs(ZD @ bs.B @ ZD.T
                                        - oracle.dense_structure_matrix(tree, binned)).max()))
    return CheckResult("decomposition", worst <= tol, worst, tol, instances,
                       time.perf_counter() - t0)


def _trained(rng, n_max, p_max, bins_max, variant):
    binned, y = _random_problem(rng, n_max, p_max, bins_max)
    cfg = BoostConfig(variant=variant, n_rounds=int(rng.integers(20, 60)),
                      learning_rate=float(rng.choice([0.5, 1.0])),
                      max_depth=int(rng.integers(1, 4)), seed=int(rng.integers(1 << 30)))
    model, acc = train(binned, y, cfg)
    return binned, y, model, acc


def check_woodbury(instances=50, n_max=200, p_max=3, bins_max=16, seed=1, tol=1e-8,
                   corrupt=False):
    """Bin-space influence norms against dense sample-space solves.

    ``corrupt=True`` perturbs the cached kernel before querying, which must
    make the check fail.
    """
    rng = np.random.default_rng(seed)
    t0, worst = time.perf_counter(), 0.0
    variants = ("parallel", "loo", "cyclic")
    for i in range(instances):
        binned, y, model, acc = _trained(rng, n_max, p_max, bins_max, variants[i % 3])
        cache = build_cache(acc, binned, 1.0, model)
        blocks = cache.blocks
        if corrupt:
            noisy = [b + 0.05 * np.abs(b).max() * rng.random(b.shape) for b in blocks]
            cache = replace(cache, blocks=[0.5 * (b + b.T) for b in noisy], _solver=None)
        Ks = [oracle.kernel_from_block(blocks[k], oracle.assignment_matrix(binned, k))
              for k in range(binned.p)]
        for k in range(binned.p):
            Z = oracle.assignment_matrix(binned, k)
            bins = np.arange(binned.n_bins[k])
            fast = r_norm_bins(cache, k, bins)
            for r in bins:
                _, ref = oracle.dense_r_vector(model.variant, Ks, k, Z @ blocks[k][r],
                                               lam=cache.step)
                worst = max(worst, abs(float(fast[r]) - ref))
    return CheckResult("woodbury", worst <= tol, worst, tol, instances,
                       time.perf_counter() - t0)


def check_fixed_point(instances=20, n_max=120, p_max=3, seed=2, tol=1e-8):
    """Closed-form limits satisfy the stationarity equations of their loops.

    Parallel: ``f_k = lam J K_k (y - ybar - sum_a f_a)``.
    Leave-one-out: ``f_k = J K_k (y - ybar - sum_{a != k} f_a)`` on the range
    where ``I - K_k`` is invertible.
    """
    rng = np.random.default_rng(seed)
    t0, worst = time.perf_counter(), 0.0
    for _ in range(instances):
        binned, y, model, acc = _trained(rng, n_max, p_max, 12, "parallel")
        blocks = acc.blocks()
        Ks = [oracle.kernel_from_block(blocks[k], oracle.assignment_matrix(binned, k))
              for k in range(binned.p)]
        J = oracle.centering(binned.n)
        lam = float(rng.choice([0.5, 1.0]))
        fa = oracle.fixed_point_A(Ks, y, lam)
        resid = y - y.mean() - fa.per_feature.sum(axis=0)
        for k, K in enumerate(Ks):
            worst = max(worst, float(np.abs(fa.per_feature[k] - lam * J @ K @ resid).max()))
        fb = oracle.fixed_point_B(Ks, y)
        total = fb.per_feature.sum(axis=0)
        for k, K in enumerate(Ks):
            partial = y - y.mean() - (total - fb.per_feature[k])
            gap = fb.per_feature[k] - J @ K @ partial
            # components along eigenvalue-1 directions of K_k are dropped by the pseudo-inverse
            gap = oracle.sym_pinv(np.eye(binned.n) - K) @ (np.eye(binned.n) - K) @ gap
            worst = max(worst, float(np.abs(gap).max()))
    return CheckResult("fixed_point", worst <= tol, worst, tol, instances,
                       time.perf_counter() - t0)


def run_all(n=200, seed=0, corrupt=False, scale=1.0) -> list[CheckResult]:
    """The three oracle checks, with instance counts multiplied by ``scale``."""
    count = lambda base: max(3, int(round(base * scale)))
    return [
        check_decomposition(count(100), n_max=n, seed=seed),
        check_woodbury(count(50), n_max=n, seed=seed + 1, corrupt=corrupt),
        check_fixed_point(count(20), n_max=min(n, 120), seed=seed + 2),
    ]
