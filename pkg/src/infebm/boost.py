"""Boulevard-regularized additive boosting (parallel, leave-one-out, random cyclic)."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .trees import (TreeParams, add_kernel, center_and_truncate, fit_tree, refit_tree)

VARIANTS = ("parallel", "loo", "cyclic")


@dataclass(frozen=True)
class BoostConfig:
    """Training hyperparameters.

    ``truncation=None`` means four standard deviations of ``y``;
    ``burn_in=None`` means ``n_rounds // 5`` (or ``freeze_after`` when structure
    freezing is on). With ``freeze_after`` set, every round after it reuses a
    structure drawn uniformly from the last ``pool_size`` structures grown up
    to that round and only refits the leaf values.
    """

    variant: str = "parallel"
    learning_rate: float = 1.0
    n_rounds: int = 1000
    subsample: float = 0.8
    truncation: float | None = None
    max_depth: int = 3
    min_leaf_samples: int | None = None
    burn_in: int | None = None
    freeze_after: int | None = None
    pool_size: int = 50
    honest: bool = False
    seed: int = 0
    n_jobs: int | None = None

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must lie in (0, 1]")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.truncation is not None and not self.truncation > 0:
            raise ValueError("truncation must be positive")
        return self

    @property
    def step(self) -> float:
        """Weight numerator of the running average (the loo variant ignores lambda)."""
        return 1.0 if self.variant == "loo" else self.learning_rate

    @property
    def rescale(self) -> float:
        """Output factor ``1/c_E``."""
        if self.variant == "loo":
            return 1.0
        return (1.0 + self.learning_rate) / self.learning_rate

    def resolved_burn_in(self) -> int:
        if self.burn_in is not None:
            return self.burn_in
        if self.freeze_after is not None:
            return self.freeze_after
        return self.n_rounds // 5


def boulevard_update(prev, tree_values, b: int, learning_rate: float):
    """``(b-1)/b * prev + (lr/b) * tree_values``."""
    if b < 1:
        raise ValueError("round index starts at 1")
    return (b - 1) / b * np.asarray(prev, dtype=float) + learning_rate / b * np.asarray(tree_values)


@dataclass
class KernelAccumulator:
    """Running sums of ``D B D`` per feature over the rounds after burn-in."""

    sums: list
    counts: np.ndarray

    @classmethod
    def empty(cls, n_bins):
        return cls([np.zeros((m, m)) for m in n_bins], np.zeros(len(n_bins), dtype=np.int64))

    @property
    def rounds_counted(self) -> int:
        return int(self.counts.max(initial=0))

    def add(self, tree):
        add_kernel(self.sums[tree.feature], tree)
        self.counts[tree.feature] += 1

    def mean(self, k: int) -> np.ndarray:
        if self.counts[k] == 0:
            raise ValueError(f"no post-burn-in trees were recorded for feature {k}")
        return self.sums[k] / self.counts[k]

    def blocks(self) -> list:
        """Per-feature expected kernels ``E[D B D]``.

        A feature that received no counted tree (possible for the random
        cyclic loop) gets a zero block: its effect is identically zero.
        """
        return [self.mean(k) if self.counts[k] else np.zeros_like(self.sums[k])
                for k in range(len(self.sums))]

    def aligned_sum(self) -> np.ndarray:
        """All per-feature kernels summed on a shared zero-padded bin grid."""
        m = max(s.shape[0] for s in self.sums)
        blocks = self.blocks()
        H = np.zeros((m, m))
        for k in range(len(self.sums)):
            mk = self.sums[k].shape[0]
            H[:mk, :mk] += blocks[k]
        return H


@dataclass
class TrainingTrace:
    """Per-sample bookkeeping that is not part of the fitted model."""

    oob_sum: np.ndarray
    oob_count: np.ndarray
    pools: list
    n_trees: np.ndarray


@dataclass
class EnsembleModel:
    """Boulevard-averaged per-bin effects plus intercept.

    ``effects[k][r]`` is the (unrescaled) running average for bin ``r`` of
    feature ``k``; predictions multiply their sum by ``rescale``.
    """

    variant: str
    learning_rate: float
    n_rounds: int
    effects: list
    intercept: float
    rescale: float
    burn_in: int
    seed: int
    mean_leaves: np.ndarray
    config: BoostConfig = field(default_factory=BoostConfig)
    trace: TrainingTrace | None = field(default=None, repr=False, compare=False)

    @property
    def p(self) -> int:
        return len(self.effects)

    def contributions(self, bins) -> np.ndarray:
        """Rescaled per-feature effects for a matrix of bin indices, shape (n, p)."""
        bins = np.atleast_2d(bins)
        out = np.empty(bins.shape, dtype=float)
        for k, eff in enumerate(self.effects):
            out[:, k] = eff[np.clip(bins[:, k], 0, len(eff) - 1)]
        return self.rescale * out

    def predict_bins(self, bins) -> np.ndarray:
        return self.intercept + self.contributions(bins).sum(axis=1)

    def feature_effect_bin(self, k: int, bin_index) -> float | np.ndarray:
        eff = self.effects[k]
        return self.rescale * eff[np.clip(bin_index, 0, len(eff) - 1)]


def predict(model: EnsembleModel, binned, x) -> float:
    """Prediction at one raw point ``x`` (length p)."""
    return float(model.predict_bins(binned.bins_of(np.atleast_2d(x)))[0])


def feature_effect(model: EnsembleModel, binned, k: int, x_k) -> float | np.ndarray:
    bins = np.searchsorted(binned.edges[k], np.asarray(x_k, dtype=float), side="right")
    return model.feature_effect_bin(k, bins)


def _threads(cfg):
    if cfg.n_jobs is not None:
        return max(1, int(cfg.n_jobs))
    return max(1, int(os.environ.get("INFEBM_THREADS", "1")))


def _draw_subsample(rng, n, rate):
    if rate >= 1.0:
        return np.ones(n, dtype=bool)
    mask = rng.random(n) < rate
    if not mask.any():
        mask[rng.integers(n)] = True
    return mask


def train(binned, y, cfg: BoostConfig = BoostConfig(), callback=None):
    """Run one of the three Boulevard training loops.

    Returns ``(EnsembleModel, KernelAccumulator)``. ``callback(b, model)`` is
    invoked after every round with a live (mutable) model view.

    The intercept starts at the mean of ``y`` and takes the Boulevard average
    of the round's mean tree offsets, ``beta_b = beta_{b-1} + mean_k(mu_bk) / b``.
    """
    cfg.validate()
    y = np.asarray(y, dtype=float)
    n, p = binned.bin_index.shape
    if y.shape != (n,):
        raise ValueError("y does not match the binned data")
    params = TreeParams(cfg.max_depth, cfg.min_leaf_samples).resolve(n)
    sd = float(np.std(y, ddof=1)) if n > 1 else 0.0
    M = cfg.truncation if cfg.truncation is not None else (4.0 * sd if sd > 0 else math.inf)
    burn_in = cfg.resolved_burn_in()
    freeze = cfg.freeze_after
    pool_lo = -1 if freeze is None else freeze - cfg.pool_size

    bins = binned.bin_index
    n_bins = binned.n_bins
    effects = [np.zeros(m) for m in n_bins]
    contrib = np.zeros((n, p))
    acc = KernelAccumulator.empty(n_bins)
    trace = TrainingTrace(np.zeros((n, p)), np.zeros((n, p), dtype=np.int64),
                          [[] for _ in range(p)], np.zeros(p, dtype=np.int64))
    leaf_sum = np.zeros(p)
    leaf_n = np.zeros(p)
    model = EnsembleModel(cfg.variant, cfg.learning_rate, 0, effects, float(y.mean()),
                          cfg.rescale, burn_in, cfg.seed, np.ones(p), cfg, trace)
    workers = _threads(cfg)
    executor = ThreadPoolExecutor(workers) if workers > 1 and p > 1 else None

    def grow(b, k, base):
        rng = np.random.default_rng([cfg.seed, b, k])
        r = base + contrib[:, k] if cfg.variant == "loo" else base
        mask = _draw_subsample(rng, n, cfg.subsample)
        pool = trace.pools[k]
        if freeze is not None and b > freeze and pool:
            tree = refit_tree(pool[rng.integers(len(pool))], binned, r, mask)
        elif cfg.honest:
            grow_half = mask & (rng.random(n) < 0.5)
            value_half = mask & ~grow_half
            if not grow_half.any() or not value_half.any():
                grow_half = value_half = mask
            tree = refit_tree(fit_tree(binned, k, r, grow_half, params), binned, r, value_half)
        else:
            tree = fit_tree(binned, k, r, mask, params)
        return center_and_truncate(tree, binned, M), mask

    try:
        for b in range(1, cfg.n_rounds + 1):
            if cfg.variant == "cyclic":
                features = [int(np.random.default_rng([cfg.seed, b, p]).integers(p))]
            else:
                features = list(range(p))
            base = y - model.intercept - contrib.sum(axis=1)
            if not np.all(np.isfinite(base)):
                raise FloatingPointError(f"non-finite residual at round {b}")
            if executor is not None:
                fitted = list(executor.map(lambda k: grow(b, k, base), features))
            else:
                fitted = [grow(b, k, base) for k in features]

            mu_total = 0.0
            for k, (tree, mask) in zip(features, fitted):
                values = tree.bin_values()
                effects[k] = boulevard_update(effects[k], values, b, cfg.step)
                contrib[:, k] = effects[k][bins[:, k]]
                mu_total += tree.mu
                if b > burn_in:
                    acc.add(tree)
                    leaf_sum[k] += tree.n_leaves
                    leaf_n[k] += 1
                if pool_lo < b <= (freeze if freeze is not None else -1):
                    trace.pools[k].append(tree)
                out = ~mask
                trace.oob_sum[out, k] += values[bins[out, k]]
                trace.oob_count[out, k] += 1
                trace.n_trees[k] += 1
            model.intercept += mu_total / (len(features) * b)
            model.n_rounds = b
            if callback is not None:
                callback(b, model)
    finally:
        if executor is not None:
            executor.shutdown()

    model.mean_leaves = np.where(leaf_n > 0, leaf_sum / np.maximum(leaf_n, 1), 1.0)
    model.effects = [e.copy() for e in effects]
    return model, acc


def strip_trace(model: EnsembleModel) -> EnsembleModel:
    return replace(model, trace=None)
