"""Bin-space inference cache and interval constructions.

The cache keeps only bin-level summaries of the training data: per-feature
expected kernels ``H_k = E[D B D]``, bin counts, and the cross-tabulated bin
counts between every pair of features. The influence vector of feature ``k``
at a query lies in the span of the stacked assignment matrices, so its norm
comes out of one factorized system of size ``sum_k m_k`` and never touches an
``n``-sized object.

``method="aligned"`` instead follows the single shared-grid matrix
``H = sum_k H_k`` with per-feature systems
``M_k = (lam H)^{-1} + diag(c_k) - c_k c_k^T / n``; it is exact for one
feature and an approximation otherwise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg
from scipy.special import ndtri
from scipy.stats import norm

H_RIDGE = 1e-10
NEG_CLAMP = -1e-12
KINDS = ("feature_ci", "intercept_ci", "overall_ci", "pi", "ri")


def z_quantile(alpha: float) -> float:
    """Two-sided standard normal critical value ``z_{1 - alpha/2}``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return float(ndtri(1.0 - alpha / 2.0))


def cross_counts(bin_index, n_bins) -> np.ndarray:
    """Stacked ``Z^T Z`` over all features: block (a, b) counts samples per bin pair."""
    offsets = np.concatenate([[0], np.cumsum(n_bins)])
    N = np.zeros((offsets[-1], offsets[-1]))
    p = bin_index.shape[1]
    for a in range(p):
        for b in range(a, p):
            flat = bin_index[:, a] * n_bins[b] + bin_index[:, b]
            block = np.bincount(flat, minlength=n_bins[a] * n_bins[b]).reshape(n_bins[a], n_bins[b])
            N[offsets[a]:offsets[a + 1], offsets[b]:offsets[b + 1]] = block
            N[offsets[b]:offsets[b + 1], offsets[a]:offsets[a + 1]] = block.T
    return N


@dataclass
class InferenceCache:
    """Everything needed to answer interval queries after training.

    ``rescale`` is ``1/c_E`` and ``step`` the running-average weight (``lam``
    for the parallel and cyclic loops, 1 for leave-one-out).
    """

    variant: str
    method: str
    n: int
    step: float
    rescale: float
    sigma: float
    edges: list
    counts: list
    blocks: list
    cross: np.ndarray
    calibration_scores: np.ndarray | None = None
    _solver: object = field(default=None, repr=False, compare=False)

    @property
    def p(self) -> int:
        return len(self.blocks)

    @property
    def n_bins(self) -> np.ndarray:
        return np.array([len(c) for c in self.counts])

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.n_bins)])

    @property
    def H(self) -> np.ndarray:
        """Shared-grid sum of the per-feature kernels (zero-padded)."""
        m = int(self.n_bins.max())
        H = np.zeros((m, m))
        for Hk in self.blocks:
            H[:Hk.shape[0], :Hk.shape[0]] += Hk
        return H

    def aligned_systems(self) -> list:
        """Per-feature ``M_k`` of the shared-grid method."""
        H = self.H
        m = H.shape[0]
        Hinv = np.linalg.inv(self.step * (H + H_RIDGE * np.eye(m)))
        out = []
        for c in self.counts:
            cp = np.zeros(m)
            cp[:len(c)] = c
            out.append(Hinv + np.diag(cp) - np.outer(cp, cp) / self.n)
        return out

    def bins_of(self, k: int, x_k) -> np.ndarray:
        return np.searchsorted(self.edges[k], np.asarray(x_k, dtype=float), side="right")

    @property
    def solver(self):
        if self._solver is None:
            self._solver = _build_solver(self)
        return self._solver

    def with_sigma(self, sigma: float) -> "InferenceCache":
        return replace(self, sigma=float(sigma))


def _sym_pinv(A, tol=1e-10):
    w, V = np.linalg.eigh(0.5 * (A + A.T))
    inv = np.where(np.abs(w) > tol, 1.0 / np.where(w == 0, 1.0, w), 0.0)
    return (V * inv) @ V.T


class _JointSolver:
    def __init__(self, cache: InferenceCache):
        self.cache = cache
        off = cache.offsets
        n = cache.n
        N = cache.cross
        total = off[-1]
        self.pre = None
        if cache.variant == "loo":
            # Work in U = Z C^{-1/2} coordinates, where the feature kernel is the
            # symmetric Q = C^{1/2} H C^{1/2} and pseudo-inverses match sample space.
            self.pre = []
            G = np.zeros((total, total))
            for k, (Hk, c) in enumerate(zip(cache.blocks, cache.counts)):
                root = np.sqrt(c)
                Q = root[:, None] * Hk * root[None, :]
                v = root / math.sqrt(n)
                P = _sym_pinv(np.eye(len(c)) - Q)
                Pc = P - np.outer(v, v @ P)
                self.pre.append((root, Pc))
                Qc = Q - np.outer(v, v @ Q)
                G[off[k]:off[k + 1], off[k]:off[k + 1]] = (P @ Qc) / root[:, None] / root[None, :]
            system = np.eye(total) + G @ N
            self.scale = 1.0
        else:
            centered = [Hk - 1.0 / n for Hk in cache.blocks]
            Hb = linalg.block_diag(*centered)
            system = np.eye(total) + cache.step * Hb @ N
            self.scale = cache.step
        self.lu = linalg.lu_factor(system)
        self.N = N

    def rhs(self, k, bins):
        """Stacked right-hand sides for queries on feature ``k`` (one column each)."""
        c = self.cache
        Hk = c.blocks[k]
        bins = np.clip(np.atleast_1d(bins), 0, Hk.shape[0] - 1)
        h = Hk[bins].T
        if self.pre is not None:
            root, Pc = self.pre[k]
            hbar = (Pc @ (root[:, None] * h)) / root[:, None]
        else:
            hbar = h - (c.counts[k] @ h)[None, :] / c.n
        out = np.zeros((c.offsets[-1], len(bins)))
        out[c.offsets[k]:c.offsets[k + 1]] = hbar
        return out

    def sq_norm(self, rhs):
        v = linalg.lu_solve(self.lu, rhs)
        return self.scale ** 2 * np.einsum("ij,ij->j", v, self.N @ v)


class _AlignedSolver:
    def __init__(self, cache: InferenceCache):
        if cache.variant == "loo":
            raise ValueError("the aligned method only covers the parallel/cyclic limit")
        self.cache = cache
        self.m = int(cache.n_bins.max())
        self.systems = cache.aligned_systems()
        self.factors = [linalg.lu_factor(M) for M in self.systems]

    def rhs(self, k, bins):
        c = self.cache
        Hk = c.blocks[k]
        bins = np.clip(np.atleast_1d(bins), 0, Hk.shape[0] - 1)
        h = np.zeros((self.m, len(bins)))
        h[:Hk.shape[0]] = Hk[bins].T
        return k, h

    def sq_norm(self, rhs):
        k, h = rhs
        c = np.zeros(self.m)
        c[:len(self.cache.counts[k])] = self.cache.counts[k]
        n = self.cache.n
        z = c[:, None] * h - np.outer(c, c @ h) / n
        w = linalg.lu_solve(self.factors[k], z)
        q = h - w
        return self.cache.step ** 2 * (np.einsum("i,ij->j", c, q * q) - (c @ q) ** 2 / n)


def _build_solver(cache):
    if cache.method == "joint":
        return _JointSolver(cache)
    if cache.method == "aligned":
        return _AlignedSolver(cache)
    raise ValueError(f"unknown method {cache.method!r}")


def build_cache(acc, binned, sigma: float, model, method: str = "joint") -> InferenceCache:
    """Assemble and factorize the bin-space system for a trained model."""
    blocks = acc.blocks()
    cache = InferenceCache(
        variant=model.variant, method=method, n=binned.n, step=model.config.step,
        rescale=model.rescale, sigma=float(sigma), edges=[e.copy() for e in binned.edges],
        counts=[c.astype(float) for c in binned.counts], blocks=blocks,
        cross=cross_counts(binned.bin_index, binned.n_bins))
    _ = cache.solver
    return cache


def _clamped_sqrt(sq):
    sq = np.asarray(sq, dtype=float)
    if np.any(sq < NEG_CLAMP):
        warnings.warn(f"negative squared influence norm {sq.min():.3g} clamped to 0",
                      RuntimeWarning, stacklevel=3)
    return np.sqrt(np.maximum(sq, 0.0))


def r_norm_bins(cache: InferenceCache, k: int, bins) -> np.ndarray:
    """Influence norms ``||r_k||`` for a vector of feature-k bin indices."""
    s = cache.solver
    return _clamped_sqrt(s.sq_norm(s.rhs(k, bins)))


def r_norm(cache: InferenceCache, k: int, x_k) -> float | np.ndarray:
    out = r_norm_bins(cache, k, cache.bins_of(k, x_k))
    return float(out[0]) if np.ndim(x_k) == 0 else out


def overall_sq_norm(cache: InferenceCache, X, mode: str = "orthogonal_sum") -> np.ndarray:
    """Aggregate squared influence norm of the full prediction at rows of ``X``.

    ``orthogonal_sum`` adds the per-feature squared norms, ``conservative``
    squares their sum, and ``exact`` evaluates ``||sum_k r_k||^2`` (joint method).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    norms = np.column_stack([r_norm(cache, k, X[:, k]) if X.shape[0] > 1
                             else np.atleast_1d(r_norm(cache, k, X[:, k]))
                             for k in range(cache.p)])
    if mode == "orthogonal_sum":
        return (norms ** 2).sum(axis=1)
    if mode == "conservative":
        return norms.sum(axis=1) ** 2
    if mode == "exact":
        s = cache.solver
        if not isinstance(s, _JointSolver):
            raise ValueError("exact aggregation needs the joint method")
        rhs = sum(s.rhs(k, cache.bins_of(k, X[:, k])) for k in range(cache.p))
        return _clamped_sqrt(s.sq_norm(rhs)) ** 2
    raise ValueError(f"unknown mode {mode!r}")


def estimate_sigma(model, binned, y, mode: str = "in_sample") -> float:
    """Noise scale from training residuals.

    ``in_sample`` divides the residual sum of squares by ``n - df`` with
    ``df = 1 + sum_k`` (mean leaf count of feature-k trees). ``oob`` scores each
    sample with the average of the trees whose subsample left it out.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if mode == "in_sample":
        df = 1.0 + float(np.sum(model.mean_leaves))
        if n <= df:
            raise ValueError(f"n = {n} does not exceed the degrees of freedom {df:.1f}")
        resid = y - model.predict_bins(binned.bin_index)
        return float(np.sqrt(resid @ resid / (n - df)))
    if mode == "oob":
        trace = model.trace
        if trace is None:
            raise ValueError("out-of-bag estimation needs the training trace")
        if np.all(trace.oob_count == 0):
            raise ValueError("no out-of-bag samples were recorded (subsample = 1?)")
        cnt = np.maximum(trace.oob_count, 1)
        mean_tree = np.where(trace.oob_count > 0, trace.oob_sum / cnt,
                             model.contributions(binned.bin_index) / model.rescale
                             / model.config.step)
        share = trace.n_trees / max(model.n_rounds, 1)
        oob_effects = model.config.step * mean_tree * share[None, :]
        pred = model.intercept + model.rescale * oob_effects.sum(axis=1)
        resid = y - pred
        return float(np.sqrt(resid @ resid / n))
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class IntervalResult:
    """Symmetric interval(s) ``center +/- half_width`` (scalars or arrays)."""

    kind: str
    center: object
    half_width: object
    r_norm: object
    alpha: float
    x: object = None
    k: int | None = None

    @property
    def lower(self):
        return self.center - self.half_width

    @property
    def upper(self):
        return self.center + self.half_width

    def contains(self, value):
        return (self.lower <= value) & (value <= self.upper)

    def records(self) -> list[dict]:
        """One flat record per query point."""
        center = np.atleast_1d(self.center)
        half = np.broadcast_to(np.atleast_1d(self.half_width), center.shape)
        rn = np.broadcast_to(np.atleast_1d(self.r_norm), center.shape)
        xs = None if self.x is None else np.atleast_1d(np.asarray(self.x, dtype=object)) \
            if np.ndim(self.x) <= 1 else list(self.x)
        out = []
        for i in range(center.shape[0]):
            x = None if xs is None else xs[i]
            if isinstance(x, np.ndarray):
                x = x.tolist()
            elif x is not None:
                x = float(x)
            out.append({"x": x, "k": self.k, "kind": self.kind, "center": float(center[i]),
                        "lower": float(center[i] - half[i]), "upper": float(center[i] + half[i]),
                        "r_norm": float(rn[i]), "alpha": self.alpha})
        return out


def _squeeze(a, scalar):
    a = np.asarray(a, dtype=float)
    return float(a.reshape(-1)[0]) if scalar else a


def feature_ci(model, cache, k: int, x_k, alpha: float = 0.05) -> IntervalResult:
    """``c^-1 f_k(x) +/- z * c^-1 * sigma * ||r_k(x)||``."""
    scalar = np.ndim(x_k) == 0
    bins = cache.bins_of(k, np.atleast_1d(x_k))
    rn = r_norm_bins(cache, k, bins)
    center = model.feature_effect_bin(k, bins)
    half = z_quantile(alpha) * cache.rescale * cache.sigma * rn
    return IntervalResult("feature_ci", _squeeze(center, scalar), _squeeze(half, scalar),
                          _squeeze(rn, scalar), alpha, x=x_k, k=k)


def intercept_ci(model, cache, alpha: float = 0.05) -> IntervalResult:
    """``beta +/- z * sigma / sqrt(n)``."""
    half = z_quantile(alpha) * cache.sigma / math.sqrt(cache.n)
    return IntervalResult("intercept_ci", float(model.intercept), half,
                          1.0 / math.sqrt(cache.n), alpha)


def _bins_matrix(cache, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return X, np.column_stack([cache.bins_of(k, X[:, k]) for k in range(cache.p)])


def overall_ci(model, cache, X, alpha: float = 0.05, mode: str = "orthogonal_sum") -> IntervalResult:
    """``yhat(x) +/- z * c^-1 * sigma * sqrt(1/n + R(x)^2)`` with ``R^2`` per ``mode``."""
    scalar = np.ndim(X) == 1
    X, bins = _bins_matrix(cache, X)
    sq = overall_sq_norm(cache, X, mode)
    center = model.predict_bins(bins)
    half = z_quantile(alpha) * cache.rescale * cache.sigma * np.sqrt(1.0 / cache.n + sq)
    return IntervalResult("overall_ci", _squeeze(center, scalar), _squeeze(half, scalar),
                          _squeeze(np.sqrt(sq), scalar), alpha, x=X[0] if scalar else X)


def conformal_factor(cache, alpha: float) -> float:
    """Split-conformal width multiplier from the stored calibration scores."""
    scores = cache.calibration_scores
    if scores is None or len(scores) == 0:
        raise ValueError("conformal intervals need a calibration split")
    s = np.sort(np.asarray(scores, dtype=float))
    rank = math.ceil((len(s) + 1) * (1.0 - alpha))
    if rank > len(s):
        return math.inf
    return float(s[rank - 1]) / z_quantile(alpha)


def pi_scale(cache, sq) -> np.ndarray:
    """Predictive standard deviation: noise plus rescaled estimation variance."""
    return cache.sigma * np.sqrt(1.0 + cache.rescale ** 2 * np.asarray(sq))


def prediction_interval(model, cache, X, alpha: float = 0.05, conformal: bool = False,
                        mode: str = "orthogonal_sum") -> IntervalResult:
    """``yhat(x) +/- z * sigma * sqrt(1 + c^-2 R(x)^2)``, optionally conformally rescaled."""
    scalar = np.ndim(X) == 1
    X, bins = _bins_matrix(cache, X)
    sq = overall_sq_norm(cache, X, mode)
    half = z_quantile(alpha) * pi_scale(cache, sq)
    if conformal:
        half = half * conformal_factor(cache, alpha)
    center = model.predict_bins(bins)
    return IntervalResult("pi", _squeeze(center, scalar), _squeeze(half, scalar),
                          _squeeze(np.sqrt(sq), scalar), alpha, x=X[0] if scalar else X)


def calibration_scores(model, cache, X_cal, y_cal, mode: str = "orthogonal_sum") -> np.ndarray:
    """Absolute calibration residuals in units of the predictive standard deviation."""
    X_cal, bins = _bins_matrix(cache, X_cal)
    resid = np.abs(np.asarray(y_cal, dtype=float) - model.predict_bins(bins))
    scale = pi_scale(cache, overall_sq_norm(cache, X_cal, mode))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(scale > 0, resid / scale, np.where(resid > 0, np.inf, 1.0))


def reproduction_interval(base: IntervalResult) -> IntervalResult:
    """Widen a confidence interval by sqrt(2) to cover an independent refit."""
    if base.kind == "ri":
        raise ValueError("interval is already a reproduction interval")
    if base.kind == "pi":
        raise ValueError("reproduction intervals are built from confidence intervals")
    return replace(base, kind="ri", half_width=base.half_width * math.sqrt(2.0))


@dataclass
class SignificanceResult:
    z: float
    p_value: float
    defined: bool = True


def feature_significance(model, cache, k: int, x_k) -> SignificanceResult:
    """Two-sided normal test that the rescaled feature-k effect at ``x_k`` is zero."""
    bins = cache.bins_of(k, np.atleast_1d(x_k))
    rn = float(r_norm_bins(cache, k, bins)[0])
    effect = float(model.feature_effect_bin(k, bins)[0])
    denom = cache.rescale * cache.sigma * rn
    if not denom > 0:
        return SignificanceResult(math.nan, math.nan, defined=False)
    z = effect / denom
    return SignificanceResult(z, float(2.0 * norm.sf(abs(z))))
