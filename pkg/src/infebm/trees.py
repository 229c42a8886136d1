"""Univariate histogram regression trees over one feature's bins.

A tree partitions the bin range ``[0, m)`` into contiguous leaves. Splits are
chosen greedily from per-bin (count, sum) statistics of the residuals on the
round's subsample; the structure is kept as an explicit node list so that leaf
values can be refit on a frozen structure later on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 3
    min_leaf_samples: int | None = None

    def resolve(self, n: int) -> "TreeParams":
        if self.min_leaf_samples is not None:
            return self
        return replace(self, min_leaf_samples=default_min_leaf(n))


def default_min_leaf(n: int) -> int:
    """``max(2, ceil(n^(2/3)) / 4)`` rounded up."""
    return max(2, math.ceil(math.ceil(n ** (2.0 / 3.0)) / 4.0))


@dataclass(frozen=True)
class HistogramTree:
    """A fitted tree on feature ``feature``.

    ``nodes`` holds ``(lo, hi, left, right)`` rows in depth-first order, with
    ``left == right == -1`` marking a leaf; ``leaves`` lists the node ids of the
    leaves from left to right. ``leaf_value`` is in response units and ``mu``
    is the training mean removed by :func:`center_and_truncate` (0 before).
    """

    feature: int
    nodes: np.ndarray
    leaves: np.ndarray
    leaf_of_bin: np.ndarray
    leaf_value: np.ndarray
    leaf_bin_count: np.ndarray
    leaf_sample_count: np.ndarray
    mu: float = 0.0

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    @property
    def n_bins(self) -> int:
        return len(self.leaf_of_bin)

    def bin_values(self) -> np.ndarray:
        """Leaf value of every bin."""
        return self.leaf_value[self.leaf_of_bin]

    def leaf_bounds(self) -> np.ndarray:
        """``(lo, hi)`` bin range of each leaf, left to right."""
        return self.nodes[self.leaves, :2]

    def structure_key(self) -> bytes:
        return self.leaf_of_bin.tobytes()


def _best_split(cnt, tot, full, lo, hi, min_leaf):
    """Best SSE-reducing boundary ``s`` with left = [lo, s), right = [s, hi)."""
    if hi - lo < 2:
        return None
    c = np.cumsum(cnt[lo:hi])
    s = np.cumsum(tot[lo:hi])
    f = np.cumsum(full[lo:hi])
    cl, sl, fl = c[:-1], s[:-1], f[:-1]
    cr, sr, fr = c[-1] - cl, s[-1] - sl, f[-1] - fl
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = (np.where(cl > 0, sl * sl / cl, 0.0) + np.where(cr > 0, sr * sr / cr, 0.0)
                - (s[-1] ** 2 / c[-1] if c[-1] > 0 else 0.0))
    gain[(fl < min_leaf) | (fr < min_leaf) | (cl == 0) | (cr == 0)] = -np.inf
    j = int(np.argmax(gain))
    return lo + 1 + j, gain[j]


def _grow(cnt, tot, full, params, sq_scale):
    nodes = []
    tol = 1e-12 * sq_scale

    def visit(lo, hi, depth):
        me = len(nodes)
        nodes.append([lo, hi, -1, -1])
        if depth >= params.max_depth:
            return me
        best = _best_split(cnt, tot, full, lo, hi, params.min_leaf_samples)
        if best is None or not best[1] > tol:
            return me
        split = best[0]
        nodes[me][2] = visit(lo, split, depth + 1)
        nodes[me][3] = visit(split, hi, depth + 1)
        return me

    visit(0, len(cnt), 0)
    return np.asarray(nodes, dtype=np.intp)


def _leaf_means(nodes, cnt, tot):
    """Subsample mean per node; nodes without subsampled points inherit the parent."""
    values = np.zeros(len(nodes))
    ccum = np.concatenate([[0.0], np.cumsum(cnt)])
    scum = np.concatenate([[0.0], np.cumsum(tot)])

    def visit(i, parent_value):
        lo, hi, left, right = nodes[i]
        c = ccum[hi] - ccum[lo]
        values[i] = (scum[hi] - scum[lo]) / c if c > 0 else parent_value
        if left >= 0:
            visit(left, values[i])
            visit(right, values[i])

    c0 = ccum[-1]
    visit(0, scum[-1] / c0 if c0 > 0 else 0.0)
    return values


def _assemble(feature, nodes, values, full_counts):
    leaves = np.flatnonzero(nodes[:, 2] < 0)
    leaves = leaves[np.argsort(nodes[leaves, 0])]
    m = len(full_counts)
    leaf_of_bin = np.empty(m, dtype=np.intp)
    bins = np.empty(len(leaves), dtype=np.intp)
    samples = np.empty(len(leaves), dtype=np.intp)
    fcum = np.concatenate([[0], np.cumsum(full_counts)])
    for j, node in enumerate(leaves):
        lo, hi = nodes[node, :2]
        leaf_of_bin[lo:hi] = j
        bins[j] = hi - lo
        samples[j] = fcum[hi] - fcum[lo]
    return HistogramTree(feature, nodes, leaves, leaf_of_bin, values[leaves], bins, samples)


def _subsample_stats(binned, k, residuals, subsample):
    m = len(binned.counts[k])
    idx = binned.bin_index[subsample, k]
    res = np.asarray(residuals, dtype=float)[subsample]
    cnt = np.bincount(idx, minlength=m).astype(float)
    tot = np.bincount(idx, weights=res, minlength=m)
    return cnt, tot, res


def fit_tree(binned, k, residuals, subsample=None, params=TreeParams()) -> HistogramTree:
    """Grow a histogram tree on feature ``k`` to the residuals of ``subsample``.

    ``subsample`` is a boolean mask or index array (``None`` means all rows).
    Leaf sizes are constrained on full training counts; split gains and leaf
    values use the subsample only.
    """
    if subsample is None:
        subsample = slice(None)
    cnt, tot, res = _subsample_stats(binned, k, residuals, subsample)
    if cnt.sum() == 0:
        raise ValueError("cannot fit a tree to an empty subsample")
    if not np.all(np.isfinite(res)):
        raise FloatingPointError("non-finite residuals")
    params = params.resolve(binned.n)
    full = binned.counts[k]
    nodes = _grow(cnt, tot, full, params, float(res @ res) + 1e-300)
    return _assemble(k, nodes, _leaf_means(nodes, cnt, tot), full)


def refit_tree(structure: HistogramTree, binned, residuals, subsample=None) -> HistogramTree:
    """New leaf values on a fixed structure (mean residual of the subsample per leaf)."""
    if subsample is None:
        subsample = slice(None)
    cnt, tot, _ = _subsample_stats(binned, structure.feature, residuals, subsample)
    if cnt.sum() == 0:
        raise ValueError("cannot fit a tree to an empty subsample")
    values = _leaf_means(structure.nodes, cnt, tot)
    return replace(structure, leaf_value=values[structure.leaves], mu=0.0)


def center_and_truncate(tree: HistogramTree, binned, M: float = math.inf) -> HistogramTree:
    """Remove the full-training-set mean of the tree, then clip to ``[-M, M]``."""
    mu = float(tree.leaf_value @ tree.leaf_sample_count) / binned.n
    values = np.clip(tree.leaf_value - mu, -M, M)
    return replace(tree, leaf_value=values, mu=mu)


def predict_tree(tree: HistogramTree, bin_index) -> float | np.ndarray:
    b = np.clip(bin_index, 0, tree.n_bins - 1)
    out = tree.leaf_value[tree.leaf_of_bin[b]]
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class BinStructure:
    """Bin-space view of one tree: ``B`` (row-stochastic) and ``xi`` (diagonal of D)."""

    B: np.ndarray
    xi: np.ndarray

    @property
    def D(self) -> np.ndarray:
        return np.diag(self.xi)

    def kernel(self) -> np.ndarray:
        """``D B D``: entry ``1/N_L`` for co-leaf bins."""
        return self.xi[:, None] * self.B * self.xi[None, :]


def bin_structure(tree: HistogramTree, binned=None) -> BinStructure:
    leaf = tree.leaf_of_bin
    same = leaf[:, None] == leaf[None, :]
    B = same / tree.leaf_bin_count[leaf][:, None]
    xi = np.sqrt(tree.leaf_bin_count[leaf] / tree.leaf_sample_count[leaf])
    return BinStructure(B, xi)


def add_kernel(acc: np.ndarray, tree: HistogramTree, weight: float = 1.0) -> None:
    """In-place ``acc += weight * D B D`` using the leaf blocks directly."""
    for (lo, hi), n_leaf in zip(tree.leaf_bounds(), tree.leaf_sample_count):
        acc[lo:hi, lo:hi] += weight / n_leaf
