"""Tabular ingestion and per-feature histogram binning."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

DEFAULT_MAX_BINS = 255


@dataclass
class Dataset:
    """A numeric design matrix with its response.

    ``n_rejected`` counts input rows dropped during ingestion because a cell
    was missing or not a finite number.
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: list[str] = field(default_factory=list)
    target: str = "y"
    n_rejected: int = 0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2:
            raise ValueError("X must be two-dimensional")
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y have different numbers of rows")
        if self.X.shape[0] < 2:
            raise ValueError("a dataset needs at least 2 samples")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("X and y must be finite")
        if not self.feature_names:
            self.feature_names = [f"x{k}" for k in range(self.X.shape[1])]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def _parse_cell(text):
    try:
        value = float(text)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def load_csv(path, target: str) -> Dataset:
    """Read a headered, comma-separated file into a :class:`Dataset`.

    Rows with an empty or non-numeric cell are dropped and counted in
    ``Dataset.n_rejected``. Column order of the features is preserved.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError("zero usable rows")
        header = [h.strip() for h in header]
        if target not in header:
            raise KeyError(f"target column {target!r} not found in header")
        t = header.index(target)
        names = [h for j, h in enumerate(header) if j != t]
        rows, ys, rejected = [], [], 0
        for record in reader:
            if not record or all(not cell.strip() for cell in record):
                continue
            if len(record) != len(header):
                rejected += 1
                continue
            values = [_parse_cell(cell.strip()) for cell in record]
            if any(v is None for v in values):
                rejected += 1
                continue
            ys.append(values[t])
            rows.append([v for j, v in enumerate(values) if j != t])
    if not rows:
        raise ValueError("zero usable rows")
    X = np.asarray(rows, dtype=float).reshape(len(rows), len(names))
    return Dataset(X, np.asarray(ys), feature_names=names, target=target,
                   n_rejected=rejected)


def load_features(path, names) -> np.ndarray:
    """Read the columns ``names`` (in that order) of a headered CSV file.

    Extra columns are ignored; rows with an unusable cell in a requested
    column are skipped. Missing columns raise ``KeyError``.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        missing = [name for name in names if name not in header]
        if missing:
            raise KeyError(f"schema mismatch: missing feature columns {missing}")
        cols = [header.index(name) for name in names]
        rows = []
        for record in reader:
            if not record or len(record) != len(header):
                continue
            values = [_parse_cell(record[j].strip()) for j in cols]
            if all(v is not None for v in values):
                rows.append(values)
    if not rows:
        raise ValueError("zero usable rows")
    return np.asarray(rows, dtype=float)


@dataclass(frozen=True)
class BinnedDataset:
    """Quantile binning of every feature of a training matrix.

    Attributes
    ----------
    edges : list of ndarray
        Strictly increasing cut points per feature. A value ``x`` lands in
        bin ``searchsorted(edges, x, side="right")``, so ``x == edge`` goes
        to the right-hand bin.
    bin_index : ndarray of shape (n, p)
        Training bin assignment of every sample.
    counts : list of ndarray
        Training samples per bin; every entry is at least 1.
    constant : ndarray of bool
        Features that collapsed to a single bin.
    """

    edges: list
    bin_index: np.ndarray
    counts: list
    constant: np.ndarray
    max_bins: int = DEFAULT_MAX_BINS

    @property
    def n(self) -> int:
        return self.bin_index.shape[0]

    @property
    def p(self) -> int:
        return self.bin_index.shape[1]

    @property
    def n_bins(self) -> np.ndarray:
        return np.array([len(e) + 1 for e in self.edges])

    def bins_of(self, X) -> np.ndarray:
        """Bin indices for a matrix of new points, shape (n_queries, p)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.p:
            raise ValueError(f"expected {self.p} features, got {X.shape[1]}")
        return np.column_stack([np.searchsorted(self.edges[k], X[:, k], side="right")
                                for k in range(self.p)]).astype(np.intp)


def _quantile_edges(values, max_bins):
    distinct = np.unique(values)
    if len(distinct) <= max_bins:
        # few distinct values: one bin each, split at midpoints
        return 0.5 * (distinct[1:] + distinct[:-1])
    qs = np.arange(1, max_bins) / max_bins
    edges = np.unique(np.quantile(values, qs))
    # edges at or below the minimum would leave bin 0 empty
    return edges[edges > values.min()]


def _merge_empty(values, edges):
    while True:
        idx = np.searchsorted(edges, values, side="right")
        counts = np.bincount(idx, minlength=len(edges) + 1)
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0:
            return edges, idx, counts
        r = empty[0]
        # bin r spans [edges[r-1], edges[r]); dropping its left edge merges it leftwards
        edges = np.delete(edges, r - 1 if r > 0 else 0)


def bin_features(ds, max_bins: int = DEFAULT_MAX_BINS) -> BinnedDataset:
    """Equal-count binning of each column of ``ds.X`` (or of a raw matrix)."""
    if max_bins < 2:
        raise ValueError("max_bins must be at least 2")
    X = ds.X if isinstance(ds, Dataset) else np.asarray(ds, dtype=float)
    n, p = X.shape
    edges, index, counts = [], np.empty((n, p), dtype=np.intp), []
    for k in range(p):
        e, idx, c = _merge_empty(X[:, k], _quantile_edges(X[:, k], max_bins))
        edges.append(e)
        index[:, k] = idx
        counts.append(c)
    constant = np.array([len(e) == 0 for e in edges], dtype=bool)
    return BinnedDataset(edges, index, counts, constant, max_bins)


def bin_of(binned: BinnedDataset, k: int, x: float) -> int:
    """Bin of scalar ``x`` on feature ``k``; out-of-range values clamp to the end bins."""
    return int(np.searchsorted(binned.edges[k], x, side="right"))


class HistogramBinner(TransformerMixin, BaseEstimator):
    """Transformer mapping raw features to quantile-bin indices.

    Parameters
    ----------
    max_bins : int, default=255
        Upper bound on bins per feature.
    """

    def __init__(self, max_bins=DEFAULT_MAX_BINS):
        self.max_bins = max_bins

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.binned_ = bin_features(X, self.max_bins)
        self.n_bins_ = self.binned_.n_bins
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "binned_")
        return self.binned_.bins_of(check_array(X, dtype=float))
