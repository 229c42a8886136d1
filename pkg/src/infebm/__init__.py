"""Inferable Explainable Boosting Machines.

Boulevard-averaged histogram-tree boosting of additive models, with
confidence, prediction and reproduction intervals computed in bin space.
"""

from .boost import BoostConfig, EnsembleModel, train
from .data import Dataset, HistogramBinner, bin_features, load_csv
from .estimator import InferableEBMRegressor
from .inference import IntervalResult, build_cache

__all__ = [
    "BoostConfig",
    "Dataset",
    "EnsembleModel",
    "HistogramBinner",
    "InferableEBMRegressor",
    "IntervalResult",
    "bin_features",
    "build_cache",
    "load_csv",
    "train",
]

__version__ = "0.1.0"
