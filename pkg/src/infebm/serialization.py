"""Versioned JSON model files.

Floats are written with ``repr`` precision, so a save/load cycle reproduces
every stored number bit for bit, and saving the same model twice produces
identical bytes. Training-set-sized arrays (per-sample bin assignments, the
out-of-bag trace) are not stored; everything interval queries need is
bin-level.
"""

from __future__ import annotations

import json
from dataclasses import asdict, fields

import numpy as np

from .boost import BoostConfig, EnsembleModel
from .estimator import InferableEBMRegressor
from .inference import InferenceCache

FORMAT_NAME = "infebm-model"
FORMAT_VERSION = 1


def _arr(a):
    return np.asarray(a, dtype=float).tolist()


def _matrix(obj, shape, what):
    a = np.asarray(obj, dtype=float)
    if a.shape != tuple(shape):
        raise ValueError(f"{what}: expected shape {tuple(shape)}, got {a.shape}")
    return a


def _cross_blocks(cache):
    off = cache.offsets
    out = {}
    for a in range(cache.p):
        for b in range(a + 1, cache.p):
            block = cache.cross[off[a]:off[a + 1], off[b]:off[b + 1]]
            out[f"{a},{b}"] = block.astype(np.int64).tolist()
    return out


def to_dict(est: InferableEBMRegressor, feature_names=None, target=None) -> dict:
    """Plain-data representation of a fitted estimator."""
    model, cache = est.model_, est.cache_
    names = list(feature_names) if feature_names is not None else \
        [f"x{k}" for k in range(est.n_features_in_)]
    return {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "params": est.get_params(),
        "config": asdict(model.config),
        "feature_names": names,
        "target": target,
        "variant": model.variant,
        "learning_rate": model.learning_rate,
        "rescale": model.rescale,
        "n_rounds": model.n_rounds,
        "burn_in": model.burn_in,
        "seed": model.seed,
        "intercept": model.intercept,
        "effects": [_arr(e) for e in model.effects],
        "mean_leaves": _arr(model.mean_leaves),
        "inference": {
            "method": cache.method,
            "n": cache.n,
            "step": cache.step,
            "sigma": cache.sigma,
            "edges": [_arr(e) for e in cache.edges],
            "counts": [np.asarray(c).astype(np.int64).tolist() for c in cache.counts],
            "H_blocks": [_arr(h) for h in cache.blocks],
            "cross_counts": _cross_blocks(cache),
            "calibration_scores": None if cache.calibration_scores is None
            else _arr(cache.calibration_scores),
        },
    }


def dumps(est, feature_names=None, target=None) -> str:
    """One top-level key per line, values in compact JSON."""
    doc = to_dict(est, feature_names, target)
    lines = [f"{json.dumps(key)}: {json.dumps(doc[key], sort_keys=True, separators=(',', ':'))}"
             for key in sorted(doc)]
    return "{\n" + ",\n".join(lines) + "\n}\n"


def save(est, path, feature_names=None, target=None) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(est, feature_names, target))


def from_dict(doc: dict) -> InferableEBMRegressor:
    """Rebuild a fitted estimator, validating version and array shapes."""
    if doc.get("format") != FORMAT_NAME:
        raise ValueError("not an infebm model file")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {version!r} "
                         f"(this build reads {FORMAT_VERSION})")
    known = {f.name for f in fields(BoostConfig)}
    config = BoostConfig(**{k: v for k, v in doc["config"].items() if k in known}).validate()
    inf = doc["inference"]
    edges = [np.asarray(e, dtype=float) for e in inf["edges"]]
    p = len(edges)
    m = [len(e) + 1 for e in edges]
    counts = [_matrix(c, (m[k],), f"counts[{k}]") for k, c in enumerate(inf["counts"])]
    if len(counts) != p or len(doc["effects"]) != p or len(inf["H_blocks"]) != p:
        raise ValueError("per-feature arrays disagree on the number of features")
    effects = [_matrix(e, (m[k],), f"effects[{k}]") for k, e in enumerate(doc["effects"])]
    blocks = [_matrix(h, (m[k], m[k]), f"H_blocks[{k}]") for k, h in enumerate(inf["H_blocks"])]
    off = np.concatenate([[0], np.cumsum(m)])
    cross = np.zeros((off[-1], off[-1]))
    for k in range(p):
        cross[off[k]:off[k + 1], off[k]:off[k + 1]] = np.diag(counts[k])
    for a in range(p):
        for b in range(a + 1, p):
            block = _matrix(inf["cross_counts"][f"{a},{b}"], (m[a], m[b]), f"cross_counts[{a},{b}]")
            cross[off[a]:off[a + 1], off[b]:off[b + 1]] = block
            cross[off[b]:off[b + 1], off[a]:off[a + 1]] = block.T

    model = EnsembleModel(
        variant=doc["variant"], learning_rate=float(doc["learning_rate"]),
        n_rounds=int(doc["n_rounds"]), effects=effects, intercept=float(doc["intercept"]),
        rescale=float(doc["rescale"]), burn_in=int(doc["burn_in"]), seed=int(doc["seed"]),
        mean_leaves=_matrix(doc["mean_leaves"], (p,), "mean_leaves"), config=config)
    scores = inf.get("calibration_scores")
    cache = InferenceCache(
        variant=model.variant, method=inf["method"], n=int(inf["n"]), step=float(inf["step"]),
        rescale=model.rescale, sigma=float(inf["sigma"]), edges=edges, counts=counts,
        blocks=blocks, cross=cross,
        calibration_scores=None if scores is None else np.asarray(scores, dtype=float))
    _ = cache.solver

    est = InferableEBMRegressor(**doc["params"])
    est.model_ = model
    est.cache_ = cache
    est.sigma_ = cache.sigma
    est.intercept_ = model.intercept
    est.n_features_in_ = p
    est.feature_names_ = list(doc["feature_names"])
    est.target_ = doc.get("target")
    return est


def loads(text: str) -> InferableEBMRegressor:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"model file is not valid JSON: {exc}") from None
    return from_dict(doc)


def load(path) -> InferableEBMRegressor:
    with open(path) as fh:
        return loads(fh.read())
