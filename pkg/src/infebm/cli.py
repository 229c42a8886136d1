"""Command-line interface: ``infebm {train,predict,explain,verify,experiment}``."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import checks, experiments, serialization
from .data import load_csv, load_features
from .estimator import InferableEBMRegressor


class CommandError(Exception):
    """Raised for user-facing failures; reported without a traceback."""


def _emit(rows, fmt, out=None):
    out = out or sys.stdout
    if fmt == "json-lines":
        text = experiments.to_json_lines(rows)
    else:
        text = experiments.format_table(rows)
    if text:
        out.write(text + "\n")


def cmd_train(args):
    data = load_csv(args.data, args.target)
    lr = 1.0 / data.p if args.safe else args.learning_rate
    est = InferableEBMRegressor(
        variant=args.algo, learning_rate=lr, n_rounds=args.rounds,
        subsample=args.subsample, max_bins=args.max_bins, max_depth=args.max_depth,
        freeze_after=args.freeze_after, honest=args.honest,
        sigma_mode=args.sigma.replace("-", "_"),
        calibration_fraction=args.calibration_fraction, random_state=args.seed)
    est.fit(data.X, data.y)
    serialization.save(est, args.out, feature_names=data.feature_names, target=data.target)
    rows = [{"term": "intercept", "value": est.intercept_, "min": "", "max": ""},
            {"term": "sigma", "value": est.sigma_, "min": "", "max": ""}]
    for k, name in enumerate(data.feature_names):
        eff = est.model_.rescale * est.model_.effects[k]
        rows.append({"term": name, "value": "", "min": float(eff.min()),
                     "max": float(eff.max())})
    if data.n_rejected:
        print(f"note: {data.n_rejected} rows with missing or non-numeric cells were skipped",
              file=sys.stderr)
    _emit(rows, args.format)


def _load(path):
    try:
        return serialization.load(path)
    except FileNotFoundError:
        raise CommandError(f"model file not found: {path}") from None


def cmd_predict(args):
    est = _load(args.model)
    X = load_features(args.data, est.feature_names_)
    pred = est.predict(X)
    rows = [{"row": i, "prediction": float(v)} for i, v in enumerate(pred)]
    if args.interval != "none":
        if args.interval == "ci":
            res = est.confidence_interval(X, args.alpha)
        elif args.interval == "ri":
            res = est.reproduction_interval(X, args.alpha)
        else:
            conformal = est.cache_.calibration_scores is not None and not args.no_conformal
            res = est.prediction_interval(X, args.alpha, conformal=conformal)
        for row, lo, hi in zip(rows, np.atleast_1d(res.lower), np.atleast_1d(res.upper)):
            row.update({"interval": args.interval, "lower": float(lo), "upper": float(hi)})
    _emit(rows, args.format)


def cmd_explain(args):
    est = _load(args.model)
    names = est.feature_names_
    if args.feature in names:
        k = names.index(args.feature)
    elif args.feature.isdigit() and int(args.feature) < len(names):
        k = int(args.feature)
    else:
        raise CommandError(f"unknown feature {args.feature!r}; known: {', '.join(names)}")
    edges = est.cache_.edges[k]
    if args.grid_values:
        grid = np.array(sorted(set(float(v) for v in args.grid_values.split(","))))
    elif len(edges):
        span = edges[-1] - edges[0]
        pad = span / max(len(edges) - 1, 1)
        grid = np.linspace(edges[0] - pad, edges[-1] + pad, args.grid)
    else:
        grid = np.array([0.0])
    res = est.feature_interval(k, grid, args.alpha)
    rows = [{"x": float(x), "effect": float(c), "lower": float(lo), "upper": float(hi),
             "r_norm": float(r)}
            for x, c, lo, hi, r in zip(grid, np.atleast_1d(res.center),
                                       np.atleast_1d(res.lower), np.atleast_1d(res.upper),
                                       np.atleast_1d(res.r_norm))]
    _emit(rows, args.format)


def cmd_verify(args):
    results = checks.run_all(n=args.n, seed=args.seed, corrupt=args.corrupt, scale=args.scale)
    _emit([r.record() for r in results], args.format)
    if not all(r.passed for r in results):
        raise CommandError("one or more oracle checks failed")


def cmd_experiment(args):
    dgp = experiments.DGPS[args.dgp](args.noise) if args.dgp else None
    if args.name == "coverage":
        rows = experiments.coverage_experiment(dgp, n=args.n or 2000, trials=args.trials,
                                               alpha=args.alpha, variant=args.algo,
                                               n_rounds=args.rounds, n_jobs=args.jobs)
    elif args.name == "rate":
        rows = experiments.rate_experiment(dgp, trials=args.trials, n_rounds=args.rounds,
                                           n_jobs=args.jobs)
    elif args.name == "overfit":
        rows = experiments.overfit_experiment(dgp, n=args.n or 500, B_max=args.rounds)
    else:
        rows = experiments.query_time_experiment()
    _emit(rows, args.format)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="infebm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--format", choices=("table", "json-lines"), default="table")
        return p

    p = common(sub.add_parser("train", help="fit a model to a CSV file"))
    p.add_argument("data")
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--algo", choices=("parallel", "loo", "cyclic"), default="parallel")
    p.add_argument("--rounds", type=int, default=1000)
    p.add_argument("--lambda", dest="learning_rate", type=float, default=1.0)
    p.add_argument("--safe", action="store_true", help="use learning rate 1/p")
    p.add_argument("--subsample", type=float, default=0.8)
    p.add_argument("--max-bins", type=int, default=255)
    p.add_argument("--max-depth", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", choices=("in-sample", "oob"), default="in-sample")
    p.add_argument("--freeze-after", type=int, default=None)
    p.add_argument("--honest", action="store_true")
    p.add_argument("--calibration-fraction", type=float, default=0.0)
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("predict", help="predictions with optional intervals"))
    p.add_argument("data")
    p.add_argument("--model", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--interval", choices=("none", "ci", "pi", "ri"), default="none")
    p.add_argument("--no-conformal", action="store_true",
                   help="plain prediction intervals even when calibration scores exist")
    p.set_defaults(func=cmd_predict)

    p = common(sub.add_parser("explain", help="shape function of one feature with CI band"))
    p.add_argument("--model", required=True)
    p.add_argument("--feature", required=True)
    p.add_argument("--grid", type=int, default=50)
    p.add_argument("--grid-values", default=None, help="comma-separated query points")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_explain)

    p = common(sub.add_parser("verify", help="bin-space versus dense oracle checks"))
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0, help="multiplier on instance counts")
    p.add_argument("--corrupt", action="store_true", help="perturb the cached kernel")
    p.set_defaults(func=cmd_verify)

    p = common(sub.add_parser("experiment", help="simulation studies"))
    p.add_argument("name", choices=("coverage", "rate", "overfit", "query-time"))
    p.add_argument("--dgp", choices=sorted(experiments.DGPS), default=None)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--rounds", type=int, default=500)
    p.add_argument("--algo", choices=("parallel", "loo", "cyclic"), default="parallel")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (CommandError, ValueError, KeyError, FileNotFoundError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
