"""Batch command-line front end.

Exit codes: 0 success, 1 fatal input error, 2 partial failure (some image
pairs could not be processed).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import asdict

import numpy as np

from . import __version__
from .dataset import build_training_set, load_manifest, normalize_target, split_groups
from .entropy import PeConfig
from .evaluation import apply_logistic, cross_validate, evaluate, f_test, fit_logistic
from .features import DEFAULT_ETA
from .forest import (ForestConfig, TrainingSet, load_model, oob_error, predict_many,
                     save_model, split_counts, train_forest)

log = logging.getLogger("pefrf")

FEATURE_COLUMNS = ("ref_path", "dist_path", "f1", "f2", "f3", "target")
EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


class CliError(Exception):
    pass


def fmt(x: float) -> str:
    """Shortest round-tripping decimal, without a trailing ``.0``."""
    r = repr(float(x))
    return r[:-2] if r.endswith(".0") else r


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"environment variable {name} must be an integer, got {raw!r}") from None


def resolve(args) -> dict:
    """Resolved run configuration: flags, then environment, then defaults."""
    seed = args.seed if args.seed is not None else _env_int("PEFRF_SEED", 0)
    workers = args.workers if args.workers is not None else _env_int("PEFRF_WORKERS", 1)
    if workers < 1:
        raise CliError("workers must be >= 1")
    return {
        "command": args.command,
        "seed": seed,
        "workers": workers,
        "eta": args.eta,
        "order": 3,
        "delay": 1,
        "trees": args.trees,
        "depth": args.depth,
        "folds": args.folds,
        "alpha": args.alpha,
    }


def _forest_config(rc: dict) -> ForestConfig:
    return ForestConfig(n_trees=rc["trees"], max_depth=rc["depth"], seed=rc["seed"])


def _write_text(path, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def _dump_json(path, payload: dict) -> None:
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def read_feature_csv(path) -> tuple[TrainingSet, bool]:
    """Parse a feature CSV; returns the rows and whether every row has a target."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in FEATURE_COLUMNS[:5]):
            raise CliError(f"feature file {path} must have columns {','.join(FEATURE_COLUMNS)}")
        rows = list(reader)
    if not rows:
        raise CliError(f"feature file {path} has no rows")
    feats = np.array([[float(r["f1"]), float(r["f2"]), float(r["f3"])] for r in rows])
    has_target = all(r.get("target") not in (None, "") for r in rows)
    targets = np.array([float(r["target"]) for r in rows]) if has_target else np.zeros(len(rows))
    keys = [(r["ref_path"], r["dist_path"]) for r in rows]
    return TrainingSet(feats, targets, [k[0] for k in keys], keys), has_target


def _extract(rc: dict, manifest_path, cache_dir):
    try:
        m = load_manifest(manifest_path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read manifest: {exc}") from exc
    ts, failures = build_training_set(m, PeConfig(), cache_dir, rc["eta"], rc["workers"])
    for f in failures:
        print(f"failed pair {f.index}: {f.ref_path},{f.dist_path}: {f.message}", file=sys.stderr)
    return ts, failures


def _load_data(args, rc: dict):
    """Samples from ``--features`` or ``--manifest``.

    Returns ``(training_set, failures, has_targets)``; ``training_set`` is
    None when no pair could be processed.
    """
    if args.features:
        try:
            ts, has_targets = read_feature_csv(args.features)
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot read features: {exc}") from exc
        return ts, [], has_targets
    if args.manifest:
        ts, failures = _extract(rc, args.manifest, args.cache)
        return ts, failures, True
    raise CliError("one of --manifest or --features is required")


def cmd_extract(args, rc: dict) -> int:
    if not args.manifest:
        raise CliError("--manifest is required")
    ts, failures = _extract(rc, args.manifest, args.cache)
    rows = []
    if ts is not None:
        for (ref, dist), fv, t in zip(ts.keys, ts.features, ts.targets):
            rows.append((ref, dist, fmt(fv[0]), fmt(fv[1]), fmt(fv[2]), fmt(t)))
    _write_text(args.out, _csv_text(FEATURE_COLUMNS, rows))
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_train(args, rc: dict) -> int:
    if not args.model:
        raise CliError("--model is required")
    data, failures, has_targets = _load_data(args, rc)
    if data is None or len(data) == 0:
        raise CliError("training set is empty")
    if not has_targets:
        raise CliError("training requires a target column")
    cfg = _forest_config(rc)
    model = train_forest(data, cfg, workers=rc["workers"])
    save_model(model, args.model)
    oob = oob_error(model, data)
    counts = split_counts(model)
    report = {
        "tool_version": __version__,
        "config": rc,
        "forest": asdict(cfg),
        "n_samples": len(data),
        "target_variance": float(np.var(data.targets)),
        "zero_target_variance": bool(np.all(data.targets == data.targets[0])),
        "oob_mse": None if math.isnan(oob.mse) else oob.mse,
        "oob_covered": oob.n_covered,
        "oob_uncovered": oob.n_uncovered,
        "split_counts": {"f1": int(counts[0]), "f2": int(counts[1]), "f3": int(counts[2])},
        "failures": len(failures),
    }
    _dump_json(args.out, report)
    return EXIT_PARTIAL if failures else EXIT_OK


def _load_model(path):
    if not path:
        raise CliError("--model is required")
    try:
        return load_model(path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load model {path}: {exc}") from exc


def cmd_predict(args, rc: dict) -> int:
    model = _load_model(args.model)
    data, failures, _ = _load_data(args, rc)
    rows = []
    if data is not None:
        qs = predict_many(model, data.features)
        rows = [(ref, dist, fmt(q)) for (ref, dist), q in zip(data.keys, qs)]
    _write_text(args.out, _csv_text(("ref_path", "dist_path", "qs"), rows))
    return EXIT_PARTIAL if failures else EXIT_OK


def read_predictions(path) -> dict:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or any(
                    c not in reader.fieldnames for c in ("ref_path", "dist_path", "qs")):
                raise CliError(f"prediction file {path} must have columns ref_path,dist_path,qs")
            out = {}
            for r in reader:
                out[(r["ref_path"], r["dist_path"])] = float(r["qs"])
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read predictions {path}: {exc}") from exc
    return out


def _targets(args) -> dict:
    """Targets keyed by (ref_path, dist_path) from --features or --manifest."""
    if args.features:
        ts, has_targets = read_feature_csv(args.features)
        if not has_targets:
            raise CliError(f"feature file {args.features} has no targets")
        return {k: float(t) for k, t in zip(ts.keys, ts.targets)}
    if args.manifest:
        try:
            m = load_manifest(args.manifest)
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot read manifest: {exc}") from exc
        return {(s.ref_label, s.dist_label): normalize_target(m, s.raw_score) for s in m.samples}
    raise CliError("targets need --features or --manifest")


def cmd_evaluate(args, rc: dict) -> int:
    if args.predictions:
        preds = read_predictions(args.predictions)
        targets = _targets(args)
        keys = [k for k in preds if k in targets]
        q = np.array([preds[k] for k in keys])
        s = np.array([targets[k] for k in keys])
    elif args.model:
        model = _load_model(args.model)
        data, _, has_targets = _load_data(args, rc)
        if data is None or not has_targets:
            raise CliError("evaluation requires targets")
        keys = data.keys
        q = predict_many(model, data.features)
        s = data.targets
    else:
        raise CliError("evaluate needs --predictions or --model")
    if len(q) < 5:
        raise CliError(f"need at least 5 scored samples, got {len(q)}")
    report = evaluate(q, s)
    payload = {"tool_version": __version__, "config": rc, **report.to_dict()}
    _dump_json(args.out, payload)
    mapped = apply_logistic(report.logistic, q)
    scatter = args.scatter or os.path.join(
        os.path.dirname(os.path.abspath(args.out)) if args.out and args.out != "-" else os.getcwd(),
        "scatter.csv")
    rows = [(ref, dist, fmt(a), fmt(b), fmt(c)) for (ref, dist), a, b, c in zip(keys, q, mapped, s)]
    _write_text(scatter, _csv_text(("ref_path", "dist_path", "raw", "mapped", "subjective"), rows))
    return EXIT_OK


def cmd_cv(args, rc: dict) -> int:
    data, failures, has_targets = _load_data(args, rc)
    if data is None:
        raise CliError("no usable samples")
    if not has_targets:
        raise CliError("cross-validation requires targets")
    try:
        folds = split_groups(data.groups, rc["folds"], rc["seed"])
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    result = cross_validate(data, _forest_config(rc), folds=folds, workers=rc["workers"])
    payload = {"tool_version": __version__, "config": rc, **result.to_dict()}
    for fold, f in zip(payload["folds"], result.folds):
        fold["references"] = sorted({data.groups[i] for i in f})
    _dump_json(args.out, payload)
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_significance(args, rc: dict) -> int:
    if len(args.predictions_files) < 2:
        raise CliError("significance needs at least two prediction files")
    targets = _targets(args)
    preds = [read_predictions(p) for p in args.predictions_files]
    keyset = set(preds[0])
    for path, p in zip(args.predictions_files, preds):
        if set(p) != keyset:
            raise CliError(f"prediction file {path} covers a different sample set")
    missing = keyset - set(targets)
    if missing:
        raise CliError(f"{len(missing)} predicted samples have no target")
    keys = sorted(keyset)
    s = np.array([targets[k] for k in keys])
    residuals = []
    for p in preds:
        q = np.array([p[k] for k in keys])
        residuals.append(apply_logistic(fit_logistic(q, s), q) - s)
    names = [os.path.splitext(os.path.basename(p))[0] for p in args.predictions_files]
    n = len(names)
    codes = [[0] * n for _ in range(n)]
    fstats = [[1.0] * n for _ in range(n)]
    crit = None
    for i in range(n):
        for j in range(n):
            v = f_test(residuals[i], residuals[j], rc["alpha"])
            codes[i][j] = v.verdict
            fstats[i][j] = v.f_statistic
            crit = v.f_critical
    payload = {"tool_version": __version__, "config": rc, "methods": names, "n": len(keys),
               "f_critical": crit, "f_statistic": fstats, "verdict": codes,
               "residual_variance": [float(np.var(r, ddof=1)) for r in residuals]}
    _dump_json(args.out, payload)
    if args.out and args.out != "-":
        csv_path = os.path.splitext(args.out)[0] + ".csv"
        rows = [[names[i]] + codes[i] for i in range(n)]
        _write_text(csv_path, _csv_text(["method"] + names, rows))
    return EXIT_OK


COMMANDS = {
    "extract": cmd_extract,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "cv": cmd_cv,
    "significance": cmd_significance,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", help="dataset manifest CSV (with .meta.json sidecar)")
    common.add_argument("--features", help="feature CSV written by 'extract'")
    common.add_argument("--model", help="model file")
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--seed", type=int, default=None, help="random seed (env PEFRF_SEED)")
    common.add_argument("--workers", type=int, default=None, help="worker processes (env PEFRF_WORKERS)")
    common.add_argument("--trees", type=int, default=200)
    common.add_argument("--depth", type=int, default=20)
    common.add_argument("--eta", type=float, default=DEFAULT_ETA)
    common.add_argument("--folds", type=int, default=5)
    common.add_argument("--alpha", type=float, default=0.05)
    common.add_argument("--cache", help="feature cache directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pefrf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("extract", parents=[common], help="extract features for a manifest")
    sub.add_parser("train", parents=[common], help="train a forest and report OOB error")
    sub.add_parser("predict", parents=[common], help="score pairs with a trained model")
    ev = sub.add_parser("evaluate", parents=[common], help="SRCC/KRCC/PLCC/RMSE report")
    ev.add_argument("--predictions", help="prediction CSV written by 'predict'")
    ev.add_argument("--scatter", help="scatter CSV path (default: scatter.csv beside --out)")
    sub.add_parser("cv", parents=[common], help="reference-disjoint k-fold cross-validation")
    sig = sub.add_parser("significance", parents=[common], help="pairwise F-test verdict matrix")
    sig.add_argument("predictions_files", nargs="+", metavar="PREDICTIONS")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = resolve(args)
        return COMMANDS[args.command](args, rc)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
