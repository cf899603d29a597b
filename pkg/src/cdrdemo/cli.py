"""``cdrdemo`` command line: ingest, featurize, train, evaluate, importance, synth, catalog.

Every command appends one JSON line to ``<out>/manifest.jsonl`` listing its
configuration and the sha256 of each input and output file. Failures print
a single JSON line to stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .boosting import GbtParams, TreeEnsemble, feature_importance, predict_gbt, train_gbt
from .evaluation import EvalReport, evaluate_predictions, kfold_cv, stratified_split, write_importance_csv
from .featurizer import catalog, feature_matrix, read_feature_csv, write_feature_csv
from .ingest import (
    IngestError,
    build_timelines,
    parse_cdr_stream,
    parse_cells,
    parse_contracts,
    parse_labels,
    parse_services,
    write_rejects,
)
from .logreg import predict_logreg, train_logreg
from .modelio import ModelFormatError, load_document, model_from_dict, save_model
from .preprocess import (
    KMeansConfig,
    PcaModel,
    ZScoreParams,
    detect_outliers,
    pca_apply,
    pca_fit,
    write_outlier_report,
    zscore_apply,
    zscore_fit,
)
from .synth import ProfileSet, generate, preset

EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_MODEL = 4

TARGET_CLASSES = {"gender": ["Male", "Female"], "age": ["A", "B", "C"]}
POSITIVE = {"gender": "Female", "age": None}


class CliError(Exception):
    def __init__(self, message: str, code: int = 1, kind: str = "error"):
        super().__init__(message)
        self.code = code
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message, EXIT_USAGE, "usage")


# --- helpers --------------------------------------------------------------


def sha256_of(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(path: str | None, flag: str) -> Path:
    if not path:
        raise CliError(f"{flag} is required", EXIT_USAGE, "usage")
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{flag}: no such file {path}", EXIT_INPUT, "input")
    return p


def _append_manifest(out: Path, command: str, config: dict, inputs: Sequence[Path], outputs: Sequence[Path]):
    entry = {
        "command": command,
        "version": __version__,
        "config": config,
        "seed": config.get("seed"),
        "inputs": {str(p): sha256_of(p) for p in inputs},
        "outputs": {str(p): sha256_of(p) for p in outputs},
    }
    with open(out / "manifest.jsonl", "a", encoding="utf-8") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}


def _load_features(path: Path):
    with open(path, encoding="utf-8", newline="") as fh:
        try:
            columns, gsms, X = read_feature_csv(fh)
        except (ValueError, StopIteration) as exc:
            raise CliError(f"{path}: {exc or 'empty feature file'}", EXIT_INPUT, "input") from None
    return columns, gsms, X


def _load_targets(labels_path: Path, gsms: Sequence[str], target: str):
    labels, rejects = parse_labels(labels_path)
    by_gsm = {l.gsm: l for l in labels}
    keep = [i for i, g in enumerate(gsms) if g in by_gsm]
    if not keep:
        raise CliError("no labeled customers in the feature matrix", EXIT_INPUT, "input")
    attr = "gender" if target == "gender" else "age_group"
    y = np.array([getattr(by_gsm[gsms[i]], attr) for i in keep], dtype=object)
    return np.array(keep), y


def _write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _gbt_params(args) -> GbtParams:
    base = GbtParams.gender_preset() if args.target == "gender" else GbtParams.age_preset()
    overrides = {
        "max_depth": args.max_depth,
        "eta": args.eta,
        "gamma": args.gamma,
        "min_child_weight": args.min_child_weight,
        "reg_lambda": args.reg_lambda,
        "alpha": args.alpha,
        "nrounds": args.nrounds,
        "subsample": args.subsample,
        "early_stopping_rounds": args.early_stopping,
    }
    d = base.to_dict()
    d.update({k: v for k, v in overrides.items() if v is not None})
    d["seed"] = args.seed
    try:
        return GbtParams(**d)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE, "usage") from None


# --- transforms shared by train and evaluate ------------------------------


def _fit_transforms(X: np.ndarray, zscore: bool, pca_k: int | None) -> dict:
    doc: dict = {}
    if zscore:
        z = zscore_fit(X)
        doc["zscore"] = z.to_dict()
        X = zscore_apply(z, X)
    if pca_k:
        try:
            doc["pca"] = pca_fit(X, pca_k).to_dict()
        except ValueError as exc:
            raise CliError(str(exc), EXIT_USAGE, "usage") from None
    return doc


def _apply_transforms(doc: dict, X: np.ndarray) -> np.ndarray:
    if doc.get("zscore"):
        X = zscore_apply(ZScoreParams.from_dict(doc["zscore"]), X)
    if doc.get("pca"):
        X = pca_apply(PcaModel.from_dict(doc["pca"]), X)
    return X


def _fit_model(kind: str, X, y, classes, params: GbtParams, seed: int, names, eval_set=None):
    if kind == "gbt":
        model, trace = train_gbt(X, y, params, eval_set=eval_set, classes=classes, feature_names=names)
        return model, trace
    return train_logreg(X, y, seed=seed, classes=classes, feature_names=names), []


def _predict(model, X) -> np.ndarray:
    if isinstance(model, TreeEnsemble):
        return predict_gbt(model, X)
    return predict_logreg(model, X)


# --- commands -------------------------------------------------------------


def cmd_ingest(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = [_require(args.cdr, "--cdr")]
    table, rejects = parse_cdr_stream(inputs[0])
    summary = {"cdr_rows": len(table), "distinct_gsms": len(table.gsm_vocab)}
    for flag, parser in (("cells", parse_cells), ("services", parse_services), ("contracts", parse_contracts), ("labels", parse_labels)):
        path = getattr(args, flag)
        if path:
            inputs.append(_require(path, f"--{flag}"))
            parsed, rj = parser(inputs[-1])
            summary[flag] = len(parsed)
            rejects.extend(rj)
    summary["rejects"] = len(rejects)
    with open(out / "rejects.csv", "w", encoding="utf-8", newline="") as fh:
        write_rejects(rejects, fh)
    (out / "ingest_summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    _append_manifest(out, "ingest", _config(args), inputs, [out / "rejects.csv", out / "ingest_summary.json"])
    print(json.dumps(summary, sort_keys=True))


def cmd_featurize(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cdr = _require(args.cdr, "--cdr")
    cells_path = _require(args.cells, "--cells")
    inputs = [cdr, cells_path]
    table, rejects = parse_cdr_stream(cdr)
    cells, rj = parse_cells(cells_path)
    rejects += rj
    services = contracts = None
    if args.services:
        inputs.append(_require(args.services, "--services"))
        services, rj = parse_services(inputs[-1])
        rejects += rj
    if args.contracts:
        inputs.append(_require(args.contracts, "--contracts"))
        contracts, rj = parse_contracts(inputs[-1])
        rejects += rj
    gsms = None
    if args.labels:
        inputs.append(_require(args.labels, "--labels"))
        labels, rj = parse_labels(inputs[-1])
        rejects += rj
        gsms = sorted({l.gsm for l in labels})
    timelines = build_timelines(table, services, contracts, gsms=gsms)
    names, X = feature_matrix(timelines, cells, threads=args.threads)
    target = out / "features.csv"
    with open(target, "w", encoding="utf-8", newline="") as fh:
        write_feature_csv(fh, names, X)
    with open(out / "rejects.csv", "w", encoding="utf-8", newline="") as fh:
        write_rejects(rejects, fh)
    _append_manifest(out, "featurize", _config(args), inputs, [target, out / "rejects.csv"])


def cmd_train(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    feat_path = _require(args.features, "--features")
    labels_path = _require(args.labels, "--labels")
    columns, gsms, X = _load_features(feat_path)
    rows, y = _load_targets(labels_path, gsms, args.target)
    X = X[rows]
    row_gsms = [gsms[i] for i in rows]
    classes = TARGET_CLASSES[args.target]
    params = _gbt_params(args)
    if not 0.0 < args.split <= 1.0:
        raise CliError("--split must be in (0, 1]", EXIT_USAGE, "usage")
    train_idx, test_idx = stratified_split(y, args.split, args.seed)

    flags = detect_outliers(X, columns, row_gsms, kmeans_config=KMeansConfig(seed=args.seed))
    write_outlier_report(out / "outliers.csv", flags)
    if args.outliers == "drop":
        flagged = np.array([f.flagged for f in flags])
        train_idx = train_idx[~flagged[train_idx]]

    zscore = args.zscore or args.model == "logreg"
    transforms = _fit_transforms(X[train_idx], zscore, args.pca)
    Xt = _apply_transforms(transforms, X)
    names = columns if not args.pca else [f"pc{i + 1}" for i in range(args.pca)]
    eval_set = (Xt[test_idx], y[test_idx]) if len(test_idx) and args.model == "gbt" else None
    try:
        model, trace = _fit_model(args.model, Xt[train_idx], y[train_idx], classes, params, args.seed, names, eval_set)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INPUT, "input") from None

    extra = {"target": args.target, "input_columns": columns, "transforms": transforms}
    save_model(model, out / "model.json", extra=extra)
    _write_csv(
        out / "trace.csv",
        ["round", "train_error", "test_error"],
        [[t.round, repr(t.train_error), "" if t.eval_error is None else repr(t.eval_error)] for t in trace],
    )
    split_doc = {
        "seed": args.seed,
        "fraction": args.split,
        "train": [row_gsms[i] for i in train_idx],
        "test": [row_gsms[i] for i in test_idx],
    }
    (out / "split.json").write_text(json.dumps(split_doc, indent=1) + "\n", encoding="utf-8")
    outputs = [out / n for n in ("model.json", "trace.csv", "split.json", "outliers.csv")]
    _append_manifest(out, "train", _config(args), [feat_path, labels_path], outputs)


def _load_run_model(path: Path):
    try:
        doc = load_document(path)
        model = model_from_dict(doc)
    except ModelFormatError as exc:
        raise CliError(f"{path}: {exc}", EXIT_MODEL, "model") from None
    return doc, model


def cmd_evaluate(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model_path = _require(args.model_file, "--model-file")
    feat_path = _require(args.features, "--features")
    labels_path = _require(args.labels, "--labels")
    split_path = _require(args.split_file or str(model_path.parent / "split.json"), "--split-file")
    doc, model = _load_run_model(model_path)
    target = doc.get("target", args.target)
    columns, gsms, X = _load_features(feat_path)
    if columns != doc.get("input_columns", columns):
        raise CliError("feature columns do not match the model's training columns", EXIT_MODEL, "model")
    split = json.loads(split_path.read_text(encoding="utf-8"))
    index = {g: i for i, g in enumerate(gsms)}
    missing = [g for g in split["test"] if g not in index]
    if missing:
        raise CliError(f"{len(missing)} test customers missing from the feature matrix", EXIT_INPUT, "input")
    rows, y = _load_targets(labels_path, gsms, target)
    label_of = dict(zip((gsms[i] for i in rows), y))
    test_rows = np.array([index[g] for g in split["test"]], dtype=int)
    if len(test_rows) == 0 and not args.folds:
        raise CliError("empty test split and no --folds requested", EXIT_USAGE, "usage")
    classes = TARGET_CLASSES[target]
    kind = "gbt" if isinstance(model, TreeEnsemble) else "logreg"
    transforms = doc.get("transforms", {})

    report = None
    started = time.perf_counter()
    if len(test_rows):
        try:
            proba = _predict(model, _apply_transforms(transforms, X[test_rows]))
        except ValueError as exc:
            raise CliError(str(exc), EXIT_MODEL, "model") from None
        y_test = np.array([label_of[g] for g in split["test"]], dtype=object)
        report = evaluate_predictions(target, kind, proba, y_test, classes, POSITIVE[target])
    elapsed = time.perf_counter() - started

    if args.folds:
        cv = _cross_validate(X[rows], y, classes, target, kind, doc, args)
        if report is None:
            report = EvalReport(target, kind, 0, cv.mean["accuracy"])
        report.cv = cv.to_dict()

    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    (out / "timing.json").write_text(
        json.dumps({"classification_seconds": elapsed, "rows": int(len(test_rows)), "note": "wall clock on this machine"}) + "\n",
        encoding="utf-8",
    )
    _append_manifest(
        out, "evaluate", _config(args), [model_path, feat_path, labels_path, split_path],
        [out / "report.json", out / "report.txt"],
    )
    print(report.to_text(elapsed), end="")


def _cross_validate(X, y, classes, target, kind, doc, args):
    params = GbtParams(**doc["params"]) if kind == "gbt" else GbtParams()
    transforms = doc.get("transforms", {})
    pca_k = len(transforms["pca"]["components"]) if transforms.get("pca") else None

    def trainer(Xtr, ytr, fold):
        t = _fit_transforms(Xtr, bool(transforms.get("zscore")), pca_k)
        model, _ = _fit_model(kind, _apply_transforms(t, Xtr), ytr, classes, params, args.seed, None)
        return model, t

    def scorer(fitted, Xte, yte):
        model, t = fitted
        rep = evaluate_predictions(target, kind, _predict(model, _apply_transforms(t, Xte)), yte, classes, POSITIVE[target])
        scores = {"accuracy": rep.accuracy}
        if rep.auc is not None:
            scores["auc"] = rep.auc
            scores["f1"] = rep.per_class[rep.positive_class]["f1"]
        else:
            scores["mean_f1"] = rep.mean_f1
        return scores

    return kfold_cv(X, y, trainer, scorer, k=args.folds, seed=args.seed)


def cmd_importance(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model_path = _require(args.model_file, "--model-file")
    _, model = _load_run_model(model_path)
    if not isinstance(model, TreeEnsemble):
        raise CliError("importance needs a boosted-tree model", EXIT_MODEL, "model")
    names = model.feature_names or [str(i) for i in range(model.n_features)]
    ranked = [(names[f], g) for f, g in feature_importance(model)]
    target = out / "importance.csv"
    write_importance_csv(target, ranked, args.top)
    _append_manifest(out, "importance", _config(args), [model_path], [target])


def cmd_synth(args) -> None:
    out = Path(args.out)
    if args.customers < 1 or args.days < 1:
        raise CliError("--customers and --days must be positive", EXIT_USAGE, "usage")
    if args.profiles:
        profiles = ProfileSet.from_json(_require(args.profiles, "--profiles").read_text(encoding="utf-8"))
    else:
        try:
            profiles = preset(args.preset)
        except ValueError as exc:
            raise CliError(str(exc), EXIT_USAGE, "usage") from None
    gender_mix = _parse_mix(args.gender_mix, ("Male", "Female")) if args.gender_mix else None
    paths = generate(out, profiles, args.customers, args.days, args.seed, gender_mix=gender_mix)
    (out / "profiles.json").write_text(profiles.to_json(), encoding="utf-8")
    _append_manifest(out, "synth", _config(args), [], [*paths.values(), out / "profiles.json"])


def _parse_mix(text: str, keys) -> dict[str, float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        vals = []
    if len(vals) != len(keys):
        raise CliError(f"mix must list {len(keys)} comma-separated weights", EXIT_USAGE, "usage")
    return dict(zip(keys, vals))


def cmd_catalog(args) -> None:
    cat = catalog()
    if args.jsonl:
        sys.stdout.write(cat.to_jsonl())
    else:
        for name in cat.columns():
            print(name)


# --- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cdrdemo", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out=True):
        sp.add_argument("--config", help="JSON file of option defaults; explicit flags win")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--seed", type=int, default=0)
        if out:
            sp.add_argument("--out", required=True)

    def inputs(sp):
        for name in ("cdr", "cells", "services", "contracts", "labels"):
            sp.add_argument(f"--{name}")

    sp = sub.add_parser("ingest", help="parse inputs and write the reject log")
    common(sp)
    inputs(sp)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("featurize", help="write the per-customer feature matrix")
    common(sp)
    inputs(sp)
    sp.set_defaults(func=cmd_featurize)

    sp = sub.add_parser("train", help="fit a model on the training split")
    common(sp)
    sp.add_argument("--features", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--target", choices=("gender", "age"), default="gender")
    sp.add_argument("--model", choices=("gbt", "logreg"), default="gbt")
    sp.add_argument("--split", type=float, default=0.8)
    sp.add_argument("--zscore", action="store_true")
    sp.add_argument("--pca", type=int, metavar="K")
    sp.add_argument("--outliers", choices=("keep", "drop"), default="keep")
    for flag, typ in (
        ("--max-depth", int), ("--eta", float), ("--gamma", float), ("--min-child-weight", float),
        ("--lambda", float), ("--alpha", float), ("--nrounds", int), ("--subsample", float),
        ("--early-stopping", int),
    ):
        dest = "reg_lambda" if flag == "--lambda" else None
        sp.add_argument(flag, type=typ, **({"dest": dest} if dest else {}))
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="score the held-out split, optionally with k-fold CV")
    common(sp)
    sp.add_argument("--model-file", required=True)
    sp.add_argument("--features", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--split-file")
    sp.add_argument("--target", choices=("gender", "age"), default="gender")
    sp.add_argument("--folds", type=int, nargs="?", const=10, default=0, help="run stratified k-fold CV (10 if no value)")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("importance", help="top-N features by total split gain")
    common(sp)
    sp.add_argument("--model-file", required=True)
    sp.add_argument("--top", type=int, default=20)
    sp.set_defaults(func=cmd_importance)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    common(sp)
    sp.add_argument("--customers", type=int, default=1000)
    sp.add_argument("--days", type=int, default=60)
    sp.add_argument("--preset", default="separable")
    sp.add_argument("--profiles", help="profile JSON document instead of a preset")
    sp.add_argument("--gender-mix", help="Male,Female weights, e.g. 0.64,0.36")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("catalog", help="print the feature catalog")
    common(sp, out=False)
    sp.add_argument("--jsonl", action="store_true")
    sp.set_defaults(func=cmd_catalog)
    return p


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            overrides = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"--config: {exc}", EXIT_USAGE, "usage") from None
        if not isinstance(overrides, dict):
            raise CliError("--config must hold a JSON object", EXIT_USAGE, "usage")
        subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        sub = subparsers.choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise CliError(f"--config: unknown options {unknown}", EXIT_USAGE, "usage")
        sub.set_defaults(**overrides)
        args = parser.parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        raise CliError("--threads must be >= 1", EXIT_USAGE, "usage")
    return args


def main(argv: Sequence[str] | None = None) -> int:
    command = None
    try:
        args = parse_args(argv)
        command = args.command
        args.func(args)
        return 0
    except CliError as exc:
        code, kind, msg = exc.code, exc.kind, str(exc)
    except IngestError as exc:
        code, kind, msg = EXIT_INPUT, "input", str(exc)
    except ModelFormatError as exc:
        code, kind, msg = EXIT_MODEL, "model", str(exc)
    except (OSError, ValueError) as exc:
        code, kind, msg = 1, type(exc).__name__, str(exc)
    line = {"error": kind, "command": command, "exit_code": code, "message": " ".join(msg.split())}
    sys.stderr.write(json.dumps(line) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
