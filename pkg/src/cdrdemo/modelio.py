"""Versioned JSON model documents.

Floats are written with ``repr`` precision, so a loaded model predicts
bit-identically to the one that was saved.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import IO

import numpy as np

from .boosting import GbtParams, Tree, TreeEnsemble, feature_importance
from .logreg import LinearModel

FORMAT = "cdrdemo-model"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


def model_to_dict(model: TreeEnsemble | LinearModel) -> dict:
    doc = {"format": FORMAT, "version": FORMAT_VERSION}
    if isinstance(model, TreeEnsemble):
        doc.update(
            type="gbt",
            objective=model.params.objective.value,
            params=model.params.to_dict(),
            classes=list(model.classes),
            n_features=model.n_features,
            base_score=model.base_score,
            feature_names=model.feature_names,
            rounds=[[t.to_dict() for t in trees] for trees in model.rounds],
        )
        names = model.feature_names or [str(f) for f in range(model.n_features)]
        doc["gain_ledger"] = [[names[f], g] for f, g in feature_importance(model) if g != 0.0]
    elif isinstance(model, LinearModel):
        doc.update(
            type="logreg",
            classes=list(model.classes),
            n_features=model.n_features,
            seed=model.seed,
            feature_names=model.feature_names,
            weights=model.weights.tolist(),
            intercept=model.intercept.tolist(),
        )
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    return doc


def model_from_dict(doc: dict) -> TreeEnsemble | LinearModel:
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ModelFormatError("not a cdrdemo model document")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')!r}")
    try:
        if doc["type"] == "gbt":
            ens = TreeEnsemble(
                params=GbtParams(**doc["params"]),
                classes=list(doc["classes"]),
                n_features=int(doc["n_features"]),
                base_score=float(doc["base_score"]),
                feature_names=doc.get("feature_names"),
            )
            ens.rounds = [[Tree.from_dict(t) for t in trees] for trees in doc["rounds"]]
            return ens
        if doc["type"] == "logreg":
            return LinearModel(
                weights=np.array(doc["weights"], dtype=float).reshape(-1, int(doc["n_features"])),
                intercept=np.array(doc["intercept"], dtype=float),
                classes=list(doc["classes"]),
                seed=int(doc["seed"]),
                feature_names=doc.get("feature_names"),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from exc
    raise ModelFormatError(f"unknown model type {doc.get('type')!r}")


def save_model(model, sink: IO[str] | str | Path, extra: dict | None = None) -> None:
    """Write ``model`` (plus optional top-level ``extra`` keys) as JSON."""
    doc = model_to_dict(model)
    if extra:
        doc.update(extra)
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text, encoding="utf-8")
    else:
        sink.write(text)


def load_document(source: IO[str] | str | Path) -> dict:
    try:
        if isinstance(source, (str, Path)):
            text = Path(source).read_text(encoding="utf-8")
        else:
            text = source.read()
        return json.loads(text)
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot read model: {exc}") from exc


def load_model(source: IO[str] | str | Path) -> TreeEnsemble | LinearModel:
    return model_from_dict(load_document(source))
