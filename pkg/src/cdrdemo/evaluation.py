"""Classification metrics, data splits and evaluation reports."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Callable, Sequence

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.tn + self.fp

    @property
    def total(self) -> int:
        return self.positives + self.negatives

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        return self.tp / self.positives if self.positives else 0.0

    @classmethod
    def from_predictions(cls, predictions, labels, positive) -> "ConfusionCounts":
        p = np.asarray(predictions) == positive
        t = np.asarray(labels) == positive
        if p.shape != t.shape:
            raise ValueError("predictions and labels differ in length")
        return cls(
            int(np.sum(p & t)), int(np.sum(~p & ~t)), int(np.sum(p & ~t)), int(np.sum(~p & t))
        )


def accuracy(counts: ConfusionCounts) -> float:
    if counts.total == 0:
        raise ValueError("accuracy is undefined on zero rows")
    return (counts.tp + counts.tn) / counts.total


def accuracy_score(predictions, labels) -> float:
    p, t = np.asarray(predictions), np.asarray(labels)
    if p.shape != t.shape:
        raise ValueError("predictions and labels differ in length")
    if p.size == 0:
        raise ValueError("accuracy is undefined on zero rows")
    return float(np.mean(p == t))


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve by the trapezoid rule.

    Rows with equal scores form a single step of the curve, which makes the
    result equal to the concordance probability with ties counted as half.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), s.size - 1]
    tps = np.cumsum(y)[last]
    fps = (last + 1) - tps
    tpr = np.r_[0, tps] / n_pos
    fpr = np.r_[0, fps] / n_neg
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))


def f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def per_class_f1(predictions, labels, cls) -> float:
    c = ConfusionCounts.from_predictions(predictions, labels, cls)
    return f1(c.precision, c.recall)


def mean_f1(predictions, labels, classes: Sequence = ("A", "B", "C")) -> float:
    return float(np.mean([per_class_f1(predictions, labels, c) for c in classes]))


# --- splits ---------------------------------------------------------------


def _class_groups(labels) -> list[np.ndarray]:
    y = np.asarray(labels)
    return [np.flatnonzero(y == c) for c in sorted(set(y.tolist()))]


def stratified_split(labels, fraction: float = 0.8, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Row indices (train, test); each class keeps ``fraction`` of its rows in train."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for rows in _class_groups(labels):
        rows = rng.permutation(rows)
        cut = int(round(fraction * len(rows)))
        train.append(rows[:cut])
        test.append(rows[cut:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def stratified_folds(labels, k: int = 10, seed: int = 0) -> list[np.ndarray]:
    """Stratified, disjoint folds covering all rows.

    Classes are shuffled separately and dealt round-robin, so fold sizes
    differ by at most one overall and per class.
    """
    y = np.asarray(labels)
    if not 2 <= k <= len(y):
        raise ValueError(f"need 2 <= k <= rows, got k={k}")
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(rows) for rows in _class_groups(y)])
    return [np.sort(order[i::k]) for i in range(k)]


@dataclass
class CvResult:
    folds: list[dict[str, float]]

    @property
    def mean(self) -> dict[str, float]:
        keys = self.folds[0].keys() if self.folds else []
        return {k: float(np.mean([f[k] for f in self.folds])) for k in keys}

    def to_dict(self) -> dict:
        keys = list(self.folds[0].keys()) if self.folds else []
        return {"mean": self.mean, "per_fold": {k: [f[k] for f in self.folds] for k in keys}}


def kfold_cv(
    X,
    labels,
    trainer: Callable[[np.ndarray, np.ndarray, int], object],
    scorer: Callable[[object, np.ndarray, np.ndarray], dict[str, float]],
    k: int = 10,
    seed: int = 0,
) -> CvResult:
    """Train on k-1 folds, score on the held-out one, for every fold.

    ``trainer(X_train, y_train, fold)`` returns a model and
    ``scorer(model, X_test, y_test)`` returns a metric dict.
    """
    X = np.asarray(X)
    y = np.asarray(labels)
    folds = stratified_folds(y, k, seed)
    out = []
    for i, test in enumerate(folds):
        mask = np.ones(len(y), dtype=bool)
        mask[test] = False
        model = trainer(X[mask], y[mask], i)
        out.append(scorer(model, X[test], y[test]))
    return CvResult(out)


# --- reports --------------------------------------------------------------


@dataclass
class EvalReport:
    target: str
    model: str
    n_test: int
    accuracy: float
    auc: float | None = None
    per_class: dict[str, dict[str, float]] = field(default_factory=dict)
    mean_f1: float | None = None
    positive_class: str | None = None
    cv: dict | None = None

    def to_dict(self) -> dict:
        d = {
            "target": self.target,
            "model": self.model,
            "n_test": self.n_test,
            "accuracy": self.accuracy,
            "per_class": self.per_class,
        }
        if self.auc is not None:
            d["auc"] = self.auc
            d["f1"] = self.per_class[self.positive_class]["f1"]
            d["positive_class"] = self.positive_class
        if self.mean_f1 is not None:
            d["mean_f1"] = self.mean_f1
        if self.cv is not None:
            d["cv"] = self.cv
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def to_text(self, classification_seconds: float | None = None) -> str:
        lines = [f"target: {self.target}    model: {self.model}    test rows: {self.n_test}", ""]
        lines.append(f"{'metric':<12}{'value':>10}")
        lines.append(f"{'accuracy':<12}{self.accuracy:>10.4f}")
        if self.auc is not None:
            lines.append(f"{'auc':<12}{self.auc:>10.4f}")
            lines.append(f"{'f1':<12}{self.per_class[self.positive_class]['f1']:>10.4f}  (positive: {self.positive_class})")
        if self.mean_f1 is not None:
            lines.append(f"{'mean f1':<12}{self.mean_f1:>10.4f}")
        lines += ["", f"{'class':<10}{'precision':>10}{'recall':>10}{'f1':>10}{'support':>9}"]
        for c, m in self.per_class.items():
            lines.append(f"{c:<10}{m['precision']:>10.4f}{m['recall']:>10.4f}{m['f1']:>10.4f}{int(m['support']):>9}")
        if self.cv is not None:
            lines += ["", f"{len(next(iter(self.cv['per_fold'].values())))}-fold CV means:"]
            for k, v in self.cv["mean"].items():
                lines.append(f"  {k:<10}{v:>10.4f}")
        if classification_seconds is not None:
            lines += ["", f"classification time: {classification_seconds:.3f} s (this machine; not comparable across hardware)"]
        return "\n".join(lines) + "\n"


def evaluate_predictions(
    target: str,
    model: str,
    proba: np.ndarray,
    labels,
    classes: Sequence,
    positive_class=None,
) -> EvalReport:
    """Build a report from class probabilities (columns ordered as ``classes``).

    Binary targets report AUC and the F1 of ``positive_class``; targets
    with three or more classes report mean F1.
    """
    proba = np.asarray(proba, dtype=float)
    y = np.asarray(labels)
    classes = list(classes)
    pred = np.asarray(classes, dtype=object)[proba.argmax(axis=1)]
    per_class = {}
    for c in classes:
        cc = ConfusionCounts.from_predictions(pred, y, c)
        per_class[str(c)] = {
            "precision": cc.precision,
            "recall": cc.recall,
            "f1": f1(cc.precision, cc.recall),
            "support": float(cc.positives),
        }
    rep = EvalReport(target, model, int(len(y)), accuracy_score(pred, y.astype(object)), per_class=per_class)
    if len(classes) == 2:
        pos = classes[1] if positive_class is None else positive_class
        rep.positive_class = str(pos)
        rep.auc = roc_auc(proba[:, classes.index(pos)], y == pos)
    else:
        rep.mean_f1 = mean_f1(pred, y.astype(object), classes)
    return rep


def write_importance_csv(sink: IO[str] | str | Path, ranked: Sequence[tuple[str, float]], top: int | None = 20) -> None:
    if isinstance(sink, (str, Path)):
        with open(sink, "w", newline="", encoding="utf-8") as fh:
            write_importance_csv(fh, ranked, top)
        return
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(["rank", "feature", "gain"])
    for i, (name, gain) in enumerate(ranked[:top] if top else ranked, start=1):
        w.writerow([i, name, repr(float(gain))])
