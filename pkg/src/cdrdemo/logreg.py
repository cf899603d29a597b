"""Logistic-regression baseline trained by full-batch gradient descent.

Three or more classes are handled one-vs-rest; predicted probabilities are
the per-class sigmoids renormalised to sum to one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .boosting import _check_matrix, _encode_labels, logistic_loss, sigmoid


@dataclass
class LinearModel:
    weights: np.ndarray  # (n_outputs, n_features)
    intercept: np.ndarray  # (n_outputs,)
    classes: list
    seed: int = 0
    feature_names: list[str] | None = None

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]


def _targets(codes: np.ndarray, n_classes: int) -> np.ndarray:
    if n_classes == 2:
        return (codes == 1).astype(float)[:, None]
    out = np.zeros((len(codes), n_classes))
    out[np.arange(len(codes)), codes] = 1.0
    return out


def train_logreg(
    X,
    y,
    learning_rate: float = 0.1,
    iterations: int = 500,
    seed: int = 0,
    classes: Sequence | None = None,
    feature_names: Sequence[str] | None = None,
    loss_trace: list | None = None,
) -> LinearModel:
    """Fit by gradient descent on the mean cross-entropy.

    Weights start at zero, so the result depends only on the data; ``seed``
    is recorded for provenance. When ``loss_trace`` is given, the mean loss
    before each update (and after the last one) is appended to it.
    """
    X = _check_matrix(X)
    if not np.isfinite(X).all():
        raise ValueError("feature matrix contains non-finite values")
    codes, classes = _encode_labels(y, classes)
    if len(set(codes.tolist())) < 2:
        raise ValueError("training labels contain a single class")
    Y = _targets(codes, len(classes))
    n, d = X.shape
    W = np.zeros((Y.shape[1], d))
    b = np.zeros(Y.shape[1])
    for _ in range(iterations):
        z = X @ W.T + b
        if loss_trace is not None:
            loss_trace.append(float(logistic_loss(z, Y).mean()))
        err = sigmoid(z) - Y
        W -= learning_rate * (err.T @ X) / n
        b -= learning_rate * err.mean(axis=0)
    if loss_trace is not None:
        loss_trace.append(float(logistic_loss(X @ W.T + b, Y).mean()))
    return LinearModel(W, b, classes, seed, list(feature_names) if feature_names else None)


def predict_logreg(model: LinearModel, X) -> np.ndarray:
    X = _check_matrix(X, model.n_features)
    p = sigmoid(X @ model.weights.T + model.intercept)
    if p.shape[1] == 1:
        return np.column_stack((1.0 - p[:, 0], p[:, 0]))
    return p / p.sum(axis=1, keepdims=True)
