"""Optional feature-matrix transforms: standard scores, PCA and outlier flags."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Sequence

import numpy as np

TRANSFORM_FORMAT = "cdrdemo-transform"
TRANSFORM_VERSION = 1


def _matrix(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError("expected a 2-D feature matrix")
    return M


def _check_width(M: np.ndarray, d: int) -> None:
    if M.shape[1] != d:
        raise ValueError(f"matrix width {M.shape[1]} does not match fitted width {d}")


# --- z-score --------------------------------------------------------------


@dataclass
class ZScoreParams:
    mean: np.ndarray
    std: np.ndarray  # population std

    @property
    def constant(self) -> np.ndarray:
        return self.std == 0

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ZScoreParams":
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float))


def zscore_fit(M) -> ZScoreParams:
    M = _matrix(M)
    if M.shape[0] == 0:
        raise ValueError("cannot fit on zero rows")
    mean = M.mean(axis=0)
    std = np.sqrt(((M - mean) ** 2).mean(axis=0))
    # a constant column can pick up a rounding-level std from its mean
    std[M.min(axis=0) == M.max(axis=0)] = 0.0
    return ZScoreParams(mean, std)


def zscore_apply(params: ZScoreParams, M) -> np.ndarray:
    """``(x - mean) / std`` per column; constant columns become 0."""
    M = _matrix(M)
    _check_width(M, len(params.mean))
    safe = np.where(params.constant, 1.0, params.std)
    out = (M - params.mean) / safe
    out[:, params.constant] = 0.0
    return out


# --- PCA ------------------------------------------------------------------


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (k, d), orthonormal rows
    explained_variance: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcaModel":
        return cls(
            np.array(d["mean"], dtype=float),
            np.array(d["components"], dtype=float).reshape(-1, len(d["mean"])),
            np.array(d["explained_variance"], dtype=float),
        )


def pca_fit(M, k: int) -> PcaModel:
    """Top-``k`` principal directions of the centred matrix.

    Variances use the N-1 denominator. Each component's sign is fixed so
    that its largest-magnitude loading is positive.
    """
    M = _matrix(M)
    n, d = M.shape
    if not 1 <= k <= min(n - 1, d):
        raise ValueError(f"k={k} must lie in [1, min(rows-1, features)] = [1, {min(n - 1, d)}]")
    mean = M.mean(axis=0)
    _, s, vt = np.linalg.svd(M - mean, full_matrices=False)
    comps = vt[:k]
    pivot = np.abs(comps).argmax(axis=1)
    comps = comps * np.sign(comps[np.arange(k), pivot])[:, None]
    return PcaModel(mean, comps, (s[:k] ** 2) / (n - 1))


def pca_apply(model: PcaModel, M) -> np.ndarray:
    M = _matrix(M)
    _check_width(M, len(model.mean))
    return (M - model.mean) @ model.components.T


def pca_reconstruct(model: PcaModel, Z) -> np.ndarray:
    return np.asarray(Z, dtype=float) @ model.components + model.mean


# --- k-means --------------------------------------------------------------


@dataclass
class KMeansModel:
    centroids: np.ndarray
    labels: np.ndarray
    seed: int
    inertia_trace: list[float] = field(default_factory=list)
    n_iter: int = 0

    @property
    def inertia(self) -> float:
        return self.inertia_trace[-1]


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [int(rng.integers(n))]
    closest = _sq_dists(X, X[centers])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # fewer distinct points than k: take any unused row
            unused = np.setdiff1d(np.arange(n), centers)
            nxt = int(unused[0])
        else:
            nxt = int(rng.choice(n, p=closest / total))
        centers.append(nxt)
        closest = np.minimum(closest, _sq_dists(X, X[[nxt]])[:, 0])
    return X[centers].copy()


def kmeans(M, k: int, seed: int = 0, max_iter: int = 100) -> KMeansModel:
    """Lloyd's algorithm from k-means++ seeds.

    An empty cluster is re-seeded at the point farthest from its current
    centroid. The returned labels always point to the nearest centroid
    (lowest index on ties).
    """
    X = _matrix(M)
    n = X.shape[0]
    if k < 1 or n < k:
        raise ValueError(f"need 1 <= k <= rows, got k={k}, rows={n}")
    rng = np.random.default_rng(seed)
    C = _plus_plus(X, k, rng)
    labels = None
    trace: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        D = _sq_dists(X, C)
        new = D.argmin(axis=1)
        trace.append(float(D[np.arange(n), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=k)
        for j in range(k):
            if counts[j]:
                C[j] = X[labels == j].mean(axis=0)
        spread = D[np.arange(n), labels].copy()
        for j in np.flatnonzero(counts == 0):
            far = int(spread.argmax())
            C[j] = X[far]
            spread[far] = -1.0
    D = _sq_dists(X, C)
    labels = D.argmin(axis=1)
    final = float(D[np.arange(n), labels].sum())
    if final != trace[-1]:
        trace.append(final)
    return KMeansModel(C, labels, seed, trace, it)


# --- outliers -------------------------------------------------------------

DURATION_RULE = "duration rule"
COUNT_RULE = "count rule"
CLUSTER_RULE = "cluster distance"


@dataclass(frozen=True)
class OutlierRules:
    max_call_minutes_per_day: float = 120.0
    max_calls_per_day: float = 60.0
    duration_column: str = "call_any_duration_daily_mean_all"
    count_column: str = "call_any_count_daily_mean_all"


@dataclass(frozen=True)
class KMeansConfig:
    enabled: bool = True
    k: int = 8
    seed: int = 0
    max_iter: int = 100
    percentile: float = 99.0


@dataclass(frozen=True)
class OutlierFlag:
    gsm: str
    flagged: bool
    reasons: tuple[str, ...]


def detect_outliers(
    features,
    columns: Sequence[str],
    gsms: Sequence[str],
    rules: OutlierRules = OutlierRules(),
    kmeans_config: KMeansConfig = KMeansConfig(),
) -> list[OutlierFlag]:
    """Flag customers by the usage rules and by distance to their cluster.

    Clustering runs on z-scored features; a customer is a cluster outlier
    when their distance to the assigned centroid is strictly above the
    configured percentile of all such distances.
    """
    M = _matrix(features)
    columns = list(columns)
    if M.shape != (len(gsms), len(columns)):
        raise ValueError("feature matrix shape does not match gsms/columns")
    for name in (rules.duration_column, rules.count_column):
        if name not in columns:
            raise ValueError(f"feature matrix lacks column {name!r}")
    dur = M[:, columns.index(rules.duration_column)]
    cnt = M[:, columns.index(rules.count_column)]
    reasons: list[list[str]] = [[] for _ in gsms]
    for i in np.flatnonzero(dur > rules.max_call_minutes_per_day * 60.0):
        reasons[i].append(DURATION_RULE)
    for i in np.flatnonzero(cnt > rules.max_calls_per_day):
        reasons[i].append(COUNT_RULE)
    cfg = kmeans_config
    if cfg.enabled and len(gsms) >= max(cfg.k, 2):
        Z = zscore_apply(zscore_fit(M), M)
        model = kmeans(Z, cfg.k, cfg.seed, cfg.max_iter)
        dist = np.sqrt(((Z - model.centroids[model.labels]) ** 2).sum(axis=1))
        cut = np.percentile(dist, cfg.percentile)
        for i in np.flatnonzero(dist > cut):
            reasons[i].append(CLUSTER_RULE)
    return [OutlierFlag(g, bool(r), tuple(r)) for g, r in zip(gsms, reasons)]


def write_outlier_report(sink: IO[str] | str | Path, flags: Sequence[OutlierFlag]) -> None:
    if isinstance(sink, (str, Path)):
        with open(sink, "w", newline="", encoding="utf-8") as fh:
            write_outlier_report(fh, flags)
        return
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(["gsm", "flagged", "reasons"])
    for f in flags:
        w.writerow([f.gsm, int(f.flagged), ";".join(f.reasons)])


# --- persistence ----------------------------------------------------------


def transforms_to_json(zscore: ZScoreParams | None = None, pca: PcaModel | None = None) -> str:
    doc = {
        "format": TRANSFORM_FORMAT,
        "version": TRANSFORM_VERSION,
        "zscore": zscore.to_dict() if zscore else None,
        "pca": pca.to_dict() if pca else None,
    }
    return json.dumps(doc, sort_keys=True) + "\n"


def transforms_from_json(text: str) -> tuple[ZScoreParams | None, PcaModel | None]:
    doc = json.loads(text)
    if doc.get("format") != TRANSFORM_FORMAT or doc.get("version") != TRANSFORM_VERSION:
        raise ValueError("not a supported transform document")
    z = ZScoreParams.from_dict(doc["zscore"]) if doc.get("zscore") else None
    p = PcaModel.from_dict(doc["pca"]) if doc.get("pca") else None
    return z, p
