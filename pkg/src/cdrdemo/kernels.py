"""Scalar statistics used to build per-customer features.

All kernels map degenerate inputs (empty sequences, zero denominators) to 0
so that feature vectors stay dense and finite.
"""

from __future__ import annotations

import math
from typing import Iterable, Mapping, Sequence

import numpy as np

EARTH_RADIUS_KM = 6371.0


def probability_share(part_count: int, total_count: int) -> float:
    """Fraction of events falling in a window, e.g. SMSs sent on holidays."""
    if part_count < 0 or total_count < 0:
        raise ValueError("counts must be non-negative")
    if part_count > total_count:
        raise ValueError(f"part {part_count} exceeds total {total_count}")
    if total_count == 0:
        return 0.0
    return part_count / total_count


def percentage(part: float, total: float) -> float:
    if part < 0 or total < 0:
        raise ValueError("percentage inputs must be non-negative")
    if part > total:
        raise ValueError(f"part {part} exceeds total {total}")
    if total == 0:
        return 0.0
    return 100.0 * part / total


def sample_std(values: Sequence[float] | np.ndarray) -> float:
    """Standard deviation with the N-1 denominator; 0 for fewer than two values."""
    arr = np.asarray(values, dtype=float)
    if arr.size < 2:
        return 0.0
    return float(arr.std(ddof=1))


def shannon_entropy(weights: Mapping[object, float] | Iterable[float] | np.ndarray) -> float:
    """Entropy in bits of the distribution obtained by normalising ``weights``.

    Accepts a mapping (key -> weight) or a plain sequence of weights. Zero
    weights contribute nothing; an all-zero input has entropy 0.
    """
    if isinstance(weights, Mapping):
        weights = list(weights.values())
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        return 0.0
    if np.any(w < 0):
        raise ValueError("entropy weights must be non-negative")
    return entropy_of_counts(w)


def entropy_of_counts(w: np.ndarray) -> float:
    # unchecked fast path for internal callers
    total = w.sum()
    if total <= 0:
        return 0.0
    p = w / total
    p = p[p > 0]
    h = -float(np.dot(p, np.log2(p)))
    return h if h > 0.0 else 0.0


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in km; broadcasts over numpy arrays."""
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    dphi = phi2 - phi1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def radius_of_gyration(lats, lons) -> float:
    """Root-mean-square haversine distance (km) of events to their centroid.

    The centroid is the plain mean of latitudes and longitudes, which is
    adequate at city scale. Repeated positions count once per event.
    """
    lat = np.asarray(lats, dtype=float)
    lon = np.asarray(lons, dtype=float)
    if lat.size == 0:
        return 0.0
    d = haversine_km(lat, lon, lat.mean(), lon.mean())
    return math.sqrt(float(np.mean(d * d)))
