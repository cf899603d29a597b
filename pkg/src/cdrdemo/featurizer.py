"""Per-customer feature vectors built from a :class:`CustomerTimeline`.

The catalog is generated from a small grammar so that its order is fixed
for a given engine version:

* daily statistics: {mean, std} of a per-day series for every
  (event kind, direction) count selector and every call-duration selector,
  in six civil-time windows;
* probability shares of each count selector falling in each non-``all``
  window;
* per-call duration mean/std, contact entropies (duration-weighted and
  count-weighted), contact counts and transactions-per-contact;
* spatial features (distinct sites per day, radius of gyration, antenna
  entropies, home area type, share of events away from home);
* 13 service flags and 2 one-hot contract categoricals.

Workdays are Sunday to Thursday, daytime is 09:00:00-16:59:59 civil time.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .ingest import (
    SECONDS_PER_DAY,
    SERVICE_FLAGS,
    AreaType,
    CellSite,
    CustomerTimeline,
    Direction,
    EventKind,
)
from .kernels import entropy_of_counts, radius_of_gyration

ENGINE_VERSION = "1"

DAY_START_HOUR = 9
DAY_END_HOUR = 17  # exclusive
# weekday numbering Monday=0; 1970-01-01 was a Thursday
_EPOCH_WEEKDAY = 3
HOLIDAY_WEEKDAYS = (4, 5)  # Friday, Saturday

TARIFF_LEVELS = ("BASIC", "YOUTH", "FAMILY", "BUSINESS", "UNLIMITED", "UNKNOWN", "OTHER")
GSM_TYPE_LEVELS = ("PREPAID", "POSTPAID", "3G", "4G", "UNKNOWN", "OTHER")
AREA_LEVELS = tuple(a.value for a in AreaType)


class Family(str, Enum):
    BEHAVIORAL = "Behavioral"
    SOCIAL = "Social"
    SPATIAL = "Spatial"
    TEMPORAL = "Temporal"
    SERVICES = "Services"
    CONTRACT = "Contract"


class Kind(str, Enum):
    STATISTICAL = "Statistical"
    CATEGORICAL = "Categorical"


class Window(str, Enum):
    ALL = "all"
    DAYTIME = "day"
    NIGHT = "night"
    WORKDAY = "workday"
    HOLIDAY = "holiday"
    WORKTIME = "worktime"


class Quantity(str, Enum):
    COUNT = "count"
    TOTAL_DURATION = "duration"


WINDOWS = tuple(Window)
# count selectors: (kind, direction); "txn" = calls and SMS together
COUNT_SELECTORS = tuple((k, d) for k in ("call", "sms", "txn") for d in ("in", "out", "any"))
DURATION_SELECTORS = tuple(("call", d) for d in ("in", "out", "any"))
DIRS = ("in", "out", "any")
ANTENNA_WINDOWS = (Window.NIGHT, Window.DAYTIME, Window.WORKDAY, Window.HOLIDAY)

# combo code = kind * 2 + direction: call_in, call_out, sms_in, sms_out
_KIND_COMBOS = {"call": (0, 1), "sms": (2, 3), "txn": (0, 1, 2, 3)}
_DIR_COMBOS = {"in": (0, 2), "out": (1, 3), "any": (0, 1, 2, 3)}


def _selector_matrix(selectors) -> np.ndarray:
    m = np.zeros((4, len(selectors)))
    for j, (k, d) in enumerate(selectors):
        for c in set(_KIND_COMBOS[k]) & set(_DIR_COMBOS[d]):
            m[c, j] = 1.0
    return m


_COUNT_SEL = _selector_matrix(COUNT_SELECTORS)
_DUR_SEL = _selector_matrix(DURATION_SELECTORS)


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    family: Family
    kind: Kind
    levels: tuple[str, ...] = ()

    def columns(self) -> list[str]:
        if self.levels:
            return [f"{self.name}={lvl}" for lvl in self.levels]
        return [self.name]


@dataclass(frozen=True)
class FeatureCatalog:
    entries: tuple[CatalogEntry, ...]
    version: str = ENGINE_VERSION

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def columns(self) -> list[str]:
        return [c for e in self.entries for c in e.columns()]

    def to_jsonl(self, sink: IO[str]) -> None:
        for e in self.entries:
            row = {"name": e.name, "family": e.family.value, "kind": e.kind.value}
            if e.levels:
                row["levels"] = list(e.levels)
            sink.write(json.dumps(row) + "\n")


def _build_catalog() -> FeatureCatalog:
    B, S, SP, T = Family.BEHAVIORAL, Family.SOCIAL, Family.SPATIAL, Family.TEMPORAL
    ST, CAT = Kind.STATISTICAL, Kind.CATEGORICAL
    e: list[CatalogEntry] = []
    for w in WINDOWS:
        fam = B if w is Window.ALL else T
        for k, d in COUNT_SELECTORS:
            for stat in ("mean", "std"):
                e.append(CatalogEntry(f"{k}_{d}_count_daily_{stat}_{w.value}", fam, ST))
        for k, d in DURATION_SELECTORS:
            for stat in ("mean", "std"):
                e.append(CatalogEntry(f"{k}_{d}_duration_daily_{stat}_{w.value}", fam, ST))
    for w in WINDOWS[1:]:
        for k, d in COUNT_SELECTORS:
            e.append(CatalogEntry(f"{k}_{d}_share_{w.value}", T, ST))
    for d in DIRS:
        for stat in ("mean", "std"):
            e.append(CatalogEntry(f"call_{d}_duration_per_call_{stat}", B, ST))
    for d in DIRS:
        e.append(CatalogEntry(f"call_{d}_duration_entropy", B, ST))
    for k, d in COUNT_SELECTORS:
        e.append(CatalogEntry(f"{k}_{d}_contact_entropy", S, ST))
    for k, d in COUNT_SELECTORS:
        e.append(CatalogEntry(f"{k}_{d}_contacts", S, ST))
    for d in DIRS:
        for stat in ("mean", "std"):
            e.append(CatalogEntry(f"txn_{d}_per_contact_{stat}", S, ST))
    e += [
        CatalogEntry("sites_daily_mean", SP, ST),
        CatalogEntry("sites_daily_mean_holiday", SP, ST),
        CatalogEntry("gyration_km", SP, ST),
        CatalogEntry("gyration_km_holiday", SP, ST),
    ]
    for w in ANTENNA_WINDOWS:
        e.append(CatalogEntry(f"antenna_entropy_{w.value}", SP, ST))
    e += [
        CatalogEntry("home_area_type", SP, CAT, AREA_LEVELS),
        CatalogEntry("pct_outside_home", SP, ST),
        CatalogEntry("distinct_sites", SP, ST),
    ]
    for flag in SERVICE_FLAGS:
        e.append(CatalogEntry(f"service_{flag}", Family.SERVICES, CAT))
    e += [
        CatalogEntry("tariff_type", Family.CONTRACT, CAT, TARIFF_LEVELS),
        CatalogEntry("gsm_type", Family.CONTRACT, CAT, GSM_TYPE_LEVELS),
    ]
    return FeatureCatalog(tuple(e))


_CATALOG = _build_catalog()


def catalog() -> FeatureCatalog:
    return _CATALOG


# ---------------------------------------------------------------------------
# time windows


@dataclass(frozen=True)
class TimeWindowFlags:
    is_workday: bool
    is_holiday: bool
    is_daytime: bool
    is_night: bool
    is_worktime: bool


def classify_instant(ts: datetime) -> TimeWindowFlags:
    holiday = ts.weekday() in HOLIDAY_WEEKDAYS
    daytime = DAY_START_HOUR <= ts.hour < DAY_END_HOUR
    return TimeWindowFlags(
        is_workday=not holiday,
        is_holiday=holiday,
        is_daytime=daytime,
        is_night=not daytime,
        is_worktime=daytime and not holiday,
    )


def _window_masks(ts: np.ndarray) -> dict[Window, np.ndarray]:
    days = ts // SECONDS_PER_DAY
    hour = (ts - days * SECONDS_PER_DAY) // 3600
    holiday = np.isin((days + _EPOCH_WEEKDAY) % 7, HOLIDAY_WEEKDAYS)
    daytime = (hour >= DAY_START_HOUR) & (hour < DAY_END_HOUR)
    return {
        Window.ALL: np.ones(ts.shape, dtype=bool),
        Window.DAYTIME: daytime,
        Window.NIGHT: ~daytime,
        Window.WORKDAY: ~holiday,
        Window.HOLIDAY: holiday,
        Window.WORKTIME: daytime & ~holiday,
    }


def _code(value, enum_cls):
    if value is None or value == "any":
        return None
    return enum_cls(value)


def daily_series(
    timeline: CustomerTimeline,
    event_kind: EventKind | str | None = None,
    direction: Direction | str | None = None,
    window: Window | str = Window.ALL,
    quantity: Quantity | str = Quantity.COUNT,
) -> np.ndarray:
    """One value per calendar day of the observation window, zero-filled.

    ``event_kind``/``direction`` of ``None`` select any kind/direction.
    """
    kind = _code(event_kind, EventKind)
    direc = _code(direction, Direction)
    window = Window(window)
    quantity = Quantity(quantity)
    if quantity is Quantity.TOTAL_DURATION and kind is not EventKind.CALL:
        raise ValueError("total duration is only defined for calls")
    t = timeline.table
    m = _window_masks(t.ts)[window]
    if kind is not None:
        m &= t.kind == (0 if kind is EventKind.CALL else 1)
    if direc is not None:
        m &= t.direction == (0 if direc is Direction.IN else 1)
    day = t.ts[m] // SECONDS_PER_DAY - timeline.first_day
    weights = t.duration[m].astype(float) if quantity is Quantity.TOTAL_DURATION else None
    return np.bincount(day, weights=weights, minlength=timeline.n_days).astype(float)


# ---------------------------------------------------------------------------
# spatial lookup


@dataclass
class SpatialIndex:
    """Per-cell-code arrays aligned with one table's ``cell_vocab``."""

    site_code: np.ndarray  # -1 for cells missing from the cell database
    lat: np.ndarray
    lon: np.ndarray
    site_ids: list[str]  # sorted, so lower code = lexicographically smaller id
    site_area: list[str]
    cell_vocab: Sequence[str]

    @classmethod
    def build(cls, cells: Mapping[str, CellSite], cell_vocab: Sequence[str]) -> SpatialIndex:
        site_ids = sorted({c.site_id for c in cells.values()})
        site_pos = {s: i for i, s in enumerate(site_ids)}
        area: dict[str, str] = {}
        # site area type = area of its lexicographically smallest cell
        for cid in sorted(cells):
            area.setdefault(cells[cid].site_id, cells[cid].area_type.value)
        n = len(cell_vocab)
        code = np.full(n, -1, dtype=np.int64)
        lat = np.zeros(n)
        lon = np.zeros(n)
        for i, cid in enumerate(cell_vocab):
            c = cells.get(cid)
            if c is not None:
                code[i] = site_pos[c.site_id]
                lat[i] = c.latitude
                lon[i] = c.longitude
        return cls(code, lat, lon, site_ids, [area[s] for s in site_ids], cell_vocab)


def _spatial_for(timeline: CustomerTimeline, cells) -> SpatialIndex:
    if isinstance(cells, SpatialIndex):
        if cells.cell_vocab is timeline.table.cell_vocab:
            return cells
        raise ValueError("spatial index was built for a different cell vocabulary")
    return SpatialIndex.build(cells, timeline.table.cell_vocab)


def home_site(timeline: CustomerTimeline, cells) -> str | None:
    """Modal night-time site; ties go to the smallest site id."""
    idx = _spatial_for(timeline, cells)
    t = timeline.table
    site = idx.site_code[t.cell_code]
    m = _window_masks(t.ts)[Window.NIGHT] & (site >= 0)
    if not m.any():
        return None
    return idx.site_ids[int(np.argmax(np.bincount(site[m])))]


# ---------------------------------------------------------------------------
# extraction


def _mean_std(x: np.ndarray, axis=0):
    n = x.shape[axis]
    if n == 0:
        shape = list(x.shape)
        del shape[axis]
        return np.zeros(shape), np.zeros(shape)
    mean = x.mean(axis=axis)
    std = x.std(axis=axis, ddof=1) if n >= 2 else np.zeros_like(mean)
    return mean, std


def _column_entropies(x: np.ndarray) -> np.ndarray:
    """Entropy (bits) of each column of a non-negative weight matrix."""
    total = x.sum(axis=0)
    safe = np.where(total > 0, total, 1.0)
    p = x / safe
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    h = -terms.sum(axis=0)
    return np.where(h > 0, h, 0.0)


def _one_hot(value: str, levels: Sequence[str]) -> list[float]:
    v = value.upper()
    if v not in levels:
        v = "OTHER"
    return [1.0 if lvl == v else 0.0 for lvl in levels]


@dataclass(frozen=True)
class FeatureVector:
    gsm: str
    values: np.ndarray


def extract_features(timeline: CustomerTimeline, cells) -> FeatureVector:
    """Fill every catalog column for one customer; never produces NaN."""
    return FeatureVector(timeline.gsm, _extract(timeline, _spatial_for(timeline, cells)))


def _extract(tl: CustomerTimeline, idx: SpatialIndex) -> np.ndarray:
    t = tl.table
    n_days = tl.n_days
    ts = t.ts
    day = ts // SECONDS_PER_DAY - tl.first_day
    combo = t.kind.astype(np.int64) * 2 + t.direction
    is_call = t.kind == 0
    dur = np.where(is_call, t.duration, 0).astype(float)
    masks = _window_masks(ts)
    key = day * 4 + combo

    out: list[np.ndarray] = []

    # daily series per window: (n_days, 9 counts + 3 durations)
    totals = {}
    for w in WINDOWS:
        m = masks[w]
        k = key[m]
        cnt = np.bincount(k, minlength=n_days * 4).reshape(n_days, 4).astype(float)
        dsum = np.bincount(k, weights=dur[m], minlength=n_days * 4).reshape(n_days, 4)
        series = np.hstack((cnt @ _COUNT_SEL, dsum @ _DUR_SEL))
        mean, std = _mean_std(series)
        out.append(np.column_stack((mean, std)).ravel())
        totals[w] = series[:, :9].sum(axis=0)

    all_tot = totals[Window.ALL]
    safe = np.where(all_tot > 0, all_tot, 1.0)
    for w in WINDOWS[1:]:
        out.append(np.where(all_tot > 0, totals[w] / safe, 0.0))

    # per-call durations
    d = t.direction
    per_call = []
    for m in (is_call & (d == 0), is_call & (d == 1), is_call):
        mean, std = _mean_std(t.duration[m].astype(float))
        per_call += [float(mean), float(std)]
    out.append(np.array(per_call))

    # contacts
    if len(t):
        _, inv = np.unique(t.peer_code, return_inverse=True)
        n_peer = int(inv.max()) + 1
        pk = inv * 4 + combo
        pc = np.bincount(pk, minlength=n_peer * 4).reshape(n_peer, 4).astype(float)
        pd = np.bincount(pk, weights=dur, minlength=n_peer * 4).reshape(n_peer, 4)
        peer_counts = pc @ _COUNT_SEL
        peer_durs = pd @ _DUR_SEL
    else:
        peer_counts = np.zeros((0, 9))
        peer_durs = np.zeros((0, 3))
    out.append(_column_entropies(peer_durs))
    out.append(_column_entropies(peer_counts))
    out.append((peer_counts > 0).sum(axis=0).astype(float))
    per_contact = []
    for j in (6, 7, 8):  # txn_in, txn_out, txn_any
        col = peer_counts[:, j]
        mean, std = _mean_std(col[col > 0])
        per_contact += [float(mean), float(std)]
    out.append(np.array(per_contact))

    # spatial
    site = idx.site_code[t.cell_code]
    known = site >= 0
    n_sites = max(len(idx.site_ids), 1)
    hol = masks[Window.HOLIDAY]

    def daily_sites(m):
        pairs = np.unique(day[m] * n_sites + site[m])
        return float(np.bincount(pairs // n_sites, minlength=n_days).mean())

    def gyration(m):
        cc = t.cell_code[m]
        return radius_of_gyration(idx.lat[cc], idx.lon[cc])

    spatial = [
        daily_sites(known),
        daily_sites(known & hol),
        gyration(known),
        gyration(known & hol),
    ]
    for w in ANTENNA_WINDOWS:
        spatial.append(entropy_of_counts(np.bincount(t.cell_code[masks[w]]).astype(float)))
    night_known = known & masks[Window.NIGHT]
    if night_known.any():
        home = int(np.argmax(np.bincount(site[night_known])))
        area = idx.site_area[home]
        n_known = int(known.sum())
        away = int((site[known] != home).sum())
        pct = 100.0 * away / n_known
    else:
        area, pct = AreaType.UNKNOWN.value, 0.0
    spatial += [a == area for a in AREA_LEVELS]
    spatial += [pct, float(len(np.unique(site[known])))]
    out.append(np.array(spatial, dtype=float))

    out.append(np.array(tl.services.flags, dtype=float))
    out.append(np.array(_one_hot(tl.contract.tariff_type, TARIFF_LEVELS)))
    out.append(np.array(_one_hot(tl.contract.gsm_type, GSM_TYPE_LEVELS)))
    return np.concatenate(out)


def feature_matrix(
    timelines: Mapping[str, CustomerTimeline] | Iterable[CustomerTimeline],
    cells: Mapping[str, CellSite],
    threads: int = 1,
) -> tuple[list[str], np.ndarray]:
    """Feature rows for many customers, in the iteration order of ``timelines``.

    The result does not depend on ``threads``: rows are computed
    independently and reassembled in input order.
    """
    tls = list(timelines.values()) if isinstance(timelines, Mapping) else list(timelines)
    width = len(catalog().columns())
    if not tls:
        return [], np.zeros((0, width))
    idx = SpatialIndex.build(cells, tls[0].table.cell_vocab)

    def run(tl):
        return _extract(tl, idx)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, tls, chunksize=64))
    else:
        rows = [run(tl) for tl in tls]
    return [tl.gsm for tl in tls], np.vstack(rows)


# ---------------------------------------------------------------------------
# feature matrix CSV


def write_feature_csv(sink: IO[str], gsms: Sequence[str], matrix: np.ndarray, columns=None) -> None:
    columns = columns or catalog().columns()
    if matrix.shape[1] != len(columns):
        raise ValueError("matrix width does not match column list")
    sink.write(",".join(["gsm", *columns]) + "\n")
    for gsm, row in zip(gsms, matrix.tolist()):
        sink.write(gsm + "," + ",".join(map(repr, row)) + "\n")


def read_feature_csv(source: IO[str]) -> tuple[list[str], list[str], np.ndarray]:
    """Returns (columns, gsms, matrix)."""
    reader = csv.reader(source)
    header = next(reader)
    if not header or header[0] != "gsm":
        raise ValueError("feature matrix must start with a 'gsm' column")
    gsms, rows = [], []
    for row in reader:
        if not row:
            continue
        if len(row) != len(header):
            raise ValueError(f"feature row for {row[0]!r} has {len(row)} fields, expected {len(header)}")
        gsms.append(row[0])
        rows.append([float(v) for v in row[1:]])
    matrix = np.array(rows, dtype=float).reshape(len(rows), len(header) - 1)
    return header[1:], gsms, matrix
