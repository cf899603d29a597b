"""Parsing and validation of the CDR, cell, service, contract and label tables.

CDR rows are stored column-wise (:class:`CdrTable`) because a realistic
extract has millions of rows; :class:`CdrRecord` objects are materialised on
demand. Every parser returns ``(result, rejects)``: malformed rows are never
fatal, they are logged with their line number and the reason.
"""

from __future__ import annotations

import csv
import io
import logging
import os
import warnings
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

EPOCH = datetime(1970, 1, 1)
SECONDS_PER_DAY = 86400

SERVICE_FLAGS = (
    "economy",
    "education",
    "health",
    "horoscopes",
    "technology",
    "sport",
    "politics",
    "entertainment",
    "religion",
    "youth",
    "women",
    "weather",
    "culture",
)

UNKNOWN = "UNKNOWN"

# (low, high, group) inclusive year ranges
AGE_GROUPS = (
    (18, 27, "A"),
    (28, 39, "B"),
    (40, 60, "C"),
)


class IngestError(Exception):
    """Fatal input problem: unreadable file or missing required columns."""


class IngestWarning(UserWarning):
    pass


class EventKind(str, Enum):
    CALL = "Call"
    SMS = "Sms"


class Direction(str, Enum):
    IN = "In"
    OUT = "Out"


class AreaType(str, Enum):
    URBAN = "Urban"
    SUBURBAN = "Suburban"
    RURAL = "Rural"
    UNKNOWN = "Unknown"


_KIND_CODES = {EventKind.CALL: 0, EventKind.SMS: 1}
_KINDS = (EventKind.CALL, EventKind.SMS)
_DIRECTIONS = (Direction.IN, Direction.OUT)

_KIND_LOOKUP = {"call": 0, "sms": 1, "voice": 0}
_DIR_LOOKUP = {"in": 0, "out": 1, "incoming": 0, "outgoing": 1}
_NULLS = {"", "null", "none", "na"}


@dataclass(frozen=True)
class CdrRecord:
    event_kind: EventKind
    self_gsm: str
    peer_gsm: str
    direction: Direction
    cell_id: str
    duration_s: int | None
    timestamp: datetime

    def __post_init__(self):
        if (self.duration_s is None) != (self.event_kind is EventKind.SMS):
            raise ValueError("duration is required for calls and forbidden for SMS")
        if self.duration_s is not None and self.duration_s < 0:
            raise ValueError("negative duration")


@dataclass(frozen=True)
class CellSite:
    cell_id: str
    site_id: str
    longitude: float
    latitude: float
    area_type: AreaType = AreaType.UNKNOWN


@dataclass(frozen=True)
class ServiceEnrollment:
    gsm: str
    flags: tuple[int, ...] = (0,) * len(SERVICE_FLAGS)

    def as_dict(self) -> dict[str, int]:
        return dict(zip(SERVICE_FLAGS, self.flags))


@dataclass(frozen=True)
class ContractInfo:
    gsm: str
    tariff_type: str = UNKNOWN
    gsm_type: str = UNKNOWN


@dataclass(frozen=True)
class LabeledCustomer:
    gsm: str
    gender: str  # "Male" | "Female"
    age_group: str  # "A" | "B" | "C"


@dataclass(frozen=True)
class Reject:
    file: str
    line: int
    reason: str


def age_group_for(age: int) -> str | None:
    for low, high, group in AGE_GROUPS:
        if low <= age <= high:
            return group
    return None


def to_epoch_seconds(ts: datetime) -> int:
    return int((ts - EPOCH).total_seconds())


def from_epoch_seconds(sec: int) -> datetime:
    return EPOCH + timedelta(seconds=int(sec))


def epoch_day_to_date(day: int) -> date:
    return date(1970, 1, 1) + timedelta(days=int(day))


# ---------------------------------------------------------------------------
# columnar CDR storage


@dataclass
class CdrTable:
    """Column-oriented CDR rows.

    Categorical columns hold integer codes into ``gsm_vocab`` (shared by the
    self and peer columns) and ``cell_vocab``. ``duration`` is -1 where absent.
    ``ts`` is naive civil time in seconds since 1970-01-01T00:00:00.
    """

    kind: np.ndarray
    direction: np.ndarray
    self_code: np.ndarray
    peer_code: np.ndarray
    cell_code: np.ndarray
    duration: np.ndarray
    ts: np.ndarray
    gsm_vocab: list[str] = field(default_factory=list)
    cell_vocab: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.ts.shape[0])

    def __iter__(self) -> Iterator[CdrRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def record(self, i: int) -> CdrRecord:
        kind = _KINDS[self.kind[i]]
        dur = int(self.duration[i])
        return CdrRecord(
            event_kind=kind,
            self_gsm=self.gsm_vocab[self.self_code[i]],
            peer_gsm=self.gsm_vocab[self.peer_code[i]],
            direction=_DIRECTIONS[self.direction[i]],
            cell_id=self.cell_vocab[self.cell_code[i]],
            duration_s=None if kind is EventKind.SMS else dur,
            timestamp=from_epoch_seconds(self.ts[i]),
        )

    def take(self, idx) -> CdrTable:
        """Row subset (index array or slice) sharing this table's vocabularies."""
        return CdrTable(
            kind=self.kind[idx],
            direction=self.direction[idx],
            self_code=self.self_code[idx],
            peer_code=self.peer_code[idx],
            cell_code=self.cell_code[idx],
            duration=self.duration[idx],
            ts=self.ts[idx],
            gsm_vocab=self.gsm_vocab,
            cell_vocab=self.cell_vocab,
        )

    @classmethod
    def empty(cls) -> CdrTable:
        return cls.from_records([])

    @classmethod
    def from_records(cls, records: Iterable[CdrRecord]) -> CdrTable:
        gsm_index: dict[str, int] = {}
        cell_index: dict[str, int] = {}
        cols: tuple[list, ...] = ([], [], [], [], [], [], [])
        for r in records:
            cols[0].append(_KIND_CODES[r.event_kind])
            cols[1].append(0 if r.direction is Direction.IN else 1)
            cols[2].append(gsm_index.setdefault(r.self_gsm, len(gsm_index)))
            cols[3].append(gsm_index.setdefault(r.peer_gsm, len(gsm_index)))
            cols[4].append(cell_index.setdefault(r.cell_id, len(cell_index)))
            cols[5].append(-1 if r.duration_s is None else r.duration_s)
            cols[6].append(to_epoch_seconds(r.timestamp))
        return cls._from_lists(cols, list(gsm_index), list(cell_index))

    @classmethod
    def _from_lists(cls, cols, gsm_vocab, cell_vocab) -> CdrTable:
        return cls(
            kind=np.array(cols[0], dtype=np.int8),
            direction=np.array(cols[1], dtype=np.int8),
            self_code=np.array(cols[2], dtype=np.int32),
            peer_code=np.array(cols[3], dtype=np.int32),
            cell_code=np.array(cols[4], dtype=np.int32),
            duration=np.array(cols[5], dtype=np.int64),
            ts=np.array(cols[6], dtype=np.int64),
            gsm_vocab=gsm_vocab,
            cell_vocab=cell_vocab,
        )

    def to_csv(self, sink: IO[str], schema: CdrSchema | None = None) -> None:
        schema = schema or CdrSchema()
        writer = csv.writer(sink, lineterminator="\n")
        writer.writerow(schema.header())
        gv, cv = self.gsm_vocab, self.cell_vocab
        stamps = self.ts.astype("datetime64[s]").astype(str)
        for i in range(len(self)):
            sms = self.kind[i] == 1
            writer.writerow(
                (
                    "SMS" if sms else "Call",
                    gv[self.self_code[i]],
                    gv[self.peer_code[i]],
                    "Out" if self.direction[i] else "In",
                    cv[self.cell_code[i]],
                    "" if sms else int(self.duration[i]),
                    stamps[i],
                )
            )


@dataclass(frozen=True)
class CdrSchema:
    """Maps CDR fields to CSV header names."""

    event_kind: str = "call_type"
    self_gsm: str = "gsm_a"
    peer_gsm: str = "gsm_b"
    direction: str = "direction"
    cell_id: str = "cell_id"
    duration_s: str = "duration"
    timestamp: str = "timestamp"

    def header(self) -> list[str]:
        return [
            self.event_kind,
            self.self_gsm,
            self.peer_gsm,
            self.direction,
            self.cell_id,
            self.duration_s,
            self.timestamp,
        ]


# ---------------------------------------------------------------------------
# helpers


def _open_text(source) -> tuple[IO[str], str, bool]:
    """Return (text stream, label for reject log, should_close)."""
    if isinstance(source, (str, os.PathLike)):
        path = Path(source)
        try:
            fh = open(path, "r", encoding="utf-8", newline="")
        except OSError as exc:
            raise IngestError(f"cannot read {path}: {exc}") from exc
        return fh, path.name, True
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(source.decode("utf-8"), newline=""), "<bytes>", True
    if isinstance(source, io.RawIOBase | io.BufferedIOBase):
        return io.TextIOWrapper(source, encoding="utf-8", newline=""), "<stream>", False
    name = getattr(source, "name", "<stream>")
    return source, Path(str(name)).name, False


def _read_header(reader, label: str) -> list[str]:
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError(f"{label}: empty file, header expected") from None
    except (csv.Error, UnicodeDecodeError) as exc:
        raise IngestError(f"{label}: unreadable header: {exc}") from exc
    return [h.strip().lstrip("﻿") for h in header]


def _column_index(header: list[str], name: str, label: str, required=True) -> int:
    lowered = [h.lower() for h in header]
    try:
        return lowered.index(name.lower())
    except ValueError:
        if required:
            raise IngestError(f"{label}: missing column {name!r}") from None
        return -1


def _rows(reader, label: str) -> Iterator[tuple[int, list[str]]]:
    try:
        for row in reader:
            yield reader.line_num, row
    except (csv.Error, UnicodeDecodeError) as exc:
        raise IngestError(f"{label}: unreadable content near line {reader.line_num}: {exc}") from exc


def _configured_zone():
    name = os.environ.get("CDRDEMO_TZ")
    if not name:
        return None
    from zoneinfo import ZoneInfo

    return ZoneInfo(name)


def parse_timestamp(text: str, zone=None) -> datetime:
    """Parse an ISO-8601 timestamp to naive civil time.

    Offset-aware inputs are converted to ``zone`` (or kept at their own
    offset when no zone is configured) and the offset is dropped.
    """
    ts = datetime.fromisoformat(text.strip())
    if ts.tzinfo is not None:
        if zone is not None:
            ts = ts.astimezone(zone)
        ts = ts.replace(tzinfo=None)
    return ts.replace(microsecond=0)


def _parse_timestamps(texts: list[str]) -> tuple[np.ndarray, list[int]]:
    """Vectorised parse of fast-path strings; returns seconds and failing indices."""
    if not texts:
        return np.zeros(0, dtype=np.int64), []
    try:
        arr = np.array(texts, dtype="datetime64[s]")
        return arr.astype(np.int64), []
    except ValueError:
        pass
    out = np.zeros(len(texts), dtype=np.int64)
    bad = []
    for i, t in enumerate(texts):
        try:
            out[i] = to_epoch_seconds(datetime.strptime(t.replace(" ", "T"), "%Y-%m-%dT%H:%M:%S"))
        except ValueError:
            bad.append(i)
    return out, bad


# ---------------------------------------------------------------------------
# parsers


def parse_cdr_stream(source, schema: CdrSchema | None = None) -> tuple[CdrTable, list[Reject]]:
    """Parse a CDR CSV into a :class:`CdrTable`, preserving accepted-row order."""
    schema = schema or CdrSchema()
    fh, label, close = _open_text(source)
    try:
        reader = csv.reader(fh)
        header = _read_header(reader, label)
        ik, ia, ib, idr, ic, idu, its = (
            _column_index(header, name, label) for name in schema.header()
        )
        width = len(header)
        zone = _configured_zone()

        gsm_index: dict[str, int] = {}
        cell_index: dict[str, int] = {}
        kinds, dirs, selfs, peers, cells, durs = [], [], [], [], [], []
        fast_ts: list[str] = []
        fast_pos: list[int] = []
        slow_ts: dict[int, int] = {}
        lines: list[int] = []
        rejects: list[Reject] = []
        kind_lookup, dir_lookup = _KIND_LOOKUP, _DIR_LOOKUP

        for line, row in _rows(reader, label):
            if len(row) != width:
                rejects.append(Reject(label, line, f"expected {width} fields, got {len(row)}"))
                continue
            k = kind_lookup.get(row[ik].strip().lower())
            if k is None:
                rejects.append(Reject(label, line, f"unknown event kind {row[ik]!r}"))
                continue
            d = dir_lookup.get(row[idr].strip().lower())
            if d is None:
                rejects.append(Reject(label, line, f"unknown direction {row[idr]!r}"))
                continue
            a, b, c = row[ia].strip(), row[ib].strip(), row[ic].strip()
            if not a or not b:
                rejects.append(Reject(label, line, "missing gsm"))
                continue
            if not c:
                rejects.append(Reject(label, line, "missing cell id"))
                continue
            raw = row[idu].strip()
            if raw.lower() in _NULLS:
                if k == 0:
                    rejects.append(Reject(label, line, "call without duration"))
                    continue
                dur = -1
            else:
                if k == 1:
                    rejects.append(Reject(label, line, "sms with duration"))
                    continue
                if raw[-1:] in "sS":
                    raw = raw[:-1]
                try:
                    dur = int(raw)
                except ValueError:
                    rejects.append(Reject(label, line, f"bad duration {row[idu]!r}"))
                    continue
                if dur < 0:
                    rejects.append(Reject(label, line, "negative duration"))
                    continue
            t = row[its].strip()
            pos = len(lines)
            if len(t) == 19 and t[10] in "T ":
                fast_ts.append(t)
                fast_pos.append(pos)
            else:
                try:
                    slow_ts[pos] = to_epoch_seconds(parse_timestamp(t, zone))
                except ValueError:
                    rejects.append(Reject(label, line, f"bad timestamp {t!r}"))
                    continue
            kinds.append(k)
            dirs.append(d)
            selfs.append(gsm_index.setdefault(a, len(gsm_index)))
            peers.append(gsm_index.setdefault(b, len(gsm_index)))
            cells.append(cell_index.setdefault(c, len(cell_index)))
            durs.append(dur)
            lines.append(line)
    finally:
        if close:
            fh.close()

    ts = np.zeros(len(lines), dtype=np.int64)
    parsed, bad = _parse_timestamps(fast_ts)
    fast_pos_arr = np.asarray(fast_pos, dtype=np.int64)
    ts[fast_pos_arr] = parsed
    for pos, sec in slow_ts.items():
        ts[pos] = sec
    table = CdrTable._from_lists(
        (kinds, dirs, selfs, peers, cells, durs, ts), list(gsm_index), list(cell_index)
    )
    if bad:
        keep = np.ones(len(lines), dtype=bool)
        for i in bad:
            pos = fast_pos[i]
            keep[pos] = False
            rejects.append(Reject(label, lines[pos], f"bad timestamp {fast_ts[i]!r}"))
        table = table.take(keep)
        rejects.sort(key=lambda r: r.line)
    return table, rejects


def _parse_float(text: str) -> float:
    value = float(text)
    if not np.isfinite(value):
        raise ValueError("non-finite")
    return value


def parse_cells(source) -> tuple[dict[str, CellSite], list[Reject]]:
    fh, label, close = _open_text(source)
    cells: dict[str, CellSite] = {}
    rejects: list[Reject] = []
    try:
        reader = csv.reader(fh)
        header = _read_header(reader, label)
        ic = _column_index(header, "cell_id", label)
        isite = _column_index(header, "site_id", label)
        ilon = _column_index(header, "longitude", label)
        ilat = _column_index(header, "latitude", label)
        iarea = _column_index(header, "area_type", label, required=False)
        area_lookup = {a.value.lower(): a for a in AreaType}
        for line, row in _rows(reader, label):
            if len(row) < max(ic, isite, ilon, ilat, iarea) + 1:
                rejects.append(Reject(label, line, "too few fields"))
                continue
            cell_id, site_id = row[ic].strip(), row[isite].strip()
            if not cell_id or not site_id:
                rejects.append(Reject(label, line, "missing cell or site id"))
                continue
            try:
                lon = _parse_float(row[ilon])
                lat = _parse_float(row[ilat])
            except ValueError:
                rejects.append(Reject(label, line, "bad coordinate"))
                continue
            if not -90.0 <= lat <= 90.0 or not -180.0 <= lon <= 180.0:
                rejects.append(Reject(label, line, "coordinate out of range"))
                continue
            area = AreaType.UNKNOWN
            if iarea >= 0 and row[iarea].strip():
                area = area_lookup.get(row[iarea].strip().lower())
                if area is None:
                    rejects.append(Reject(label, line, f"unknown area type {row[iarea]!r}"))
                    continue
            if cell_id in cells:
                warnings.warn(
                    f"{label}:{line}: duplicate cell_id {cell_id!r}, keeping last", IngestWarning
                )
            cells[cell_id] = CellSite(cell_id, site_id, lon, lat, area)
    finally:
        if close:
            fh.close()
    return cells, rejects


def parse_services(source) -> tuple[dict[str, ServiceEnrollment], list[Reject]]:
    fh, label, close = _open_text(source)
    out: dict[str, ServiceEnrollment] = {}
    rejects: list[Reject] = []
    try:
        reader = csv.reader(fh)
        header = _read_header(reader, label)
        ig = _column_index(header, "gsm", label)
        idx = [_column_index(header, name, label) for name in SERVICE_FLAGS]
        need = max([ig, *idx]) + 1
        for line, row in _rows(reader, label):
            if len(row) < need or not row[ig].strip():
                rejects.append(Reject(label, line, "malformed row"))
                continue
            flags = tuple(row[i].strip() for i in idx)
            if any(f not in ("0", "1") for f in flags):
                rejects.append(Reject(label, line, "service flag not in {0,1}"))
                continue
            gsm = row[ig].strip()
            out[gsm] = ServiceEnrollment(gsm, tuple(int(f) for f in flags))
    finally:
        if close:
            fh.close()
    return out, rejects


def parse_contracts(source) -> tuple[dict[str, ContractInfo], list[Reject]]:
    fh, label, close = _open_text(source)
    out: dict[str, ContractInfo] = {}
    rejects: list[Reject] = []
    try:
        reader = csv.reader(fh)
        header = _read_header(reader, label)
        ig = _column_index(header, "gsm", label)
        it = _column_index(header, "tariff_type", label)
        iy = _column_index(header, "gsm_type", label)
        need = max(ig, it, iy) + 1
        for line, row in _rows(reader, label):
            if len(row) < need:
                rejects.append(Reject(label, line, "too few fields"))
                continue
            gsm, tariff, gtype = row[ig].strip(), row[it].strip(), row[iy].strip()
            if not gsm or not tariff or not gtype:
                rejects.append(Reject(label, line, "empty contract field"))
                continue
            out[gsm] = ContractInfo(gsm, tariff, gtype)
    finally:
        if close:
            fh.close()
    return out, rejects


_GENDERS = {"m": "Male", "male": "Male", "f": "Female", "female": "Female"}


def parse_labels(source) -> tuple[list[LabeledCustomer], list[Reject]]:
    """Labels carry ``gender`` plus either ``age_group`` (A/B/C) or raw ``age``."""
    fh, label, close = _open_text(source)
    out: list[LabeledCustomer] = []
    rejects: list[Reject] = []
    try:
        reader = csv.reader(fh)
        header = _read_header(reader, label)
        ig = _column_index(header, "gsm", label)
        isx = _column_index(header, "gender", label)
        igrp = _column_index(header, "age_group", label, required=False)
        iage = _column_index(header, "age", label, required=False)
        if igrp < 0 and iage < 0:
            raise IngestError(f"{label}: need an 'age_group' or 'age' column")
        need = max(ig, isx, igrp, iage) + 1
        for line, row in _rows(reader, label):
            if len(row) < need or not row[ig].strip():
                rejects.append(Reject(label, line, "malformed row"))
                continue
            gender = _GENDERS.get(row[isx].strip().lower())
            if gender is None:
                rejects.append(Reject(label, line, f"unknown gender {row[isx]!r}"))
                continue
            group = row[igrp].strip().upper() if igrp >= 0 else ""
            if group:
                if group not in ("A", "B", "C"):
                    rejects.append(Reject(label, line, f"unknown age group {group!r}"))
                    continue
            else:
                raw = row[iage].strip() if iage >= 0 else ""
                try:
                    age = int(raw)
                except ValueError:
                    rejects.append(Reject(label, line, f"bad age {raw!r}"))
                    continue
                group = age_group_for(age)
                if group is None:
                    rejects.append(Reject(label, line, f"age {age} outside 18-60"))
                    continue
            out.append(LabeledCustomer(row[ig].strip(), gender, group))
    finally:
        if close:
            fh.close()
    return out, rejects


def write_rejects(rejects: Sequence[Reject], sink: IO[str]) -> None:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["file", "line", "reason"])
    for r in rejects:
        writer.writerow([r.file, r.line, r.reason])


# ---------------------------------------------------------------------------
# timelines


@dataclass
class CustomerTimeline:
    gsm: str
    table: CdrTable
    services: ServiceEnrollment
    contract: ContractInfo
    window: tuple[date, date]

    @property
    def records(self) -> list[CdrRecord]:
        return list(self.table)

    @property
    def first_day(self) -> int:
        """Window start as days since 1970-01-01."""
        return (self.window[0] - date(1970, 1, 1)).days

    @property
    def n_days(self) -> int:
        return (self.window[1] - self.window[0]).days + 1


def observation_window(table: CdrTable) -> tuple[date, date]:
    if len(table) == 0:
        raise ValueError("cannot infer an observation window from zero records")
    days = table.ts // SECONDS_PER_DAY
    return epoch_day_to_date(days.min()), epoch_day_to_date(days.max())


def build_timelines(
    table: CdrTable,
    services: Mapping[str, ServiceEnrollment] | None = None,
    contracts: Mapping[str, ContractInfo] | None = None,
    gsms: Iterable[str] | None = None,
    window: tuple[date, date] | None = None,
) -> dict[str, CustomerTimeline]:
    """Group records by their perspective holder and sort each group by time.

    Ties in timestamp keep input order. The observation window is shared by
    every customer and spans all input records unless given explicitly.
    The result is keyed in sorted gsm order.
    """
    services = services or {}
    contracts = contracts or {}
    if window is None:
        window = observation_window(table)

    order = np.lexsort((table.ts, table.self_code))
    codes = table.self_code[order]
    bounds = np.flatnonzero(np.diff(codes)) + 1
    starts = np.concatenate(([0], bounds)) if len(codes) else np.zeros(0, dtype=np.int64)
    ends = np.concatenate((bounds, [len(codes)])) if len(codes) else np.zeros(0, dtype=np.int64)
    spans = {table.gsm_vocab[codes[s]]: (s, e) for s, e in zip(starts, ends)}

    wanted = sorted(spans) if gsms is None else sorted(set(gsms))
    sorted_table = table.take(order)
    out: dict[str, CustomerTimeline] = {}
    for gsm in wanted:
        s, e = spans.get(gsm, (0, 0))
        out[gsm] = CustomerTimeline(
            gsm=gsm,
            table=sorted_table.take(slice(s, e)),
            services=services.get(gsm) or ServiceEnrollment(gsm),
            contract=contracts.get(gsm) or ContractInfo(gsm),
            window=window,
        )
    return out
