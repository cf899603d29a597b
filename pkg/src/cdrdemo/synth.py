"""Seeded generator of synthetic CDR, cell, service, contract and label files.

Behaviour is driven by one :class:`BehaviorProfile` per (gender, age group)
cell. Each customer draws from independent seed streams, so the output does
not depend on generation order.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from datetime import date
from pathlib import Path

import numpy as np

from .ingest import AGE_GROUPS, SERVICE_FLAGS

PROFILE_FORMAT = "cdrdemo-profiles"
PROFILE_VERSION = 1

GENDERS = ("Male", "Female")
AGES = ("A", "B", "C")
DEFAULT_GENDER_MIX = {"Male": 0.64, "Female": 0.36}
DEFAULT_AGE_MIX = {"A": 0.32, "B": 0.41, "C": 0.27}
START_DATE = date(2018, 10, 1)
DAY = 86400


@dataclass(frozen=True)
class BehaviorProfile:
    call_rate: float = 3.0
    sms_rate: float = 2.0
    out_share: float = 0.5
    duration_log_mean: float = 4.3
    duration_log_sigma: float = 0.8
    contacts: int = 15
    concentration: float = 1.0
    night_share: float = 0.4
    holiday_multiplier: float = 1.0
    sites: int = 5
    home_stickiness: float = 0.7
    service_probs: tuple[float, ...] = (0.1,) * len(SERVICE_FLAGS)
    tariffs: dict[str, float] = field(default_factory=lambda: {"BASIC": 1.0})
    gsm_types: dict[str, float] = field(default_factory=lambda: {"PREPAID": 1.0})

    def __post_init__(self):
        for name in ("call_rate", "sms_rate", "duration_log_sigma", "concentration", "holiday_multiplier"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("out_share", "night_share", "home_stickiness"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        if self.contacts < 1 or self.sites < 1:
            raise ValueError("need at least one contact and one site")
        if len(self.service_probs) != len(SERVICE_FLAGS):
            raise ValueError(f"expected {len(SERVICE_FLAGS)} service probabilities")
        if any(not 0.0 <= p <= 1.0 for p in self.service_probs):
            raise ValueError("service probabilities must lie in [0, 1]")
        for dist in (self.tariffs, self.gsm_types):
            if not dist or any(w < 0 for w in dist.values()) or sum(dist.values()) <= 0:
                raise ValueError("categorical weights must be non-negative with a positive sum")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["service_probs"] = list(self.service_probs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BehaviorProfile":
        d = dict(d)
        d["service_probs"] = tuple(d["service_probs"])
        return cls(**d)


@dataclass
class ProfileSet:
    name: str
    cells: dict[tuple[str, str], BehaviorProfile]
    gender_mix: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_GENDER_MIX))
    age_mix: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_AGE_MIX))
    in_population_share: float = 0.1

    def __post_init__(self):
        missing = [(g, a) for g in GENDERS for a in AGES if (g, a) not in self.cells]
        if missing:
            raise ValueError(f"profiles missing for cells {missing}")
        for mix in (self.gender_mix, self.age_mix):
            if any(v < 0 for v in mix.values()) or sum(mix.values()) <= 0:
                raise ValueError("mix weights must be non-negative with a positive sum")

    def to_json(self) -> str:
        doc = {
            "format": PROFILE_FORMAT,
            "version": PROFILE_VERSION,
            "name": self.name,
            "gender_mix": self.gender_mix,
            "age_mix": self.age_mix,
            "in_population_share": self.in_population_share,
            "cells": [
                {"gender": g, "age_group": a, "profile": self.cells[g, a].to_dict()}
                for g in GENDERS
                for a in AGES
            ],
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ProfileSet":
        doc = json.loads(text)
        if doc.get("format") != PROFILE_FORMAT or doc.get("version") != PROFILE_VERSION:
            raise ValueError("not a supported profile document")
        cells = {(c["gender"], c["age_group"]): BehaviorProfile.from_dict(c["profile"]) for c in doc["cells"]}
        return cls(doc["name"], cells, doc["gender_mix"], doc["age_mix"], doc["in_population_share"])


def _services(**on: float) -> tuple[float, ...]:
    return tuple(on.get(name, 0.1) for name in SERVICE_FLAGS)


def _separable() -> ProfileSet:
    cells = {}
    for g in GENDERS:
        for a in AGES:
            female = g == "Female"
            ai = AGES.index(a)
            cells[g, a] = BehaviorProfile(
                call_rate=(2.0, 3.0, 4.0)[ai] + (0.0 if female else 0.5),
                sms_rate=(2.2 if female else 1.8) + (1.0 if a == "A" else 0.0),
                duration_log_mean=(4.4 if female else 4.2) + 0.3 * ai,
                duration_log_sigma=0.8,
                contacts=(25, 15, 10)[ai],
                concentration=2.0 if female else 0.15,
                night_share=(0.6, 0.4, 0.25)[ai],
                holiday_multiplier=1.15 if female else 0.85,
                sites=(8, 5, 3)[ai],
                home_stickiness=(0.5, 0.7, 0.9)[ai],
                service_probs=_services(
                    women=0.5 if female else 0.02,
                    sport=0.1 if female else 0.45,
                    youth=(0.6, 0.1, 0.02)[ai],
                    economy=(0.05, 0.15, 0.4)[ai],
                    religion=(0.05, 0.15, 0.35)[ai],
                ),
                tariffs=[
                    {"YOUTH": 0.75, "BASIC": 0.15, "UNLIMITED": 0.1},
                    {"FAMILY": 0.65, "BASIC": 0.2, "UNLIMITED": 0.15},
                    {"BUSINESS": 0.65, "BASIC": 0.25, "FAMILY": 0.1},
                ][ai],
                gsm_types=[
                    {"4G": 0.6, "3G": 0.3, "PREPAID": 0.1},
                    {"3G": 0.5, "4G": 0.3, "POSTPAID": 0.2},
                    {"POSTPAID": 0.6, "PREPAID": 0.3, "3G": 0.1},
                ][ai],
            )
    return ProfileSet("separable", cells)


def _identical() -> ProfileSet:
    base = BehaviorProfile(
        tariffs={"BASIC": 0.4, "YOUTH": 0.2, "FAMILY": 0.2, "BUSINESS": 0.2},
        gsm_types={"PREPAID": 0.4, "POSTPAID": 0.2, "3G": 0.2, "4G": 0.2},
    )
    cells = {(g, a): base for g in GENDERS for a in AGES}
    # balanced classes, so chance level is the same for every class
    return ProfileSet(
        "identical", cells, gender_mix={"Male": 0.5, "Female": 0.5}, age_mix={"A": 1 / 3, "B": 1 / 3, "C": 1 / 3}
    )


PRESETS = {"separable": _separable, "identical": _identical}


def preset(name: str) -> ProfileSet:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# --- generation -----------------------------------------------------------


@dataclass
class _Site:
    site_id: str
    cells: list[str]


@dataclass
class _Customer:
    gsm: str
    gender: str
    age: int
    age_group: str
    profile: BehaviorProfile
    home: int
    sites: np.ndarray
    peers: list[str]
    peer_index: np.ndarray  # customer index, -1 when outside the population
    weights: np.ndarray
    services: tuple[int, ...]
    tariff: str
    gsm_type: str


def customer_gsm(i: int) -> str:
    return f"+9639{i:08d}"


def _pick(rng, dist: dict[str, float]) -> str:
    keys = list(dist)
    w = np.array([dist[k] for k in keys], dtype=float)
    return keys[int(rng.choice(len(keys), p=w / w.sum()))]


def _make_sites(n_customers: int, seed: int):
    rng = np.random.default_rng([seed, 0])
    n_sites = max(30, n_customers // 20)
    sites: list[_Site] = []
    rows = []
    counter = 0
    for s in range(n_sites):
        u = rng.random()
        if u < 0.6:
            radius, area = rng.uniform(0.0, 0.05), "Urban"
        elif u < 0.85:
            radius, area = rng.uniform(0.05, 0.15), "Suburban"
        else:
            radius, area = rng.uniform(0.15, 0.6), "Rural"
        theta = rng.uniform(0, 2 * np.pi)
        lat = 33.51 + radius * np.sin(theta)
        lon = 36.29 + radius * np.cos(theta)
        site = _Site(f"S{s:04d}", [])
        for _ in range(int(rng.integers(1, 4))):
            cid = f"C{counter}"
            counter += 1
            site.cells.append(cid)
            rows.append((cid, site.site_id, round(float(lon), 6), round(float(lat), 6), area))
        sites.append(site)
    return sites, rows


def _make_customer(i, n_customers, n_sites, profiles: ProfileSet, seed) -> _Customer:
    rng = np.random.default_rng([seed, 1, i])
    g = GENDERS[int(rng.choice(2, p=_norm(profiles.gender_mix, GENDERS)))]
    a = AGES[int(rng.choice(3, p=_norm(profiles.age_mix, AGES)))]
    lo, hi = next((lo, hi) for lo, hi, grp in AGE_GROUPS if grp == a)
    p = profiles.cells[g, a]
    pool = rng.choice(n_sites, size=min(p.sites, n_sites), replace=False)
    peers, index = [], []
    for j in range(p.contacts):
        if n_customers > 1 and rng.random() < profiles.in_population_share:
            k = int(rng.integers(n_customers - 1))
            k += k >= i
            peers.append(customer_gsm(k))
            index.append(k)
        else:
            peers.append(f"+9633{i:07d}{j:03d}")
            index.append(-1)
    weights = rng.dirichlet(np.full(p.contacts, p.concentration)) if p.concentration > 0 else np.full(p.contacts, 1 / p.contacts)
    services = tuple(int(rng.random() < q) for q in p.service_probs)
    return _Customer(
        customer_gsm(i), g, int(rng.integers(lo, hi + 1)), a, p, int(pool[0]), pool,
        peers, np.array(index), weights, services, _pick(rng, p.tariffs), _pick(rng, p.gsm_types),
    )


def _norm(mix: dict[str, float], keys) -> np.ndarray:
    w = np.array([mix.get(k, 0.0) for k in keys], dtype=float)
    return w / w.sum()


def _events(c: _Customer, i: int, n_days: int, sites: list[_Site], seed: int):
    """Own-perspective events of customer ``i`` as parallel arrays."""
    rng = np.random.default_rng([seed, 2, i])
    p = c.profile
    day0 = (START_DATE - date(1970, 1, 1)).days
    days = np.arange(day0, day0 + n_days)
    holiday = np.isin((days + 3) % 7, (4, 5))
    mult = np.where(holiday, p.holiday_multiplier, 1.0)
    n_calls = rng.poisson(p.call_rate * mult)
    n_sms = rng.poisson(p.sms_rate * mult)
    is_call = np.concatenate([np.repeat([True, False], [nc, ns]) for nc, ns in zip(n_calls, n_sms)]) if n_days else np.zeros(0, bool)
    day = np.repeat(days, n_calls + n_sms)
    n = len(day)
    night = rng.random(n) < p.night_share
    sec = np.where(
        night,
        (17 * 3600 + rng.integers(0, 16 * 3600, n)) % DAY,
        9 * 3600 + rng.integers(0, 8 * 3600, n),
    )
    ts = day * DAY + sec
    out = rng.random(n) < p.out_share
    peer = rng.choice(len(c.peers), size=n, p=c.weights)
    dur = np.maximum(1, np.rint(rng.lognormal(p.duration_log_mean, p.duration_log_sigma, n))).astype(np.int64)
    dur[~is_call] = -1
    at_home = night & (rng.random(n) < p.home_stickiness)
    site = np.where(at_home, c.home, c.sites[rng.integers(0, len(c.sites), n)])
    cell_pick = rng.random(n)
    cells = [sites[s].cells[int(u * len(sites[s].cells))] for s, u in zip(site.tolist(), cell_pick.tolist())]
    return is_call, ts, out, peer, dur, cells


def generate(
    out_dir: str | Path,
    profiles: ProfileSet | str = "separable",
    n_customers: int = 1000,
    n_days: int = 60,
    seed: int = 0,
    gender_mix: dict[str, float] | None = None,
    age_mix: dict[str, float] | None = None,
) -> dict[str, Path]:
    """Write cdr.csv, cells.csv, services.csv, contracts.csv and labels.csv.

    When the peer of an event is itself a generated customer, the event is
    also written from the peer's side with the direction flipped, located
    at the peer's home site. Returns the written paths by file stem.
    """
    if n_customers < 1 or n_days < 1:
        raise ValueError("need at least one customer and one day")
    if isinstance(profiles, str):
        profiles = preset(profiles)
    if gender_mix is not None or age_mix is not None:
        profiles = replace(
            profiles,
            gender_mix=gender_mix if gender_mix is not None else profiles.gender_mix,
            age_mix=age_mix if age_mix is not None else profiles.age_mix,
        )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sites, cell_rows = _make_sites(n_customers, seed)
    customers = [_make_customer(i, n_customers, len(sites), profiles, seed) for i in range(n_customers)]

    # rows per perspective holder: (ts, kind, direction, peer, cell, duration)
    per: list[list[tuple]] = [[] for _ in customers]
    for i, c in enumerate(customers):
        is_call, ts, outgoing, peer, dur, cells = _events(c, i, n_days, sites, seed)
        kind = ["Call" if x else "SMS" for x in is_call.tolist()]
        direction = ["Out" if x else "In" for x in outgoing.tolist()]
        rows = per[i]
        ts_l, peer_l, dur_l = ts.tolist(), peer.tolist(), dur.tolist()
        for e in range(len(ts_l)):
            rows.append((ts_l[e], kind[e], direction[e], c.peers[peer_l[e]], cells[e], dur_l[e]))
            k = int(c.peer_index[peer_l[e]])
            if k >= 0:
                home = sites[customers[k].home].cells[0]
                flipped = "In" if direction[e] == "Out" else "Out"
                per[k].append((ts_l[e], kind[e], flipped, c.gsm, home, dur_l[e]))

    paths = {name: out / f"{name}.csv" for name in ("cdr", "cells", "services", "contracts", "labels")}
    epoch = np.datetime64("1970-01-01T00:00:00", "s")
    with open(paths["cdr"], "w", encoding="utf-8", newline="") as fh:
        fh.write("call_type,gsm_a,gsm_b,direction,cell_id,duration,timestamp\n")
        for c, rows in zip(customers, per):
            rows.sort()
            stamps = np.datetime_as_string(epoch + np.array([r[0] for r in rows], dtype="timedelta64[s]"))
            fh.writelines(
                f"{r[1]},{c.gsm},{r[3]},{r[2]},{r[4]},{r[5] if r[5] >= 0 else ''},{s}\n"
                for r, s in zip(rows, stamps.tolist())
            )
    with open(paths["cells"], "w", encoding="utf-8", newline="") as fh:
        fh.write("cell_id,site_id,longitude,latitude,area_type\n")
        fh.writelines(f"{a},{b},{lon!r},{lat!r},{area}\n" for a, b, lon, lat, area in cell_rows)
    with open(paths["services"], "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(("gsm",) + SERVICE_FLAGS) + "\n")
        fh.writelines(f"{c.gsm}," + ",".join(map(str, c.services)) + "\n" for c in customers)
    with open(paths["contracts"], "w", encoding="utf-8", newline="") as fh:
        fh.write("gsm,tariff_type,gsm_type\n")
        fh.writelines(f"{c.gsm},{c.tariff},{c.gsm_type}\n" for c in customers)
    with open(paths["labels"], "w", encoding="utf-8", newline="") as fh:
        fh.write("gsm,gender,age\n")
        fh.writelines(f"{c.gsm},{c.gender[0]},{c.age}\n" for c in customers)
    return paths
