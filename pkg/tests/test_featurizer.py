import io
import json
import math
from datetime import date, datetime, timedelta

import numpy as np
import pytest

from cdrdemo.featurizer import (
    Family,
    Window,
    catalog,
    classify_instant,
    daily_series,
    extract_features,
    feature_matrix,
    home_site,
    read_feature_csv,
    write_feature_csv,
)
from cdrdemo.ingest import (
    CdrRecord,
    CdrTable,
    CellSite,
    ContractInfo,
    Direction,
    EventKind,
    ServiceEnrollment,
    build_timelines,
)
from conftest import random_timeline
from oracles import WINDOW_PRED, reference_features

SUNDAY = datetime(2018, 10, 7)  # a Sunday


def _call(ts, peer="+963B", dur=30, cell="C1", direction=Direction.OUT, gsm="+963A"):
    return CdrRecord(EventKind.CALL, gsm, peer, direction, cell, dur, ts)


def _sms(ts, peer="+963B", cell="C1", direction=Direction.IN, gsm="+963A"):
    return CdrRecord(EventKind.SMS, gsm, peer, direction, cell, None, ts)


def _timeline(recs, window=None, gsm="+963A"):
    return build_timelines(CdrTable.from_records(recs), gsms=[gsm], window=window)[gsm]


def _vector(tl, cells):
    cols = catalog().columns()
    return dict(zip(cols, extract_features(tl, cells).values))


CELLS = {
    "C1": CellSite("C1", "S1", 36.30, 33.50),
    "C2": CellSite("C2", "S2", 36.35, 33.52),
}


# --- time windows -------------------------------------------------------


def test_classify_instant_examples():
    f = classify_instant(SUNDAY.replace(hour=10))
    assert f.is_workday and f.is_daytime and f.is_worktime
    f = classify_instant(SUNDAY + timedelta(days=5, hours=10))  # Friday
    assert f.is_holiday and f.is_daytime and not f.is_worktime
    f = classify_instant(SUNDAY + timedelta(days=1, hours=17))  # Monday 17:00
    assert f.is_workday and f.is_night and not f.is_daytime


def test_classify_instant_enumerated_week():
    for d in range(7):
        for h in range(24):
            ts = SUNDAY + timedelta(days=d, hours=h, minutes=59, seconds=59)
            f = classify_instant(ts)
            assert f.is_workday != f.is_holiday
            assert f.is_daytime != f.is_night
            assert f.is_worktime == (f.is_workday and f.is_daytime)
            assert f.is_daytime == (9 <= h <= 16)
            assert f.is_holiday == (d in (5, 6))  # Friday, Saturday
            for w, pred in WINDOW_PRED.items():
                ours = {
                    "all": True,
                    "day": f.is_daytime,
                    "night": f.is_night,
                    "workday": f.is_workday,
                    "holiday": f.is_holiday,
                    "worktime": f.is_worktime,
                }[w]
                assert ours == pred(ts)


def test_vectorised_window_masks_agree_with_classify_instant():
    recs = [_call(SUNDAY + timedelta(hours=h)) for h in range(0, 24 * 7, 1)]
    tl = _timeline(recs)
    for w, attr in [
        (Window.DAYTIME, "is_daytime"),
        (Window.NIGHT, "is_night"),
        (Window.WORKDAY, "is_workday"),
        (Window.HOLIDAY, "is_holiday"),
        (Window.WORKTIME, "is_worktime"),
    ]:
        series = daily_series(tl, None, None, w)
        expected = np.zeros(7)
        for r in recs:
            if getattr(classify_instant(r.timestamp), attr):
                expected[(r.timestamp.date() - SUNDAY.date()).days] += 1
        np.testing.assert_array_equal(series, expected)


# --- daily series -------------------------------------------------------


def test_daily_series_empty_timeline_zero_filled():
    window = (date(2018, 10, 1), date(2018, 10, 10))
    tl = build_timelines(CdrTable.empty(), gsms=["+963A"], window=window)["+963A"]
    np.testing.assert_array_equal(daily_series(tl), np.zeros(10))


def test_daily_series_counts_and_durations():
    day1 = SUNDAY.replace(hour=10)
    tl = _timeline([_call(day1), _call(day1), _call(day1)], window=(day1.date(), day1.date()))
    np.testing.assert_array_equal(daily_series(tl, "Call", None, "all", "count"), [3])
    tl = _timeline(
        [_call(day1, dur=30), _call(day1, dur=26)],
        window=(day1.date(), day1.date() + timedelta(days=1)),
    )
    np.testing.assert_array_equal(daily_series(tl, EventKind.CALL, None, Window.ALL, "duration"), [56, 0])


def test_daily_series_duration_for_sms_is_contract_violation():
    tl = _timeline([_sms(SUNDAY)])
    with pytest.raises(ValueError):
        daily_series(tl, EventKind.SMS, None, Window.ALL, "duration")


# --- home site ----------------------------------------------------------


def test_home_site_modal_night_site():
    night = SUNDAY.replace(hour=23)
    recs = [_call(night, cell="C1")] * 3 + [_call(night, cell="C2"), _call(SUNDAY.replace(hour=12), cell="C2")] * 2
    # night: S1 x3, S2 x2 ; day record on S2 is ignored
    assert home_site(_timeline(recs[:4]), CELLS) == "S1"
    assert home_site(_timeline([_call(night, cell="C1")]), CELLS) == "S1"


def test_home_site_tie_goes_to_smallest_id_and_absence():
    night = SUNDAY.replace(hour=2)
    tl = _timeline([_call(night, cell="C2"), _call(night, cell="C1")])
    assert home_site(tl, CELLS) == "S1"
    assert home_site(_timeline([_call(SUNDAY.replace(hour=12))]), CELLS) is None
    assert home_site(_timeline([_call(night, cell="C-unknown")]), CELLS) is None


# --- catalog ------------------------------------------------------------


def test_catalog_shape():
    cat = catalog()
    assert len(cat) >= 200
    names = cat.names()
    assert len(set(names)) == len(names)
    assert len(set(cat.columns())) == len(cat.columns())
    assert {e.family for e in cat} == set(Family)
    assert catalog() is cat


def test_catalog_contains_named_examples():
    names = set(catalog().names())
    for n in (
        "call_any_duration_daily_mean_all",  # average call duration per day
        "call_any_duration_entropy",  # entropy of duration
        "call_out_duration_daily_std_day",
        "call_in_duration_daily_mean_night",
        "sms_in_count_daily_std_worktime",
        "sms_any_share_holiday",  # probability of SMS on holiday
        "txn_any_contacts",
        "txn_any_contact_entropy",
        "txn_in_per_contact_mean",
        "txn_out_per_contact_std",
        "gyration_km",
        "gyration_km_holiday",
        "home_area_type",
        "antenna_entropy_night",
        "antenna_entropy_day",
        "antenna_entropy_workday",
        "antenna_entropy_holiday",
        "pct_outside_home",
        "service_economy",
        "tariff_type",
        "gsm_type",
        "call_in_duration_entropy",
    ):
        assert n in names


def test_catalog_jsonl():
    buf = io.StringIO()
    catalog().to_jsonl(buf)
    rows = [json.loads(line) for line in buf.getvalue().splitlines()]
    assert [r["name"] for r in rows] == catalog().names()
    assert {r["kind"] for r in rows} == {"Statistical", "Categorical"}


# --- extraction ---------------------------------------------------------


def test_empty_timeline_defaults():
    window = (date(2018, 10, 1), date(2018, 10, 3))
    services = {"+963A": ServiceEnrollment("+963A", (1,) + (0,) * 12)}
    contracts = {"+963A": ContractInfo("+963A", "BASIC", "4G")}
    tl = build_timelines(CdrTable.empty(), services, contracts, gsms=["+963A"], window=window)["+963A"]
    v = _vector(tl, CELLS)
    assert all(math.isfinite(x) for x in v.values())
    assert v["service_economy"] == 1.0
    assert v["tariff_type=BASIC"] == 1.0 and v["gsm_type=4G"] == 1.0
    assert v["home_area_type=Unknown"] == 1.0
    behavioral = [k for k in v if not k.startswith(("service_", "tariff_", "gsm_type", "home_area"))]
    assert all(v[k] == 0.0 for k in behavioral)


def test_single_contact_entropy_zero():
    recs = [_call(SUNDAY + timedelta(hours=h), dur=10 + h) for h in range(10)]
    v = _vector(_timeline(recs), CELLS)
    assert v["call_any_duration_entropy"] == 0.0
    assert v["call_out_duration_entropy"] == 0.0


def test_hand_built_two_day_timeline():
    d1 = SUNDAY.replace(hour=10)
    recs = [
        _call(d1, peer="+963B", dur=30, direction=Direction.OUT),
        _call(d1 + timedelta(hours=13), peer="+963C", dur=26, direction=Direction.IN, cell="C2"),
        _sms(d1 + timedelta(hours=16), peer="+963B"),
    ]
    tl = _timeline(recs)
    v = _vector(tl, CELLS)
    ref = reference_features(tl, CELLS)
    for k, x in ref.items():
        assert v[k] == pytest.approx(x, rel=1e-9, abs=1e-9), k
    # spot checks by hand
    assert v["call_any_duration_daily_mean_all"] == pytest.approx(28.0)
    assert v["call_any_duration_daily_std_all"] == pytest.approx(math.sqrt(2 * 28.0**2))
    assert v["call_any_duration_entropy"] == pytest.approx(
        -(30 / 56) * math.log2(30 / 56) - (26 / 56) * math.log2(26 / 56)
    )
    assert v["txn_any_contacts"] == 2.0
    assert v["call_any_share_day"] == 0.5
    # night records: C2 (S2) on day 1 23:00 and C1 (S1) on day 2 02:00 -> tie -> S1
    assert v["pct_outside_home"] == pytest.approx(100 / 3)


@pytest.mark.parametrize("seed", range(25))
def test_matches_reference_on_random_timelines(seed):
    tl, cells = random_timeline(seed)
    v = _vector(tl, cells)
    ref = reference_features(tl, cells)
    assert set(ref) == set(v)
    for k, x in ref.items():
        assert v[k] == pytest.approx(x, rel=1e-9, abs=1e-9), k


@pytest.mark.parametrize("seed", range(10))
def test_disjoint_window_covers(seed):
    tl, cells = random_timeline(seed + 100)
    v = _vector(tl, cells)
    for kind in ("call", "sms", "txn"):
        for d in ("in", "out", "any"):
            for stat in ("mean",):
                total = v[f"{kind}_{d}_count_daily_{stat}_all"]
                assert v[f"{kind}_{d}_count_daily_{stat}_workday"] + v[
                    f"{kind}_{d}_count_daily_{stat}_holiday"
                ] == pytest.approx(total, abs=1e-9)
                assert v[f"{kind}_{d}_count_daily_{stat}_day"] + v[
                    f"{kind}_{d}_count_daily_{stat}_night"
                ] == pytest.approx(total, abs=1e-9)
            if v[f"{kind}_{d}_count_daily_mean_all"] > 0:
                assert v[f"{kind}_{d}_share_workday"] + v[f"{kind}_{d}_share_holiday"] == pytest.approx(1.0)
                assert v[f"{kind}_{d}_share_day"] + v[f"{kind}_{d}_share_night"] == pytest.approx(1.0)


def test_feature_matrix_threads_identical_and_csv_round_trip():
    tls = [random_timeline(s)[0] for s in range(3)]
    # timelines from different tables have separate vocabularies; use one table
    tl, cells = random_timeline(42)
    recs = list(tl.records)
    for g in ("+963X", "+963Y"):
        recs += [CdrRecord(r.event_kind, g, r.peer_gsm, r.direction, r.cell_id, r.duration_s, r.timestamp) for r in recs[:20]]
    tls = build_timelines(CdrTable.from_records(recs))
    gsms1, m1 = feature_matrix(tls, cells, threads=1)
    gsms4, m4 = feature_matrix(tls, cells, threads=4)
    assert gsms1 == gsms4 and np.array_equal(m1, m4)
    buf = io.StringIO()
    write_feature_csv(buf, gsms1, m1)
    buf.seek(0)
    cols, gsms, m = read_feature_csv(buf)
    assert cols == catalog().columns() and gsms == gsms1
    assert np.array_equal(m, m1)
