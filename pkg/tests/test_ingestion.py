import hashlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fuzzmon.ingestion import (CSV_HEADER, DEFAULT_START, AnomalyScenario, IngestError, MetricRecord,
                               ScenarioKind, generate, generate_trace, parse_scenario, read_csv,
                               read_scenarios, windowize, write_csv, write_scenarios)
from fuzzmon.knowledge_base import DayClass, TimeBucketKey

HOUR = 3600
DAY = 86400


@pytest.fixture(scope="module")
def clean_week():
    return generate_trace(7, 7)


def write(path, rows):
    path.write_text(CSV_HEADER + "\n" + "".join(r + "\n" for r in rows))
    return path


def test_read_three_records(tmp_path):
    f = write(tmp_path / "t.csv", ["0,10,7000,0.1", "1,11,7700,0.2", "2,12,8400,0.3"])
    recs = list(read_csv(f))
    assert [r.timestamp for r in recs] == [0, 1, 2]
    assert recs[2].utilization == 0.3


def test_header_only_is_empty(tmp_path):
    assert list(read_csv(write(tmp_path / "t.csv", []))) == []


def test_bad_utilization_cites_line(tmp_path):
    rows = [f"{i},1,1,0.5" for i in range(5)] + ["5,1,1,1.5"]
    with pytest.raises(IngestError) as ei:
        list(read_csv(write(tmp_path / "t.csv", rows)))
    assert ei.value.line == 7
    assert "line 7" in str(ei.value)


@pytest.mark.parametrize("row, message", [
    ("1,2,3", "expected 4 fields"),
    ("1,x,3,0.1", "malformed number"),
    ("0,1,1,0.1", "strictly increasing"),
    ("1,-1,1,0.1", "negative rate"),
])
def test_malformed_lines(tmp_path, row, message):
    with pytest.raises(IngestError, match=message):
        list(read_csv(write(tmp_path / "t.csv", ["0,1,1,0.1", row])))


def test_wrong_header(tmp_path):
    f = tmp_path / "t.csv"
    f.write_text("ts,pps,bps,util\n0,1,1,0.1\n")
    with pytest.raises(IngestError, match="header"):
        list(read_csv(f))


def test_csv_round_trip(tmp_path):
    # values exact at the six-decimal precision of the format
    recs = [MetricRecord(t, t * 1.5, t * 700.25, t / 1000) for t in range(10)]
    write_csv(recs, tmp_path / "t.csv")
    assert list(read_csv(tmp_path / "t.csv")) == recs


def rec(t, pps=1.0):
    return MetricRecord(t, pps, pps * 100, 0.01)


def test_one_full_window():
    ws = list(windowize([rec(t) for t in range(60)], 60))
    assert len(ws) == 1 and ws[0].record_count == 60


def test_gap_marker_between_windows():
    ws = list(windowize([rec(0), rec(120)], 60))
    assert [(w.start, w.end, w.record_count) for w in ws] == [(0, 60, 1), (60, 120, 0), (120, 180, 1)]
    assert ws[1].is_gap and ws[1].metric("packets_per_sec") == 0.0


def test_window_mean_and_bucket():
    ws = list(windowize([rec(DEFAULT_START + i, p) for i, p in enumerate([10, 20, 30])], 60))
    assert ws[0].values["packets_per_sec"] == 20
    assert ws[0].bucket == TimeBucketKey(0, DayClass.WEEKDAY)
    assert ws[0].end - ws[0].start == 60


@given(st.lists(st.integers(0, 5000), unique=True).map(sorted), st.sampled_from([1, 7, 60, 300]))
def test_windowize_conservation(times, length):
    ws = list(windowize([rec(t) for t in times], length))
    assert sum(w.record_count for w in ws) == len(times)
    assert all(b.start == a.end for a, b in zip(ws, ws[1:]))
    assert all(w.start % length == 0 for w in ws)


def digest(records):
    h = hashlib.sha256()
    for r in records:
        h.update(repr(r).encode())
    return h.hexdigest()


def test_generator_deterministic():
    sc = [AnomalyScenario(ScenarioKind.ABUSE, DEFAULT_START + 5 * HOUR, HOUR, 3.0)]
    assert digest(generate(11, 1, sc)) == digest(generate(11, 1, sc))
    assert digest(generate(11, 1)) != digest(generate(12, 1))


def test_generated_records_satisfy_invariants(clean_week):
    assert np.all(np.diff(clean_week.timestamps) > 0)
    assert np.all(clean_week.packets_per_sec >= 0)
    assert np.all((clean_week.utilization >= 0) & (clean_week.utilization <= 1))


def test_outage_zeroes_rates():
    s = AnomalyScenario(ScenarioKind.OUTAGE, DEFAULT_START + 10 * HOUR, 2 * HOUR)
    tr = generate_trace(3, 1, [s])
    inside = (tr.timestamps >= s.start) & (tr.timestamps < s.end)
    assert inside.sum() == 2 * HOUR
    assert np.all(tr.packets_per_sec[inside] == 0) and np.all(tr.utilization[inside] == 0)
    assert np.all(tr.packets_per_sec[~inside] > 0)


def test_flash_crowd_peak_vs_clean_trace():
    s = AnomalyScenario(ScenarioKind.FLASH_CROWD, DEFAULT_START + 3 * HOUR, HOUR, 10.0)
    flash, clean = generate_trace(5, 1, [s]), generate_trace(5, 1)
    inside = (flash.timestamps >= s.start) & (flash.timestamps < s.end)
    ratio = flash.packets_per_sec[inside] / clean.packets_per_sec[inside]
    assert ratio.max() >= 5.0
    assert np.array_equal(flash.packets_per_sec[~inside], clean.packets_per_sec[~inside])


def test_abuse_and_config_change():
    abuse = AnomalyScenario(ScenarioKind.ABUSE, DEFAULT_START + HOUR, HOUR, 5.0)
    shift = AnomalyScenario(ScenarioKind.CONFIG_CHANGE, DEFAULT_START + 20 * HOUR, HOUR, 2.0)
    base = generate_trace(9, 1)
    tr = generate_trace(9, 1, [abuse, shift])
    at = lambda t: int(t - DEFAULT_START)
    assert tr.packets_per_sec[at(abuse.start) + 10] > 2 * base.packets_per_sec[at(abuse.start) + 10]
    late = slice(at(shift.start), None)
    assert np.allclose(tr.packets_per_sec[late], 2 * base.packets_per_sec[late])


def test_conflicting_scenarios_rejected():
    a = AnomalyScenario(ScenarioKind.OUTAGE, DEFAULT_START + HOUR, HOUR)
    b = AnomalyScenario(ScenarioKind.FLASH_CROWD, DEFAULT_START + HOUR + 60, HOUR, 4.0)
    with pytest.raises(ValueError, match="conflicting"):
        generate_trace(1, 1, [a, b])
    with pytest.raises(ValueError, match="outside"):
        generate_trace(1, 1, [AnomalyScenario(ScenarioKind.OUTAGE, DEFAULT_START + DAY - 10, 60)])
    with pytest.raises(ValueError):
        AnomalyScenario(ScenarioKind.OUTAGE, DEFAULT_START, 0)


def test_bucket_means_repeat_across_days(clean_week):
    # weekday hours, one mean per (day, hour)
    pps = clean_week.packets_per_sec.reshape(7, 24, HOUR).mean(axis=2)[:5]
    cv = pps.std(axis=0) / pps.mean(axis=0)
    assert cv.max() < 0.3


def test_scenario_sidecar_round_trip(tmp_path):
    sc = [parse_scenario("flash_crowd:3600:600:10"), parse_scenario("outage:7200:60")]
    write_scenarios(sc, tmp_path / "s.csv")
    assert read_scenarios(tmp_path / "s.csv") == sc
    assert sc[1].magnitude == 1.0 and sc[0].start == DEFAULT_START + 3600
    (tmp_path / "bad.csv").write_text("kind,start,duration,magnitude\nsurge,1,2,3\n")
    with pytest.raises(IngestError) as ei:
        read_scenarios(tmp_path / "bad.csv")
    assert ei.value.line == 2
