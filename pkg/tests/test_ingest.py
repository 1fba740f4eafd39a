from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from surgecast.errors import ValidationError
from surgecast.ingest import (
    AlertRecord,
    BinnedSeries,
    IngestConfig,
    ParseStats,
    Severity,
    bin_alerts,
    bin_by_stratum,
    downsample,
    epoch_ms,
    parse_alert_line,
    parse_timestamp,
    read_alert_stream,
    read_binned_csv,
    write_binned_csv,
)

from conftest import T0, UTC, jsonl_line

CFG = IngestConfig()


# --- timestamp parsing ------------------------------------------------------


def test_parse_timestamp_zulu_with_millis():
    ts = parse_timestamp("2024-12-06T00:00:30.123Z")
    assert ts == datetime(2024, 12, 6, 0, 0, 30, 123000, tzinfo=UTC)


def test_parse_timestamp_numeric_offset():
    ts = parse_timestamp("2024-12-06T01:00:00+02:00")
    assert ts == datetime(2024, 12, 5, 23, 0, 0, tzinfo=UTC)


def test_parse_timestamp_naive_is_utc():
    ts = parse_timestamp("2024-12-06 10:20:30")
    assert ts == datetime(2024, 12, 6, 10, 20, 30, tzinfo=UTC)


def test_parse_timestamp_garbage_rejected():
    for bad in ("yesterday", "2024-13-01T00:00:00Z", "", "2024-12-06T99:00:00Z"):
        with pytest.raises(ValidationError):
            parse_timestamp(bad)


# --- line parsing -----------------------------------------------------------


def test_parse_eve_line_maps_severity_name():
    rec = parse_alert_line(
        jsonl_line("2024-12-06T00:00:30.123Z", "critical"), CFG
    )
    assert rec is not None
    assert rec.severity is Severity.CRITICAL
    assert rec.ts == datetime(2024, 12, 6, 0, 0, 30, 123000, tzinfo=UTC)


def test_parse_eve_line_numeric_suricata_map():
    for value, expected in [(1, Severity.CRITICAL), (2, Severity.MAJOR),
                            (3, Severity.MINOR), (4, Severity.INFORMATIONAL)]:
        rec = parse_alert_line(jsonl_line("2024-12-06T00:00:00Z", value), CFG)
        assert rec.severity is expected


def test_parse_unmapped_severity_is_unknown():
    for value in (5, "whatever", None):
        line = jsonl_line("2024-12-06T00:00:00Z", value)
        assert parse_alert_line(line, CFG).severity is Severity.UNKNOWN


def test_parse_missing_severity_field_is_unknown():
    rec = parse_alert_line('{"timestamp": "2024-12-06T00:00:00Z"}', CFG)
    assert rec.severity is Severity.UNKNOWN


def test_parse_missing_timestamp_skips():
    assert parse_alert_line('{"alert": {"severity": 1}}', CFG) is None


def test_parse_malformed_timestamp_skips():
    assert parse_alert_line(jsonl_line("not a time", 1), CFG) is None


def test_parse_broken_json_skips():
    assert parse_alert_line('{"timestamp": "2024-', CFG) is None
    assert parse_alert_line("[1, 2, 3]", CFG) is None


def test_parse_csv_fallback():
    rec = parse_alert_line("2024-12-06T00:00:30Z,critical", CFG)
    assert rec.severity is Severity.CRITICAL
    assert parse_alert_line("timestamp,severity", CFG) is None  # header
    assert parse_alert_line("lonely-field", CFG) is None


def test_parse_keeps_raw_fields_flattened():
    line = jsonl_line("2024-12-06T00:00:00Z", 1, src_ip="10.0.0.1",
                      flow={"bytes": 40})
    rec = parse_alert_line(line, CFG)
    assert rec.raw_fields["src_ip"] == "10.0.0.1"
    assert rec.raw_fields["flow.bytes"] == "40"
    assert rec.raw_fields["alert.severity"] == "1"


def test_configured_severity_path_and_map():
    cfg = IngestConfig(severity_field="sev", severity_map={"3": "Minor"})
    rec = parse_alert_line('{"timestamp": "2024-12-06T00:00:00Z", "sev": 3}', cfg)
    assert rec.severity is Severity.MINOR


def test_read_alert_stream_counts_skips():
    lines = [
        jsonl_line("2024-12-06T00:00:00Z", 1),
        "",
        "timestamp,severity",
        '{"nope": true}',
        jsonl_line("2024-12-06T00:01:00Z", 2),
    ]
    stats = ParseStats()
    records = list(read_alert_stream(lines, CFG, stats))
    assert [r.severity for r in records] == [Severity.CRITICAL, Severity.MAJOR]
    assert stats.parsed == 2
    assert stats.skipped == 1  # blank line and header are not counted


# --- binning ----------------------------------------------------------------


def _rec(offset_s: float, severity: Severity = Severity.CRITICAL) -> AlertRecord:
    return AlertRecord(ts=T0 + timedelta(seconds=offset_s), severity=severity)


def test_bin_alerts_floor_and_zero_fill():
    series = bin_alerts([_rec(10), _rec(50), _rec(125)], 60, "Critical")
    assert series.counts.tolist() == [2, 0, 1]
    assert series.origin == T0


def test_bin_alerts_single_record():
    series = bin_alerts([_rec(5)], 60, "Critical")
    assert series.counts.tolist() == [1]
    assert series.n_bins == 1


def test_bin_alerts_count_conservation():
    rng = np.random.default_rng(3)
    offsets = rng.uniform(0, 100 * 60, 10_000)
    series = bin_alerts([_rec(o) for o in offsets], 60, "Critical")
    assert int(series.counts.sum()) == 10_000


def test_bin_alerts_out_of_order_input():
    series = bin_alerts([_rec(125), _rec(10), _rec(50)], 60, "Critical")
    assert series.counts.tolist() == [2, 0, 1]


def test_bin_alerts_origin_floored_to_bin_boundary():
    series = bin_alerts([_rec(90)], 60, "Critical")
    assert series.origin == T0 + timedelta(seconds=60)
    assert epoch_ms(series.origin) % 60_000 == 0


def test_bin_alerts_empty_stream_is_error():
    with pytest.raises(ValidationError, match="no records for stratum"):
        bin_alerts([_rec(1, Severity.MINOR)], 60, "Critical")


def test_bin_alerts_forced_span():
    span = (T0, 5)
    series = bin_alerts([_rec(70)], 60, "Critical", span=span)
    assert series.counts.tolist() == [0, 1, 0, 0, 0]
    with pytest.raises(ValidationError, match="outside the forced span"):
        bin_alerts([_rec(301)], 60, "Critical", span=span)


def test_bin_by_stratum_shares_axis():
    records = [_rec(10, Severity.MAJOR), _rec(200, Severity.CRITICAL)]
    series = bin_by_stratum(records, 60)
    assert set(series) == {"Major", "Critical"}
    assert series["Major"].origin == series["Critical"].origin == T0
    assert series["Major"].n_bins == series["Critical"].n_bins == 4
    assert series["Critical"].counts.tolist() == [0, 0, 0, 1]


def test_binned_series_validation():
    with pytest.raises(ValidationError):
        BinnedSeries("Critical", T0, 60, np.array([1, -1]))
    with pytest.raises(ValidationError):
        BinnedSeries("Critical", T0.replace(tzinfo=None), 60, np.array([1]))
    with pytest.raises(ValidationError):
        BinnedSeries("Critical", T0, 0, np.array([1]))


# --- downsampling -----------------------------------------------------------


def test_downsample_identity_at_one():
    records = [_rec(i) for i in range(100)]
    assert list(downsample(iter(records), 1.0, seed=1)) == records


def test_downsample_binomial_bound():
    records = [_rec(i * 0.006) for i in range(1_000_000)]
    kept = sum(1 for _ in downsample(iter(records), 0.1, seed=42))
    assert 99_000 <= kept <= 101_000


def test_downsample_preserves_order_and_determinism():
    records = [_rec(i, Severity.CRITICAL if i % 2 else Severity.MAJOR)
               for i in range(5000)]
    once = list(downsample(iter(records), 0.3, seed=9))
    again = list(downsample(iter(records), 0.3, seed=9))
    assert once == again
    times = [r.ts for r in once]
    assert times == sorted(times)


def test_downsample_fraction_bounds():
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValidationError):
            list(downsample(iter([_rec(0)]), bad, seed=1))


# --- CSV round-trip ---------------------------------------------------------


def test_binned_csv_roundtrip(tmp_path):
    series = bin_alerts([_rec(10), _rec(50), _rec(125)], 60, "Critical")
    path = tmp_path / "binned_Critical.csv"
    write_binned_csv(series, path)
    back = read_binned_csv(path, "Critical")
    assert back.counts.tolist() == series.counts.tolist()
    assert back.origin == series.origin
    assert back.bin_width_s == series.bin_width_s
    header = path.read_text().splitlines()[0]
    assert header == "minute_index,utc_start,count"


def test_ingest_config_validation_and_kv():
    with pytest.raises(ValidationError):
        IngestConfig(bin_width_s=0)
    with pytest.raises(ValidationError):
        IngestConfig(severity_map={"1": "NotAStratum"})
    cfg = IngestConfig(severity_field="sev", bin_width_s=30,
                       severity_map={"9": "Unknown"})
    back = IngestConfig.from_kv(cfg.to_kv())
    assert back == cfg
