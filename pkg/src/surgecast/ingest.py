"""Alert-stream ingestion: parse, stratify by severity, bin per minute.

Input is line-delimited JSON in the shape IDS engines emit (one object per
line with an RFC3339 ``timestamp`` and a severity field, ``alert.severity``
by default), or a plain two-column CSV fallback ``timestamp,severity``.
Malformed lines are skipped and counted, never fatal.

Binning floors each timestamp onto a fixed-width grid anchored at the Unix
epoch; the series origin is the floor of the earliest record and the counts
array is contiguous and zero-filled, so bin t covers
``[origin + t*width, origin + (t+1)*width)``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import ValidationError

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_MS = timedelta(milliseconds=1)


class Severity(str, Enum):
    CRITICAL = "Critical"
    MAJOR = "Major"
    MINOR = "Minor"
    INFORMATIONAL = "Informational"
    UNKNOWN = "Unknown"


#: Fixed display/processing order for the five strata.
STRATUM_ORDER: tuple[str, ...] = tuple(s.value for s in Severity)

#: Default severity mapping: engine numeric priorities plus name aliases.
#: Keys are matched case-insensitively; anything unmapped lands in Unknown.
DEFAULT_SEVERITY_MAP: dict[str, str] = {
    "1": "Critical",
    "2": "Major",
    "3": "Minor",
    "4": "Informational",
    "critical": "Critical",
    "major": "Major",
    "minor": "Minor",
    "informational": "Informational",
    "info": "Informational",
    "unknown": "Unknown",
}

_TS_RE = re.compile(
    r"^(\d{4})-(\d{2})-(\d{2})[Tt ](\d{2}):(\d{2}):(\d{2})"
    r"(?:\.(\d{1,9}))?(Z|z|[+-]\d{2}:?\d{2})?$"
)


def parse_timestamp(text: str) -> datetime:
    """Parse an RFC3339-style timestamp to a UTC datetime.

    Accepts ``Z`` or numeric offsets (with or without a colon) and up to
    nanosecond fractional digits (truncated to microseconds). A missing
    offset is taken as UTC. Raises ValidationError on anything else.
    """
    m = _TS_RE.match(text.strip())
    if m is None:
        raise ValidationError(f"unparseable timestamp {text!r}")
    frac = (m.group(7) or "").ljust(6, "0")[:6]
    tz = m.group(8)
    if tz is None or tz in ("Z", "z"):
        offset = timezone.utc
    else:
        sign = 1 if tz[0] == "+" else -1
        hh, mm = int(tz[1:3]), int(tz[-2:])
        offset = timezone(sign * timedelta(hours=hh, minutes=mm))
    try:
        dt = datetime(
            int(m.group(1)), int(m.group(2)), int(m.group(3)),
            int(m.group(4)), int(m.group(5)), int(m.group(6)),
            int(frac), tzinfo=offset,
        )
    except ValueError as exc:
        raise ValidationError(f"unparseable timestamp {text!r}") from exc
    return dt.astimezone(timezone.utc)


def epoch_ms(ts: datetime) -> int:
    """Milliseconds since the Unix epoch, exact integer arithmetic."""
    return (ts - EPOCH) // _MS


@dataclass(frozen=True)
class AlertRecord:
    """One alert: UTC instant, severity stratum, and passthrough fields.

    ``raw_fields`` keeps every other input field (flattened to dotted keys,
    values stringified) so nothing is dropped; none of it is modeled.
    """

    ts: datetime
    severity: Severity
    raw_fields: dict[str, str] = field(default_factory=dict)


@dataclass
class ParseStats:
    parsed: int = 0
    skipped: int = 0


@dataclass
class IngestConfig:
    timestamp_field: str = "timestamp"
    severity_field: str = "alert.severity"
    bin_width_s: int = 60
    severity_map: dict[str, str] = field(
        default_factory=lambda: dict(DEFAULT_SEVERITY_MAP)
    )

    def __post_init__(self) -> None:
        if self.bin_width_s < 1:
            raise ValidationError("bin_width_s must be a positive integer")
        for key, name in self.severity_map.items():
            if name not in STRATUM_ORDER:
                raise ValidationError(
                    f"severity_map[{key!r}] = {name!r} is not one of {STRATUM_ORDER}"
                )

    def map_severity(self, value) -> Severity:
        name = self.severity_map.get(str(value).strip().lower())
        return Severity(name) if name is not None else Severity.UNKNOWN

    def to_kv(self) -> dict[str, str]:
        out = {
            "timestamp_field": self.timestamp_field,
            "severity_field": self.severity_field,
            "bin_width_s": str(self.bin_width_s),
        }
        for key, name in self.severity_map.items():
            out[f"severity_map.{key}"] = name
        return out

    @classmethod
    def from_kv(cls, entries: dict[str, str]) -> "IngestConfig":
        from . import config as kv

        sev = {
            key[len("severity_map."):]: value
            for key, value in entries.items()
            if key.startswith("severity_map.")
        }
        return cls(
            timestamp_field=kv.kv_str(entries, "timestamp_field", "timestamp"),
            severity_field=kv.kv_str(entries, "severity_field", "alert.severity"),
            bin_width_s=kv.kv_int(entries, "bin_width_s", 60),
            severity_map=sev or dict(DEFAULT_SEVERITY_MAP),
        )


def _dig(obj, dotted: str):
    cur = obj
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return None
        cur = cur[part]
    return cur


def _flatten(obj: dict, prefix: str = "") -> dict[str, str]:
    out: dict[str, str] = {}
    for key, value in obj.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, path + "."))
        else:
            out[path] = value if isinstance(value, str) else json.dumps(value)
    return out


def parse_alert_line(
    line: str, config: IngestConfig, want_raw: bool = True
) -> AlertRecord | None:
    """Parse one input line; return None for anything malformed.

    JSON object lines are tried first; otherwise the line is treated as the
    CSV fallback ``timestamp,severity``. A literal CSV header row is ignored.
    """
    line = line.strip()
    if not line:
        return None
    if line.startswith("{"):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            return None
        if not isinstance(obj, dict):
            return None
        ts_raw = _dig(obj, config.timestamp_field)
        if not isinstance(ts_raw, str):
            return None
        try:
            ts = parse_timestamp(ts_raw)
        except ValidationError:
            return None
        sev_raw = _dig(obj, config.severity_field)
        severity = config.map_severity(sev_raw) if sev_raw is not None else Severity.UNKNOWN
        raw = _flatten(obj) if want_raw else {}
        return AlertRecord(ts=ts, severity=severity, raw_fields=raw)
    parts = line.split(",")
    if len(parts) < 2:
        return None
    if parts[0].strip().lower() == "timestamp":
        return None
    try:
        ts = parse_timestamp(parts[0])
    except ValidationError:
        return None
    return AlertRecord(ts=ts, severity=config.map_severity(parts[1]), raw_fields={})


def read_alert_stream(
    lines: Iterable[str],
    config: IngestConfig,
    stats: ParseStats | None = None,
    want_raw: bool = True,
) -> Iterator[AlertRecord]:
    """Yield parsed records from an iterable of lines, counting skips.

    Blank lines and the CSV header row are ignored without counting.
    """
    for line in lines:
        stripped = line.strip()
        if not stripped or stripped.split(",", 1)[0].strip().lower() == "timestamp":
            continue
        record = parse_alert_line(stripped, config, want_raw=want_raw)
        if record is None:
            if stats is not None:
                stats.skipped += 1
            continue
        if stats is not None:
            stats.parsed += 1
        yield record


def open_alert_file(
    path: str | Path,
    config: IngestConfig,
    stats: ParseStats | None = None,
    want_raw: bool = True,
) -> Iterator[AlertRecord]:
    with open(path, "r", encoding="utf-8") as handle:
        yield from read_alert_stream(handle, config, stats, want_raw=want_raw)


@dataclass
class BinnedSeries:
    """Contiguous zero-filled per-bin counts for one stratum."""

    stratum: str
    origin: datetime
    bin_width_s: int
    counts: np.ndarray

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.bin_width_s < 1:
            raise ValidationError("bin_width_s must be a positive integer")
        if self.counts.ndim != 1 or self.counts.size < 1:
            raise ValidationError("counts must be a non-empty 1-D array")
        if (self.counts < 0).any():
            raise ValidationError("counts must be non-negative")
        if self.origin.tzinfo is None:
            raise ValidationError("origin must be timezone-aware UTC")

    @property
    def n_bins(self) -> int:
        return int(self.counts.size)

    def bin_start(self, index: int) -> datetime:
        return self.origin + timedelta(seconds=index * self.bin_width_s)


def _bin_index(ms: int, origin_ms: int, width_ms: int) -> int:
    return (ms - origin_ms) // width_ms


def bin_alerts(
    records: Iterable[AlertRecord],
    bin_width_s: int = 60,
    stratum: str | None = None,
    span: tuple[datetime, int] | None = None,
) -> BinnedSeries:
    """Bin records (optionally one stratum) onto a fixed grid.

    Without ``span`` the origin is the floor of the earliest matching record
    and the series ends at the bin of the latest one. With ``span`` (origin,
    n_bins) the axis is forced, e.g. to align several strata; records outside
    it are an error. Total count is conserved: sum(counts) == len(matching).
    """
    if bin_width_s < 1:
        raise ValidationError("bin_width_s must be a positive integer")
    width_ms = bin_width_s * 1000
    ms_values = [
        epoch_ms(r.ts)
        for r in records
        if stratum is None or r.severity.value == stratum
    ]
    label = stratum if stratum is not None else "All"
    if not ms_values:
        raise ValidationError(f"no records for stratum {label!r}")
    arr = np.asarray(ms_values, dtype=np.int64)
    if span is None:
        origin_ms = int(arr.min()) // width_ms * width_ms
        n_bins = int((arr.max() - origin_ms) // width_ms) + 1
    else:
        origin_dt, n_bins = span
        origin_ms = epoch_ms(origin_dt)
        if origin_ms % width_ms != 0:
            raise ValidationError("span origin must sit on a bin boundary")
    idx = (arr - origin_ms) // width_ms
    if span is not None and ((idx < 0).any() or (idx >= n_bins).any()):
        raise ValidationError("record outside the forced span")
    counts = np.bincount(idx, minlength=n_bins).astype(np.int64)
    origin = EPOCH + timedelta(milliseconds=origin_ms)
    return BinnedSeries(stratum=label, origin=origin, bin_width_s=bin_width_s, counts=counts)


def bin_by_stratum(
    records: Iterable[AlertRecord], bin_width_s: int = 60
) -> dict[str, BinnedSeries]:
    """Single-pass binning of every stratum present, on one shared axis.

    The shared origin is the floor of the earliest record overall, so minute
    indexes are comparable across strata.
    """
    if bin_width_s < 1:
        raise ValidationError("bin_width_s must be a positive integer")
    width_ms = bin_width_s * 1000
    per_stratum: dict[str, list[int]] = {}
    lo = hi = None
    for record in records:
        ms = epoch_ms(record.ts)
        per_stratum.setdefault(record.severity.value, []).append(ms)
        lo = ms if lo is None or ms < lo else lo
        hi = ms if hi is None or ms > hi else hi
    if lo is None:
        raise ValidationError("no records to bin")
    origin_ms = lo // width_ms * width_ms
    n_bins = int((hi - origin_ms) // width_ms) + 1
    origin = EPOCH + timedelta(milliseconds=origin_ms)
    out: dict[str, BinnedSeries] = {}
    for name in STRATUM_ORDER:
        if name not in per_stratum:
            continue
        idx = (np.asarray(per_stratum[name], dtype=np.int64) - origin_ms) // width_ms
        counts = np.bincount(idx, minlength=n_bins).astype(np.int64)
        out[name] = BinnedSeries(
            stratum=name, origin=origin, bin_width_s=bin_width_s, counts=counts
        )
    return out


def downsample(
    records: Iterable[AlertRecord], fraction: float, seed: int
) -> Iterator[AlertRecord]:
    """Stratified thinning: keep each record with probability ``fraction``.

    Each stratum gets its own seeded RNG stream, so a stratum's sample does
    not depend on how other strata interleave with it. Order is preserved.
    The fraction bound is checked eagerly, before any record is consumed.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValidationError("fraction must be in (0, 1]")

    def thin() -> Iterator[AlertRecord]:
        rngs: dict[str, np.random.Generator] = {}
        for record in records:
            name = record.severity.value
            rng = rngs.get(name)
            if rng is None:
                rng = np.random.default_rng([seed, STRATUM_ORDER.index(name)])
                rngs[name] = rng
            if rng.random() < fraction:
                yield record

    return thin()


def iso_utc(ts: datetime, ms: bool = False) -> str:
    ts = ts.astimezone(timezone.utc)
    if ms:
        return ts.strftime("%Y-%m-%dT%H:%M:%S.") + f"{ts.microsecond // 1000:03d}Z"
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


def write_binned_csv(series: BinnedSeries, path: str | Path) -> None:
    lines = ["minute_index,utc_start,count"]
    origin_ms = epoch_ms(series.origin)
    width_ms = series.bin_width_s * 1000
    for i in range(series.n_bins):
        start = EPOCH + timedelta(milliseconds=origin_ms + i * width_ms)
        lines.append(f"{i},{iso_utc(start)},{int(series.counts[i])}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_binned_csv(
    path: str | Path, stratum: str, bin_width_s: int | None = None
) -> BinnedSeries:
    """Read a binned CSV back. Width is inferred from the first two rows
    (falling back to ``bin_width_s`` or 60 for single-row files); the
    minute_index column must be exactly 0..n-1."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split(",")[0] != "minute_index":
        raise ValidationError(f"{path}: not a binned-series CSV")
    starts: list[int] = []
    counts: list[int] = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 3:
            raise ValidationError(f"{path}:{lineno}: expected 3 columns")
        if int(parts[0]) != lineno - 2:
            raise ValidationError(f"{path}:{lineno}: minute_index not contiguous")
        starts.append(epoch_ms(parse_timestamp(parts[1])))
        counts.append(int(parts[2]))
    if not counts:
        raise ValidationError(f"{path}: empty series")
    if len(starts) >= 2:
        width_ms = starts[1] - starts[0]
        if width_ms <= 0 or width_ms % 1000 != 0:
            raise ValidationError(f"{path}: inconsistent bin width")
        width_s = width_ms // 1000
        if any(starts[i + 1] - starts[i] != width_ms for i in range(len(starts) - 1)):
            raise ValidationError(f"{path}: bins not contiguous")
    else:
        width_s = bin_width_s if bin_width_s is not None else 60
    origin = EPOCH + timedelta(milliseconds=starts[0])
    return BinnedSeries(
        stratum=stratum,
        origin=origin,
        bin_width_s=int(width_s),
        counts=np.asarray(counts, dtype=np.int64),
    )
