"""Line-oriented ``key = value`` configuration format.

One entry per line::

    # comment
    key = value

Keys are dotted identifiers (``stratum.Critical.base_rate``). Values are kept
as raw strings, stripped of surrounding whitespace; commas delimit lists.
Blank lines and ``#`` comments are ignored. Duplicate keys are an error so
that config snapshots stay unambiguous. Writing is deterministic: entries are
emitted in mapping order, one per line, with a single ``key = value`` form.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ValidationError


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse key=value text into an ordered dict of raw string values."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ValidationError(f"line {lineno}: empty key")
        if key in out:
            raise ValidationError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_kv(path: str | Path) -> dict[str, str]:
    return parse_kv_text(Path(path).read_text(encoding="utf-8"))


def format_kv(entries: dict[str, str]) -> str:
    lines = [f"{key} = {value}" for key, value in entries.items()]
    return "\n".join(lines) + "\n"


def write_kv(path: str | Path, entries: dict[str, str]) -> None:
    Path(path).write_text(format_kv(entries), encoding="utf-8")


def kv_str(entries: dict[str, str], key: str, default: str | None = None) -> str:
    if key in entries:
        return entries[key]
    if default is None:
        raise ValidationError(f"missing config key {key!r}")
    return default


def kv_int(entries: dict[str, str], key: str, default: int | None = None) -> int:
    if key not in entries:
        if default is None:
            raise ValidationError(f"missing config key {key!r}")
        return default
    try:
        return int(entries[key])
    except ValueError as exc:
        raise ValidationError(f"config key {key!r}: {entries[key]!r} is not an integer") from exc


def kv_float(entries: dict[str, str], key: str, default: float | None = None) -> float:
    if key not in entries:
        if default is None:
            raise ValidationError(f"missing config key {key!r}")
        return default
    try:
        return float(entries[key])
    except ValueError as exc:
        raise ValidationError(f"config key {key!r}: {entries[key]!r} is not a number") from exc


def kv_list(entries: dict[str, str], key: str, default: list[str] | None = None) -> list[str]:
    if key not in entries:
        if default is None:
            raise ValidationError(f"missing config key {key!r}")
        return list(default)
    value = entries[key]
    return [item.strip() for item in value.split(",") if item.strip()]
