"""Trace serialization: a CSV text format and a compact binary variant.

CSV: header ``ticks,tx,rx,ed,idle,ack_fail``, one row per snapshot, all fields
unsigned decimal (dwell counters are the raw wrapping 32-bit values).

Binary: magic ``WPL1``, little-endian u64 record count, then 32-byte records
of u64 timestamp, four u32 counters, u64 ack_fail total.
"""

from __future__ import annotations

import struct
from pathlib import Path

from .model import COUNTER_MOD, LteuSenseError, NonMonotonicTimestamps, RegisterSnapshot

CSV_HEADER = "ticks,tx,rx,ed,idle,ack_fail"
BINARY_MAGIC = b"WPL1"
_RECORD = struct.Struct("<QIIIIQ")
_COUNT = struct.Struct("<Q")


class MalformedHeader(LteuSenseError):
    """Trace stream does not start with the expected header/magic."""


class TruncatedRecord(LteuSenseError):
    """Trace stream ends mid-record or disagrees with its record count."""


def _check_monotonic(snapshots: list[RegisterSnapshot]) -> None:
    for prev, cur in zip(snapshots, snapshots[1:]):
        if cur.timestamp_ticks <= prev.timestamp_ticks:
            raise NonMonotonicTimestamps(
                f"timestamps {prev.timestamp_ticks} -> {cur.timestamp_ticks}"
            )


def dumps_csv(snapshots: list[RegisterSnapshot] | tuple[RegisterSnapshot, ...]) -> str:
    lines = [CSV_HEADER]
    for s in snapshots:
        lines.append(
            f"{s.timestamp_ticks},{s.tx_ticks},{s.rx_ticks},"
            f"{s.ed_ticks},{s.idle_ticks},{s.ack_fail_total}"
        )
    return "\n".join(lines) + "\n"


def loads_csv(text: str) -> list[RegisterSnapshot]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != CSV_HEADER:
        got = lines[0].strip() if lines else "<empty>"
        raise MalformedHeader(f"expected header {CSV_HEADER!r}, got {got!r}")
    snapshots = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 6:
            raise TruncatedRecord(f"line {lineno}: expected 6 fields, got {len(fields)}")
        try:
            ticks, tx, rx, ed, idle, ack = (int(f) for f in fields)
        except ValueError as exc:
            raise TruncatedRecord(f"line {lineno}: non-integer field") from exc
        if any(not 0 <= c < COUNTER_MOD for c in (tx, rx, ed, idle)):
            raise TruncatedRecord(f"line {lineno}: counter outside 32-bit range")
        snapshots.append(RegisterSnapshot(ticks, tx, rx, ed, idle, ack))
    _check_monotonic(snapshots)
    return snapshots


def dumps_binary(snapshots: list[RegisterSnapshot] | tuple[RegisterSnapshot, ...]) -> bytes:
    parts = [BINARY_MAGIC, _COUNT.pack(len(snapshots))]
    for s in snapshots:
        parts.append(
            _RECORD.pack(
                s.timestamp_ticks, s.tx_ticks, s.rx_ticks,
                s.ed_ticks, s.idle_ticks, s.ack_fail_total,
            )
        )
    return b"".join(parts)


def loads_binary(data: bytes) -> list[RegisterSnapshot]:
    if len(data) < len(BINARY_MAGIC) + _COUNT.size:
        raise MalformedHeader("stream shorter than header")
    if data[: len(BINARY_MAGIC)] != BINARY_MAGIC:
        raise MalformedHeader(f"bad magic {data[:4]!r}")
    (count,) = _COUNT.unpack_from(data, len(BINARY_MAGIC))
    offset = len(BINARY_MAGIC) + _COUNT.size
    expected = offset + count * _RECORD.size
    if len(data) != expected:
        raise TruncatedRecord(f"expected {expected} bytes for {count} records, got {len(data)}")
    snapshots = []
    for _ in range(count):
        ticks, tx, rx, ed, idle, ack = _RECORD.unpack_from(data, offset)
        offset += _RECORD.size
        snapshots.append(RegisterSnapshot(ticks, tx, rx, ed, idle, ack))
    _check_monotonic(snapshots)
    return snapshots


def save_trace(path: str | Path, snapshots: list[RegisterSnapshot]) -> None:
    """Write a trace file; ``.bin`` gets the binary format, anything else CSV."""
    path = Path(path)
    if path.suffix == ".bin":
        path.write_bytes(dumps_binary(snapshots))
    else:
        path.write_text(dumps_csv(snapshots), encoding="utf-8")


def load_trace(path: str | Path) -> list[RegisterSnapshot]:
    path = Path(path)
    if path.suffix == ".bin":
        return loads_binary(path.read_bytes())
    return loads_csv(path.read_text(encoding="utf-8"))
