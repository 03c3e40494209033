"""Binary detection-event files.

Little-endian layout: header = magic ``NSB1``, format version (u16), clock
tick in integer nanoseconds (u32), cycle length in ticks (u64); then packed
records (detector u8, cycle_id u32, timestamp_ticks u64) repeated.  Compact,
append-friendly, and unambiguous about units.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .daq import DetectionEvents

__all__ = ["EventFileError", "EventFileHeader", "write_events", "read_events"]

MAGIC = b"NSB1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIQ")
_RECORD_DTYPE = np.dtype([("detector", "u1"), ("cycle_id", "<u4"),
                          ("timestamp_ticks", "<u8")])


class EventFileError(ValueError):
    """Malformed event file: bad magic, version, or truncated records."""


@dataclass(frozen=True)
class EventFileHeader:
    version: int
    clock_tick_ns: int
    cycle_length_ticks: int

    @property
    def clock_tick(self) -> float:
        return self.clock_tick_ns * 1e-9


def write_events(path, events: DetectionEvents, clock_tick_ns: int,
                 cycle_length_ticks: int) -> None:
    """Write events to ``path``; the tick must be an integer nanosecond count."""
    if int(clock_tick_ns) != clock_tick_ns or clock_tick_ns <= 0:
        raise EventFileError("clock tick must be a positive integer number of ns")
    rec = np.empty(len(events), dtype=_RECORD_DTYPE)
    rec["detector"] = events.detector
    rec["cycle_id"] = events.cycle_id
    rec["timestamp_ticks"] = events.timestamp_ticks
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, int(clock_tick_ns),
                              int(cycle_length_ticks)))
        fh.write(rec.tobytes())


def read_events(path) -> tuple[DetectionEvents, EventFileHeader]:
    """Read an event file back into arrays, validating magic and version."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise EventFileError(f"{path}: too short for a header")
    magic, version, tick_ns, cycle_ticks = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise EventFileError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise EventFileError(f"{path}: unsupported format version {version}")
    body = raw[_HEADER.size:]
    if len(body) % _RECORD_DTYPE.itemsize:
        raise EventFileError(f"{path}: truncated record section")
    rec = np.frombuffer(body, dtype=_RECORD_DTYPE)
    events = DetectionEvents(detector=rec["detector"].astype(np.uint8),
                             timestamp_ticks=rec["timestamp_ticks"].astype(np.int64),
                             cycle_id=rec["cycle_id"].astype(np.int64))
    return events, EventFileHeader(version=version, clock_tick_ns=tick_ns,
                                   cycle_length_ticks=cycle_ticks)
