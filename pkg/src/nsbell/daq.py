"""Clocked detection: response delay, clock quantization, cycles, dead time.

Each transmitted neutron is detected after an exponential response delay of
mean ``t_w`` (scintillator capture plus light decay), time-stamped by
flooring onto the acquisition clock, and dropped if it falls into the
read-out dead window at the end of its acquisition cycle.  Detector numbers
follow the beam path (path 1 -> detector 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .beamline import TransmittedStream

__all__ = [
    "DaqConfig",
    "DetectionEvents",
    "DetectionLedger",
    "quantize_ticks",
    "detect",
    "split_by_detector",
]


@dataclass(frozen=True)
class DaqConfig:
    """Response time, clock tick, cycle length, per-cycle dead time (all s),
    and detection efficiency."""

    t_w: float = 60e-9
    clock_tick: float = 25e-9
    cycle_length: float = 10.0
    dead_time_per_cycle: float = 10e-3
    detection_efficiency: float = 1.0

    def __post_init__(self):
        if self.t_w < 0.0:
            raise ValueError("t_w must be non-negative")
        if self.clock_tick <= 0.0:
            raise ValueError("clock_tick must be positive")
        if self.cycle_length <= 0.0:
            raise ValueError("cycle_length must be positive")
        if not 0.0 <= self.dead_time_per_cycle < self.cycle_length:
            raise ValueError("dead time must lie in [0, cycle_length)")
        if not 0.0 < self.detection_efficiency <= 1.0:
            raise ValueError("detection_efficiency must lie in (0, 1]")
        ratio = self.cycle_length / self.clock_tick
        if abs(ratio - round(ratio)) > 1e-6:
            raise ValueError("cycle_length must be an integer number of clock ticks")

    @property
    def ticks_per_cycle(self) -> int:
        return int(round(self.cycle_length / self.clock_tick))


@dataclass
class DetectionEvents:
    """Clocked events: detector (1 or 2), tick count, and acquisition cycle."""

    detector: np.ndarray
    timestamp_ticks: np.ndarray
    cycle_id: np.ndarray

    def __len__(self) -> int:
        return len(self.detector)

    @classmethod
    def empty(cls) -> "DetectionEvents":
        return cls(np.empty(0, dtype=np.uint8), np.empty(0, dtype=np.int64),
                   np.empty(0, dtype=np.int64))

    def sorted_by_time(self) -> "DetectionEvents":
        order = np.argsort(self.timestamp_ticks, kind="stable")
        return DetectionEvents(self.detector[order], self.timestamp_ticks[order],
                               self.cycle_id[order])


@dataclass(frozen=True)
class DetectionLedger:
    """Exact count bookkeeping for one detection pass."""

    n_input: int
    n_efficiency_dropped: int
    n_dead_time_dropped: int
    n_detected: int

    def __post_init__(self):
        if self.n_input != self.n_efficiency_dropped + self.n_dead_time_dropped + self.n_detected:
            raise ValueError("detection ledger does not balance")


def quantize_ticks(t, clock_tick: float) -> np.ndarray:
    """Floor times onto the clock grid, returning integer tick counts.

    Post-corrected so that the defining property holds exactly in float
    arithmetic: ticks * clock_tick <= t < (ticks + 1) * clock_tick.  This
    makes quantization idempotent (re-quantizing ticks * clock_tick returns
    the same ticks).
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0):
        raise ValueError("timestamps must be non-negative")
    ticks = np.floor(t / clock_tick).astype(np.int64)
    ticks += (ticks + 1) * clock_tick <= t
    ticks -= ticks * clock_tick > t
    return ticks


def detect(stream: TransmittedStream, cfg: DaqConfig,
           rng: np.random.Generator) -> tuple[DetectionEvents, DetectionLedger]:
    """Turn transmitted neutrons into clocked detection events.

    Each neutron independently survives ``detection_efficiency``; its
    detection time is the emission time plus an exponential delay of mean
    ``t_w``; the timestamp is floored to the clock tick; events inside the
    dead window at the end of their cycle are dropped.  Output is
    time-ordered.  Returns the events together with an exact drop ledger.
    """
    n = len(stream)
    if cfg.detection_efficiency < 1.0:
        eff_keep = rng.random(n) < cfg.detection_efficiency
    else:
        eff_keep = np.ones(n, dtype=bool)
    n_eff_dropped = int(n - eff_keep.sum())

    t_emit = stream.times[eff_keep]
    detector = stream.path[eff_keep]
    if cfg.t_w > 0.0:
        t_det = t_emit + rng.exponential(cfg.t_w, size=len(t_emit))
    else:
        t_det = t_emit

    ticks = quantize_ticks(t_det, cfg.clock_tick)
    tpc = cfg.ticks_per_cycle
    cycle = ticks // tpc
    pos_in_cycle = (ticks - cycle * tpc) * cfg.clock_tick
    live = pos_in_cycle < (cfg.cycle_length - cfg.dead_time_per_cycle)
    n_dead_dropped = int(len(ticks) - live.sum())

    events = DetectionEvents(detector[live].astype(np.uint8), ticks[live],
                             cycle[live]).sorted_by_time()
    ledger = DetectionLedger(n_input=n, n_efficiency_dropped=n_eff_dropped,
                             n_dead_time_dropped=n_dead_dropped,
                             n_detected=len(events))
    return events, ledger


def split_by_detector(events: DetectionEvents) -> tuple[DetectionEvents, DetectionEvents]:
    """Stable partition into (detector-1 events, detector-2 events)."""
    is_d1 = events.detector == 1
    d1 = DetectionEvents(events.detector[is_d1], events.timestamp_ticks[is_d1],
                         events.cycle_id[is_d1])
    d2 = DetectionEvents(events.detector[~is_d1], events.timestamp_ticks[~is_d1],
                         events.cycle_id[~is_d1])
    return d1, d2
