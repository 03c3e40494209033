"""End-to-end simulation: source -> pairing -> antibunching -> routing ->
analyzers -> clocked detection, with exact count bookkeeping.

Long beam times are processed in fixed-size time slices so memory stays
bounded; every stochastic stage of every slice draws from its own
tag-derived RNG stream, and a one-neutron carry preserves the greedy
consecutive-pair semantics across slice boundaries.  Output is deterministic
for a fixed (config, master seed, angle).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .beamline import measure_and_transmit, route_neutrons
from .config import ExperimentConfig
from .daq import DetectionEvents, detect, split_by_detector
from .quantum import theta_from_degrees
from .seeding import rng_for
from .source import (
    PAIR_SINGLET,
    PAIR_TRIPLET,
    EmissionStream,
    antibunching_filter,
    poisson_arrival_times,
    tag_pairs,
)

__all__ = ["PipelineLedger", "PipelineResult", "run_pipeline"]

# emissions per slice; fixed so that slicing is deterministic per config
SLICE_EMISSIONS = 4_000_000


@dataclass
class PipelineLedger:
    """Exact neutron bookkeeping across the whole run.

    emitted = triplet_filtered + transmission_lost + efficiency_dropped
            + dead_time_dropped + detected, always.
    """

    emitted: int = 0
    pairs_formed: int = 0
    singlet_pairs: int = 0
    triplet_pairs: int = 0
    triplet_filtered: int = 0
    path1: int = 0
    path2: int = 0
    transmitted: int = 0
    transmission_lost: int = 0
    efficiency_dropped: int = 0
    dead_time_dropped: int = 0
    detected: int = 0

    def check_balance(self):
        total = (self.triplet_filtered + self.transmission_lost
                 + self.efficiency_dropped + self.dead_time_dropped + self.detected)
        if total != self.emitted:
            raise RuntimeError(f"pipeline ledger does not balance: {self.emitted} emitted "
                               f"vs {total} accounted for")

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class PipelineResult:
    events_d1: DetectionEvents
    events_d2: DetectionEvents
    ledger: PipelineLedger
    theta_deg: float
    live_time: float
    duration: float
    ledger_extra: dict = field(default_factory=dict)


def run_pipeline(cfg: ExperimentConfig, theta_deg: float) -> PipelineResult:
    """Simulate one angle setting of the full experiment."""
    theta = theta_from_degrees(theta_deg)
    pol = cfg.polarizers.with_theta(theta)
    seed = cfg.master_seed
    tag_base = f"theta={theta_deg:g}"

    slice_len = cfg.duration if cfg.rate <= 0 else min(
        cfg.duration, max(SLICE_EMISSIONS / cfg.rate, 1e-6))
    n_slices = max(int(math.ceil(cfg.duration / slice_len - 1e-9)), 1)

    ledger = PipelineLedger()
    d1_parts: list[DetectionEvents] = []
    d2_parts: list[DetectionEvents] = []
    carry_time: float | None = None

    for k in range(n_slices):
        t0 = k * slice_len
        t1 = min((k + 1) * slice_len, cfg.duration)
        times = poisson_arrival_times(cfg.rate, t0, t1, rng_for(seed, f"source/{tag_base}/slice={k}"))
        ledger.emitted += len(times)
        if carry_time is not None:
            times = np.concatenate(([carry_time], times))
            carry_time = None
        if len(times) == 0:
            continue

        stream = tag_pairs(EmissionStream(times=times), cfg.tau_c, cfg.singlet_fraction,
                           rng_for(seed, f"pairs/{tag_base}/slice={k}"))
        last_slice = k == n_slices - 1
        if not last_slice and stream.pair_state[-1] == 0:
            carry_time = float(stream.times[-1])
            stream = EmissionStream(times=stream.times[:-1],
                                    pair_state=stream.pair_state[:-1],
                                    pair_id=stream.pair_id[:-1],
                                    pairs=stream.pairs, pair_kind=stream.pair_kind)
        ledger.pairs_formed += stream.n_pairs
        n_singlet = int((stream.pair_kind == PAIR_SINGLET).sum())
        ledger.singlet_pairs += n_singlet
        ledger.triplet_pairs += stream.n_pairs - n_singlet

        keep = stream.pair_state != PAIR_TRIPLET
        ledger.triplet_filtered += int(len(stream) - keep.sum())
        filtered = antibunching_filter(stream)

        routed = route_neutrons(filtered, cfg.beam, rng_for(seed, f"route/{tag_base}/slice={k}"))
        ledger.path1 += int((routed.path == 1).sum())
        ledger.path2 += int((routed.path == 2).sum())

        transmitted = measure_and_transmit(routed, pol, rng_for(seed, f"measure/{tag_base}/slice={k}"))
        ledger.transmitted += len(transmitted)
        ledger.transmission_lost += len(routed) - len(transmitted)

        events, det_ledger = detect(transmitted, cfg.daq, rng_for(seed, f"daq/{tag_base}/slice={k}"))
        ledger.efficiency_dropped += det_ledger.n_efficiency_dropped
        ledger.dead_time_dropped += det_ledger.n_dead_time_dropped
        ledger.detected += det_ledger.n_detected
        d1, d2 = split_by_detector(events)
        d1_parts.append(d1)
        d2_parts.append(d2)

    ledger.check_balance()
    d1 = _concat_sorted(d1_parts)
    d2 = _concat_sorted(d2_parts)
    live_fraction = 1.0 - cfg.daq.dead_time_per_cycle / cfg.daq.cycle_length
    return PipelineResult(events_d1=d1, events_d2=d2, ledger=ledger,
                          theta_deg=theta_deg, live_time=cfg.duration * live_fraction,
                          duration=cfg.duration)


def _concat_sorted(parts: list[DetectionEvents]) -> DetectionEvents:
    if not parts:
        return DetectionEvents.empty()
    merged = DetectionEvents(
        detector=np.concatenate([p.detector for p in parts]),
        timestamp_ticks=np.concatenate([p.timestamp_ticks for p in parts]),
        cycle_id=np.concatenate([p.cycle_id for p in parts]),
    )
    # response delays can spill past a slice boundary, so re-sort globally
    return merged.sorted_by_time()
