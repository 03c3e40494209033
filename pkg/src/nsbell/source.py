"""Poissonian neutron source with coherent-pair tagging and antibunching.

The beam is a 1-D timeline: emissions are a homogeneous Poisson process,
consecutive arrivals closer than the coherence time may form an entangled
pair (singlet with probability ``singlet_fraction``, otherwise triplet), and
the antibunching filter removes both members of every triplet pair before
anything reaches the analyzers.

Streams are stored as structure-of-arrays so that multi-hour beam times stay
tractable; per-neutron records are float64 emission times plus small integer
tag arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PAIR_NONE",
    "PAIR_SINGLET",
    "PAIR_TRIPLET",
    "SourceConfig",
    "EmissionStream",
    "generate_emission_stream",
    "tag_pairs",
    "antibunching_filter",
    "tau_c_from_energy_spread",
]

PAIR_NONE = 0
PAIR_SINGLET = 1
PAIR_TRIPLET = 2

_HBAR_J_S = 1.054571817e-34
_EV_TO_J = 1.602176634e-19

# beyond this many coherence times the pairing probability is < 1e-18 and the
# Bernoulli draw is skipped entirely
_GAP_CUTOFF_SIGMAS = float(np.sqrt(-2.0 * np.log(1e-18)))


def tau_c_from_energy_spread(delta_e_microev: float) -> float:
    """Coherence time (s) from the monochromator energy spread: hbar / dE."""
    if delta_e_microev <= 0.0:
        raise ValueError("energy spread must be positive")
    return _HBAR_J_S / (delta_e_microev * 1e-6 * _EV_TO_J)


@dataclass(frozen=True)
class SourceConfig:
    """Beam rate (1/s), simulated duration (s), coherence time (s),
    singlet fraction, and RNG seed."""

    rate: float
    duration: float
    tau_c: float
    singlet_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.rate < 0.0:
            raise ValueError("rate must be non-negative")
        if self.duration <= 0.0:
            raise ValueError("duration must be positive")
        if self.tau_c <= 0.0:
            raise ValueError("tau_c must be positive")
        if not 0.0 <= self.singlet_fraction <= 1.0:
            raise ValueError("singlet_fraction must lie in [0, 1]")


@dataclass
class EmissionStream:
    """Time-ordered emissions with pair tags.

    ``pair_state`` holds PAIR_NONE / PAIR_SINGLET / PAIR_TRIPLET per neutron,
    ``pair_id`` the pair index per neutron (-1 when unpaired), ``pairs`` the
    (n_pairs, 2) member indices, and ``pair_kind`` the state per pair.
    """

    times: np.ndarray
    pair_state: np.ndarray = field(default=None)
    pair_id: np.ndarray = field(default=None)
    pairs: np.ndarray = field(default=None)
    pair_kind: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.times)
        if self.pair_state is None:
            self.pair_state = np.zeros(n, dtype=np.int8)
        if self.pair_id is None:
            self.pair_id = np.full(n, -1, dtype=np.int64)
        if self.pairs is None:
            self.pairs = np.empty((0, 2), dtype=np.int64)
        if self.pair_kind is None:
            self.pair_kind = np.empty(0, dtype=np.int8)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def validate(self):
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0.0):
            raise ValueError("emission times must be strictly increasing")
        if self.n_pairs:
            members = self.pairs.ravel()
            if len(np.unique(members)) != members.size:
                raise ValueError("a neutron belongs to more than one pair")
            if np.any(self.pair_state[members] == PAIR_NONE):
                raise ValueError("pair member tagged as unpaired")


def poisson_arrival_times(rate: float, t_start: float, t_stop: float,
                          rng: np.random.Generator) -> np.ndarray:
    """Arrival times of a homogeneous Poisson process on [t_start, t_stop)."""
    if rate == 0.0 or t_stop <= t_start:
        return np.empty(0, dtype=np.float64)
    span = t_stop - t_start
    expected = rate * span
    times = []
    t = t_start
    remaining = expected
    while True:
        n_draw = int(remaining + 6.0 * np.sqrt(remaining + 1.0)) + 16
        gaps = rng.exponential(1.0 / rate, size=n_draw)
        batch = t + np.cumsum(gaps)
        if batch[-1] >= t_stop:
            times.append(batch[batch < t_stop])
            break
        times.append(batch)
        t = batch[-1]
        remaining = rate * (t_stop - t)
    return np.concatenate(times) if times else np.empty(0, dtype=np.float64)


def generate_emission_stream(cfg: SourceConfig) -> EmissionStream:
    """Homogeneous Poisson emission stream on [0, duration), untagged.

    Inter-arrival gaps are exponential with mean 1/rate; the stream is
    deterministic for a fixed seed and empty for rate zero.
    """
    rng = np.random.default_rng(cfg.seed)
    times = poisson_arrival_times(cfg.rate, 0.0, cfg.duration, rng)
    return EmissionStream(times=times)


def tag_pairs(stream: EmissionStream, tau_c: float, singlet_fraction: float,
              rng: np.random.Generator) -> EmissionStream:
    """Tag entangled pairs among consecutive arrivals.

    Scanning left to right, a not-yet-paired neutron and its successor with
    gap ``g`` become a pair with probability exp(-g^2 / (2 tau_c^2)); each
    pair is singlet with probability ``singlet_fraction``, else triplet.
    Gaps beyond ~9 coherence times are skipped (pairing probability < 1e-18).
    """
    if tau_c <= 0.0:
        raise ValueError("tau_c must be positive")
    if not 0.0 <= singlet_fraction <= 1.0:
        raise ValueError("singlet_fraction must lie in [0, 1]")
    times = stream.times
    n = len(times)
    if np.any(stream.pair_state != PAIR_NONE):
        raise ValueError("stream already carries pair tags")
    if n > 1:
        gaps = np.diff(times)
        if np.any(gaps <= 0.0):
            raise ValueError("emission times must be strictly increasing")
    else:
        gaps = np.empty(0)

    cand = np.nonzero(gaps <= _GAP_CUTOFF_SIGMAS * tau_c)[0]
    if cand.size:
        u = rng.random(cand.size)
        hits = cand[u < np.exp(-0.5 * (gaps[cand] / tau_c) ** 2)]
    else:
        hits = cand

    # greedy left-to-right: a candidate whose left member was just paired is skipped
    chosen = []
    last = -2
    for i in hits:
        if i == last + 1:
            continue
        chosen.append(i)
        last = i
    first = np.asarray(chosen, dtype=np.int64)

    k = first.size
    kind = np.where(rng.random(k) < singlet_fraction, PAIR_SINGLET, PAIR_TRIPLET).astype(np.int8)
    pairs = np.column_stack([first, first + 1]) if k else np.empty((0, 2), dtype=np.int64)

    pair_state = np.zeros(n, dtype=np.int8)
    pair_id = np.full(n, -1, dtype=np.int64)
    if k:
        pair_state[first] = kind
        pair_state[first + 1] = kind
        ids = np.arange(k, dtype=np.int64)
        pair_id[first] = ids
        pair_id[first + 1] = ids
    return EmissionStream(times=times, pair_state=pair_state, pair_id=pair_id,
                          pairs=pairs, pair_kind=kind)


def antibunching_filter(stream: EmissionStream) -> EmissionStream:
    """Remove both members of every triplet pair.

    Singlet pairs and unpaired neutrons pass unchanged; the output stays
    time-ordered and its pair bookkeeping is re-indexed to the survivors.
    """
    keep = stream.pair_state != PAIR_TRIPLET
    if stream.n_pairs == 0 or keep.all():
        return EmissionStream(times=stream.times[keep],
                              pair_state=stream.pair_state[keep],
                              pair_id=stream.pair_id[keep],
                              pairs=stream.pairs.copy(),
                              pair_kind=stream.pair_kind.copy())
    new_index = np.cumsum(keep, dtype=np.int64) - 1
    surviving = stream.pair_kind == PAIR_SINGLET
    pairs = new_index[stream.pairs[surviving]]
    kind = stream.pair_kind[surviving]
    pair_id = np.full(int(keep.sum()), -1, dtype=np.int64)
    if len(pairs):
        ids = np.arange(len(pairs), dtype=np.int64)
        pair_id[pairs[:, 0]] = ids
        pair_id[pairs[:, 1]] = ids
    return EmissionStream(times=stream.times[keep], pair_state=stream.pair_state[keep],
                          pair_id=pair_id, pairs=pairs, pair_kind=kind)
