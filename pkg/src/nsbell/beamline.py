"""Routing to the two analyzer paths, spin sampling, and stochastic transmission.

Each surviving neutron takes path 1 or 2 (detector 1 or 2 sits behind the
matching analyzer).  For a singlet pair whose members end up on opposite
paths the joint spin outcome is drawn from the singlet joint distribution at
the analyzers' relative angle; every other neutron gets an independent fair
coin (the beam is unpolarized).  Transmission through the analyzer on path i
then keeps a neutron with probability eps_i_down or eps_i_up according to
its outcome.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quantum import PolarizerPair, singlet_joint_outcome_probs
from .source import PAIR_SINGLET, EmissionStream

__all__ = [
    "SPIN_DOWN",
    "SPIN_UP",
    "BeamGeometry",
    "RoutedStream",
    "TransmittedStream",
    "route_neutrons",
    "sample_singlet_outcomes",
    "measure_and_transmit",
]

SPIN_DOWN = 0
SPIN_UP = 1


@dataclass(frozen=True)
class BeamGeometry:
    """Path-1 probability and thermal speed (m/s, reporting only)."""

    path_split_prob: float = 0.5
    v_ther: float = 593.0

    def __post_init__(self):
        if not 0.0 <= self.path_split_prob <= 1.0:
            raise ValueError("path_split_prob must lie in [0, 1]")
        if self.v_ther <= 0.0:
            raise ValueError("v_ther must be positive")


@dataclass
class RoutedStream:
    """Emission stream plus a path label (1 or 2) per neutron."""

    times: np.ndarray
    path: np.ndarray
    pair_state: np.ndarray
    pair_id: np.ndarray
    pairs: np.ndarray
    pair_kind: np.ndarray

    def __len__(self) -> int:
        return len(self.times)


@dataclass
class TransmittedStream:
    """Neutrons that survived their analyzer, with measured spin outcomes."""

    times: np.ndarray
    path: np.ndarray
    spin: np.ndarray
    pair_state: np.ndarray
    pair_id: np.ndarray

    def __len__(self) -> int:
        return len(self.times)


def route_neutrons(stream: EmissionStream, geometry: BeamGeometry,
                   rng: np.random.Generator) -> RoutedStream:
    """Assign each neutron independently to path 1 (with ``path_split_prob``)
    or path 2.  Pair members may land on the same path; such pairs can never
    produce a cross-detector coincidence and are kept for realism."""
    n = len(stream)
    path = np.where(rng.random(n) < geometry.path_split_prob, 1, 2).astype(np.uint8)
    return RoutedStream(times=stream.times, path=path, pair_state=stream.pair_state,
                        pair_id=stream.pair_id, pairs=stream.pairs,
                        pair_kind=stream.pair_kind)


def sample_singlet_outcomes(theta: float, n: int, rng: np.random.Generator):
    """Draw ``n`` joint outcomes (s1, s2) from the singlet distribution at
    relative angle ``theta``; 0 is down, 1 is up, per the local analyzer axis."""
    p = singlet_joint_outcome_probs(theta)
    edges = np.cumsum([p.p_dd, p.p_du, p.p_ud, p.p_uu])
    idx = np.searchsorted(edges, rng.random(n), side="right")
    s1 = (idx >= 2).astype(np.int8)
    s2 = ((idx == 1) | (idx == 3)).astype(np.int8)
    return s1, s2


def measure_and_transmit(stream: RoutedStream, pol: PolarizerPair,
                         rng: np.random.Generator) -> TransmittedStream:
    """Sample spin outcomes and apply stochastic analyzer transmission.

    Singlet pairs with members on opposite paths receive correlated joint
    outcomes at ``pol.theta``; all other neutrons flip independent fair
    coins.  A neutron on path i with outcome down (up) survives with
    probability ``epsi_down`` (``epsi_up``).
    """
    n = len(stream)
    spin = (rng.random(n) >= 0.5).astype(np.int8)

    singlet = stream.pair_kind == PAIR_SINGLET
    if np.any(singlet):
        pr = stream.pairs[singlet]
        opposite = stream.path[pr[:, 0]] != stream.path[pr[:, 1]]
        pr = pr[opposite]
        if len(pr):
            s1, s2 = sample_singlet_outcomes(pol.theta, len(pr), rng)
            on_path1_first = stream.path[pr[:, 0]] == 1
            first = np.where(on_path1_first, s1, s2).astype(np.int8)
            second = np.where(on_path1_first, s2, s1).astype(np.int8)
            spin[pr[:, 0]] = first
            spin[pr[:, 1]] = second

    eps = np.array([[pol.eps1_down, pol.eps1_up],
                    [pol.eps2_down, pol.eps2_up]])
    p_survive = eps[stream.path - 1, spin]
    keep = rng.random(n) < p_survive
    return TransmittedStream(times=stream.times[keep], path=stream.path[keep],
                             spin=spin[keep], pair_state=stream.pair_state[keep],
                             pair_id=stream.pair_id[keep])
