"""Privacy-amplification bookkeeping: block policy, output length, and
the per-block seeds shared by both endpoints."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..decoy import DecoyEstimate, KeyRateParams, SourceParams, estimate_single_photon, h2
from ..sifting import TallySet
from .toeplitz import ToeplitzSeed

GROUP_BITS = 6912


@dataclass(frozen=True)
class PaBlockPolicy:
    groups_per_pa: int = 256
    group_bits: int = GROUP_BITS
    tag_bits: int = 8
    flush_partial: bool = True  # hash leftover groups when the session stops

    @property
    def bits_per_pa(self) -> int:
        return self.groups_per_pa * self.group_bits


def output_length_from_rates(Q1_rate: float, e1: float, Qu_rate: float, kp: KeyRateParams,
                             block_bits: int, tag_bits: int = 8) -> int:
    if Qu_rate <= 0:
        return 0
    secure = Q1_rate * (1.0 - h2(e1)) - Qu_rate * kp.leak_fraction_R
    return max(0, math.floor(block_bits * secure / Qu_rate) - tag_bits)


def pa_output_length(tallies: TallySet, est: DecoyEstimate, kp: KeyRateParams,
                     block_bits: int, tag_bits: int = 8) -> int:
    """Secure bits extractable from ``block_bits`` corrected signal bits.

    The single-photon gain and the signal gain are both per-pulse here, so
    the signal-pool size cancels out of the ratio.
    """
    if not est.consistent:
        return 0
    qu = tallies.signal.gain
    if qu <= 0:
        return 0
    return output_length_from_rates(est.Q1, est.e1, qu, kp, block_bits, tag_bits)


def estimate_from_tallies(tallies: TallySet, src: SourceParams = SourceParams()) -> DecoyEstimate:
    """Decoy bounds from measured per-pulse gains and disclosed error rates."""
    return estimate_single_photon(tallies.signal.gain, tallies.decoy.gain, tallies.vacuum.gain,
                                  tallies.Eu, tallies.Ev, src)


def derive_seed(shared_seed: int, block_id: int, purpose: str) -> ToeplitzSeed:
    tag = {"tag": 1, "pa": 2}[purpose]
    state = np.random.SeedSequence([shared_seed, block_id, tag]).generate_state(2, np.uint32)
    return ToeplitzSeed(int(state[0]) << 32 | int(state[1]))


@dataclass
class PaAccumulator:
    """Collects corrected groups until a PA block is full."""

    policy: PaBlockPolicy = field(default_factory=PaBlockPolicy)
    groups: list = field(default_factory=list)  # (group_id, bits)
    next_block_id: int = 0

    def add(self, group_id: int, bits: np.ndarray):
        self.groups.append((group_id, np.asarray(bits, dtype=np.uint8)))
        if len(self.groups) >= self.policy.groups_per_pa:
            return self._emit()
        return None

    def flush(self):
        if self.groups and self.policy.flush_partial:
            return self._emit()
        self.groups = []
        return None

    def _emit(self):
        ids = [g for g, _ in self.groups]
        bits = np.concatenate([b for _, b in self.groups])
        self.groups = []
        bid = self.next_block_id
        self.next_block_id += 1
        return bid, ids, bits
