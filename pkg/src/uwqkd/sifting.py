"""Basis reconciliation, the 20% error-estimation disclosure, and
per-class gain/error tallies.

The pieces are split by endpoint so the session layer can run them on
each side of the classical link; :func:`sift` chains them for in-process
use.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .protocol import EventArray, FrameArray, StateClass, make_rng

CLASSES = (StateClass.SIGNAL, StateClass.WEAK_DECOY, StateClass.VACUUM)


@dataclass
class ClassTally:
    frames_sent: int = 0
    sifted_count: int = 0
    disclosed_count: int = 0
    error_count_disclosed: int = 0

    def __post_init__(self):
        if not (0 <= self.error_count_disclosed <= self.disclosed_count <= self.sifted_count):
            raise ValueError(f"inconsistent tally {self}")

    def merge(self, other: "ClassTally") -> "ClassTally":
        return ClassTally(self.frames_sent + other.frames_sent,
                          self.sifted_count + other.sifted_count,
                          self.disclosed_count + other.disclosed_count,
                          self.error_count_disclosed + other.error_count_disclosed)

    @property
    def error_rate(self) -> float:
        if self.disclosed_count == 0:
            return 0.0
        return self.error_count_disclosed / self.disclosed_count

    @property
    def gain(self) -> float:
        """Per-pulse detection probability; sifting keeps half of them."""
        if self.frames_sent == 0:
            return 0.0
        return self.sifted_count / (0.5 * self.frames_sent)


@dataclass
class TallySet:
    signal: ClassTally = field(default_factory=ClassTally)
    decoy: ClassTally = field(default_factory=ClassTally)
    vacuum: ClassTally = field(default_factory=ClassTally)
    elapsed_s: float = 0.0
    disclosure: float = 0.20

    def __getitem__(self, cls: StateClass | int) -> ClassTally:
        return (self.signal, self.decoy, self.vacuum)[int(cls)]

    def merge(self, other: "TallySet") -> "TallySet":
        return TallySet(self.signal.merge(other.signal), self.decoy.merge(other.decoy),
                        self.vacuum.merge(other.vacuum), self.elapsed_s + other.elapsed_s,
                        self.disclosure)

    def _rate(self, n: int) -> float:
        if self.elapsed_s <= 0:
            raise ValueError("elapsed time must be positive")
        return n / self.elapsed_s

    def sifted_rate_gross(self, cls) -> float:
        return self._rate(self[cls].sifted_count)

    def sifted_rate_net(self, cls) -> float:
        t = self[cls]
        return self._rate(t.sifted_count - t.disclosed_count)

    @property
    def Qu(self) -> float:
        return self.sifted_rate_net(StateClass.SIGNAL)

    @property
    def Qv(self) -> float:
        return self.sifted_rate_net(StateClass.WEAK_DECOY)

    @property
    def Eu(self) -> float:
        return self.signal.error_rate

    @property
    def Ev(self) -> float:
        return self.decoy.error_rate

    @property
    def E0(self) -> float:
        return self.vacuum.error_rate

    def signal_pool_rate(self) -> float:
        """Signal-pool size in pulses/s implied by the frame count, using
        the nominal 2:1:1 class split."""
        total = self.signal.frames_sent + self.decoy.frames_sent + self.vacuum.frames_sent
        return self._rate(total) * 0.5 * 0.5 * (1 - self.disclosure)

    def as_row(self) -> dict:
        return {
            "Qu": self.Qu, "Qv": self.Qv, "Q0": vacuum_monitor(self),
            "Eu": self.Eu, "Ev": self.Ev, "E0": self.E0,
            "Qu_gross": self.sifted_rate_gross(StateClass.SIGNAL),
            "Qv_gross": self.sifted_rate_gross(StateClass.WEAK_DECOY),
            "Q0_gross": self.sifted_rate_gross(StateClass.VACUUM),
            "elapsed_s": self.elapsed_s,
        }

    def to_csv(self) -> str:
        row = self.as_row()
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        w.writeheader()
        w.writerow(row)
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "elapsed_s": self.elapsed_s, "disclosure": self.disclosure,
            "classes": [vars(self[c]).copy() for c in CLASSES],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TallySet":
        sig, dec, vac = (ClassTally(**c) for c in d["classes"])
        return cls(sig, dec, vac, d["elapsed_s"], d["disclosure"])


def vacuum_monitor(tallies: TallySet) -> float:
    """Background rate Q0 in bit/s, referenced to the signal pool
    (vacuum yield per pulse times the signal-pool pulse rate)."""
    if tallies.elapsed_s <= 0:
        raise ValueError("elapsed time must be positive")
    return tallies.vacuum.gain * tallies.signal_pool_rate()


@dataclass
class SiftedBlock:
    bits: np.ndarray
    block_id: int


def iter_blocks(bits: np.ndarray, size: int, first_id: int = 0):
    """Full ``size``-bit blocks in order; a trailing partial block is not
    emitted."""
    for i in range(len(bits) // size):
        yield SiftedBlock(bits[i * size:(i + 1) * size], first_id + i)


# --- endpoint steps -------------------------------------------------------

def bob_announcement(events: EventArray) -> tuple[np.ndarray, np.ndarray]:
    """Slots Bob detected (gated only) and the basis he measured in."""
    ev = events.gated()
    if len(ev) > 1 and np.any(np.diff(ev.slot.astype(np.int64)) <= 0):
        raise ValueError("events must have unique, increasing slot indices")
    return ev.slot, (ev.detector >> 1).astype(np.uint8)


def alice_match(frames: FrameArray, slots: np.ndarray, bases: np.ndarray
                ) -> tuple[np.ndarray, np.ndarray]:
    """For each announced slot: does Alice's basis match, and which class
    did she send. Alice reveals the class (decoy announcement) for every
    announced slot."""
    if len(slots) != len(bases):
        raise ValueError("slot and basis streams differ in length")
    idx = np.searchsorted(frames.slot, slots)
    if len(idx) and (idx.max() >= len(frames) or np.any(frames.slot[idx] != slots)):
        raise ValueError("announced slot not present in Alice's frames")
    return frames.basis[idx] == bases, frames.cls[idx]


def disclosure_mask(seed: int, n_sifted: int, fraction: float) -> np.ndarray:
    """Shared-seed selection of sifted positions used for error estimation."""
    if not 0 <= fraction < 1:
        raise ValueError("disclosure must lie in [0, 1)")
    return make_rng(seed).random(n_sifted) < fraction


def tally(cls_sifted: np.ndarray, disclosed: np.ndarray, errors: np.ndarray,
          frames_per_class, elapsed_s: float, disclosure: float) -> TallySet:
    parts = []
    for c in CLASSES:
        m = cls_sifted == int(c)
        d = m & disclosed
        parts.append(ClassTally(int(frames_per_class[int(c)]), int(m.sum()), int(d.sum()),
                                int((d & errors).sum())))
    return TallySet(*parts, elapsed_s=elapsed_s, disclosure=disclosure)


@dataclass
class SiftResult:
    alice_key: np.ndarray
    bob_key: np.ndarray
    tallies: TallySet

    def blocks(self, size: int):
        return zip(iter_blocks(self.alice_key, size), iter_blocks(self.bob_key, size))


def sift(frames: FrameArray, events: EventArray, disclosure: float = 0.20, seed: int = 0, *,
         rep_rate_hz: float = 20e6) -> SiftResult:
    """Both endpoints' sifting in one call.

    Returns the non-disclosed signal-class key bits of each side and the
    tallies. ``elapsed_s`` is the source time covered by ``frames``.
    """
    slots, bob_basis = bob_announcement(events)
    match, cls_all = alice_match(frames, slots, bob_basis)
    ev = events.gated()
    bob_bits = (ev.detector & 1)[match]
    idx = np.searchsorted(frames.slot, slots[match])
    alice_bits = frames.bit[idx]
    cls = cls_all[match]
    disclosed = disclosure_mask(seed, len(cls), disclosure)
    errors = alice_bits != bob_bits
    frames_per_class = np.bincount(frames.cls, minlength=3)
    t = tally(cls, disclosed, errors, frames_per_class, len(frames) / rep_rate_hz, disclosure)
    keep = (cls == int(StateClass.SIGNAL)) & ~disclosed
    return SiftResult(alice_bits[keep].astype(np.uint8), bob_bits[keep].astype(np.uint8), t)
