"""BB84 alphabet, the RNG-bit to laser mapping, and frame/event records.

Alice's transmitter drives eight lasers from four random bits per slot:
``(bit3, bit2)`` pick the polarization and ``(bit1, bit0)`` pick the
intensity class. Two of the four class patterns select the signal state,
so uniform bits give signal:decoy:vacuum = 2:1:1.

Single records are small frozen dataclasses. Bulk streams (10^7 slots and
more) are held column-wise in :class:`FrameArray` / :class:`EventArray`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

REP_RATE_HZ = 20e6
SLOT_NS = 1e9 / REP_RATE_HZ

DEFAULT_U = 0.8
DEFAULT_V = 0.1


class Polarization(enum.IntEnum):
    H = 0
    V = 1
    P = 2  # 45 deg
    M = 3  # 135 deg

    @property
    def basis(self) -> int:
        """0 = rectilinear (H/V), 1 = diagonal (P/M)."""
        return int(self) >> 1

    @property
    def bit(self) -> int:
        # H=0, V=1, P=0, M=1
        return int(self) & 1


class StateClass(enum.IntEnum):
    SIGNAL = 0
    WEAK_DECOY = 1
    VACUUM = 2


class Detector(enum.IntEnum):
    DH = 0
    DV = 1
    DP = 2
    DM = 3

    @property
    def basis(self) -> int:
        return int(self) >> 1

    @property
    def bit(self) -> int:
        return int(self) & 1


@dataclass(frozen=True)
class Intensities:
    """Mean photon numbers of the three intensity classes."""

    u: float = DEFAULT_U
    v: float = DEFAULT_V

    def __post_init__(self):
        if not (self.u > self.v > 0):
            raise ValueError(f"need u > v > 0, got u={self.u}, v={self.v}")

    def mu(self, cls: StateClass | int) -> float:
        return float(self.table()[int(cls)])

    def table(self) -> np.ndarray:
        """Lookup array indexed by ``StateClass`` value."""
        return np.array([self.u, self.v, 0.0])


@dataclass(frozen=True)
class PulseFrame:
    slot_index: int
    pol: Polarization
    cls: StateClass
    mu: float

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.cls is StateClass.VACUUM and self.mu != 0:
            raise ValueError("vacuum frames carry mu = 0")
        if self.cls is not StateClass.VACUUM and self.mu == 0:
            raise ValueError(f"{self.cls.name} frame with mu = 0")


@dataclass(frozen=True)
class DetectionEvent:
    slot_index: int
    detector: Detector
    within_gate: bool = True


_POL_FROM_BITS = (Polarization.H, Polarization.V, Polarization.P, Polarization.M)
_CLS_FROM_BITS = (StateClass.VACUUM, StateClass.WEAK_DECOY, StateClass.SIGNAL, StateClass.SIGNAL)
# same maps as arrays, for vectorised decoding of whole nibbles
_POL_LUT = np.array([int(p) for p in _POL_FROM_BITS], dtype=np.uint8)
_CLS_LUT = np.array([int(c) for c in _CLS_FROM_BITS], dtype=np.uint8)


def _check_bit(name, b):
    if b not in (0, 1):
        raise ValueError(f"{name} must be 0 or 1, got {b!r}")


def encode_random_bits(bit3: int, bit2: int, bit1: int, bit0: int, *,
                       slot_index: int = 0,
                       intensities: Intensities = Intensities()) -> PulseFrame:
    """Map four RNG bits to one laser firing.

    >>> encode_random_bits(0, 0, 1, 0).cls.name
    'SIGNAL'
    >>> encode_random_bits(1, 1, 0, 1).pol.name
    'M'
    """
    for name, b in (("bit3", bit3), ("bit2", bit2), ("bit1", bit1), ("bit0", bit0)):
        _check_bit(name, b)
    pol = _POL_FROM_BITS[(bit3 << 1) | bit2]
    cls = _CLS_FROM_BITS[(bit1 << 1) | bit0]
    return PulseFrame(slot_index, pol, cls, intensities.mu(cls))


def decode_nibbles(nibbles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised form of :func:`encode_random_bits` on 4-bit values
    ``bit3<<3 | bit2<<2 | bit1<<1 | bit0``. Returns ``(pol, cls)``."""
    nibbles = np.asarray(nibbles, dtype=np.uint8)
    return _POL_LUT[nibbles >> 2], _CLS_LUT[nibbles & 3]


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator used throughout, so runs replay from the seed."""
    return np.random.Generator(np.random.Philox(seed))


FRAME_DTYPE = np.dtype([("slot", "<u8"), ("pol", "u1"), ("cls", "u1")])
EVENT_DTYPE = np.dtype([("slot", "<u8"), ("detector", "u1"), ("flags", "u1")])
FLAG_WITHIN_GATE = 0x01


@dataclass
class FrameArray:
    """Column store of a run's pulse frames."""

    slot: np.ndarray
    pol: np.ndarray
    cls: np.ndarray
    intensities: Intensities = Intensities()

    def __len__(self):
        return len(self.slot)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return FrameArray(self.slot[i], self.pol[i], self.cls[i], self.intensities)
        cls = StateClass(int(self.cls[i]))
        return PulseFrame(int(self.slot[i]), Polarization(int(self.pol[i])), cls,
                          self.intensities.mu(cls))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def mu(self) -> np.ndarray:
        return self.intensities.table()[self.cls]

    @property
    def basis(self) -> np.ndarray:
        return self.pol >> 1

    @property
    def bit(self) -> np.ndarray:
        return self.pol & 1

    @classmethod
    def from_frames(cls, frames, intensities: Intensities | None = None) -> "FrameArray":
        frames = list(frames)
        if intensities is None:
            intensities = Intensities()
            sig = [f.mu for f in frames if f.cls is StateClass.SIGNAL]
            dec = [f.mu for f in frames if f.cls is StateClass.WEAK_DECOY]
            if sig or dec:
                intensities = Intensities(sig[0] if sig else intensities.u,
                                          dec[0] if dec else intensities.v)
        table = intensities.table()
        for f in frames:
            if f.mu != table[int(f.cls)]:
                raise ValueError(f"slot {f.slot_index}: mu={f.mu} inconsistent with {f.cls.name}")
        return cls(np.array([f.slot_index for f in frames], dtype=np.uint64),
                   np.array([int(f.pol) for f in frames], dtype=np.uint8),
                   np.array([int(f.cls) for f in frames], dtype=np.uint8),
                   intensities)

    def to_records(self) -> np.ndarray:
        rec = np.empty(len(self), dtype=FRAME_DTYPE)
        rec["slot"], rec["pol"], rec["cls"] = self.slot, self.pol, self.cls
        return rec

    def save(self, path: str | Path) -> None:
        self.to_records().tofile(path)

    @classmethod
    def load(cls, path: str | Path, intensities: Intensities = Intensities()) -> "FrameArray":
        rec = np.fromfile(path, dtype=FRAME_DTYPE)
        return cls(rec["slot"].copy(), rec["pol"].copy(), rec["cls"].copy(), intensities)


@dataclass
class EventArray:
    """Column store of Bob's detection events."""

    slot: np.ndarray
    detector: np.ndarray
    within_gate: np.ndarray

    def __len__(self):
        return len(self.slot)

    def __getitem__(self, i):
        if isinstance(i, (slice, np.ndarray)):
            return EventArray(self.slot[i], self.detector[i], self.within_gate[i])
        return DetectionEvent(int(self.slot[i]), Detector(int(self.detector[i])),
                              bool(self.within_gate[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def empty(cls) -> "EventArray":
        return cls(np.empty(0, np.uint64), np.empty(0, np.uint8), np.empty(0, bool))

    @classmethod
    def concat(cls, parts) -> "EventArray":
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(np.concatenate([p.slot for p in parts]),
                   np.concatenate([p.detector for p in parts]),
                   np.concatenate([p.within_gate for p in parts]))

    @classmethod
    def from_events(cls, events) -> "EventArray":
        events = list(events)
        return cls(np.array([e.slot_index for e in events], dtype=np.uint64),
                   np.array([int(e.detector) for e in events], dtype=np.uint8),
                   np.array([e.within_gate for e in events], dtype=bool))

    def gated(self) -> "EventArray":
        return self[self.within_gate]

    def to_records(self) -> np.ndarray:
        rec = np.empty(len(self), dtype=EVENT_DTYPE)
        rec["slot"], rec["detector"] = self.slot, self.detector
        rec["flags"] = np.where(self.within_gate, FLAG_WITHIN_GATE, 0)
        return rec

    def save(self, path: str | Path) -> None:
        self.to_records().tofile(path)

    @classmethod
    def load(cls, path: str | Path) -> "EventArray":
        rec = np.fromfile(path, dtype=EVENT_DTYPE)
        return cls(rec["slot"].copy(), rec["detector"].copy(),
                   (rec["flags"] & FLAG_WITHIN_GATE).astype(bool))


def frame_stream(seed: int, n: int, *, start_slot: int = 0,
                 intensities: Intensities = Intensities()) -> FrameArray:
    """Draw ``n`` frames from the seeded RNG; one uniform nibble per slot."""
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = make_rng(seed)
    nibbles = rng.integers(0, 16, size=n, dtype=np.uint8)
    pol, cls = decode_nibbles(nibbles)
    slot = np.arange(start_slot, start_slot + n, dtype=np.uint64)
    return FrameArray(slot, pol, cls, intensities)
