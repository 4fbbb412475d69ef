"""Session messages on top of the frame link.

Each frame payload is ``seq u32le | flags u8 | fragment``; a message longer
than one frame is split with the MORE flag set on all but the last piece.
Sequence numbers increase by one per frame in each direction.

Leakage accounting charges the key-dependent part of each message body:
everything after the fixed per-type header (e.g. the group id in front of
a syndrome). SYNDROME and TAG bits are the security-relevant leakage;
the other types are tallied separately.
"""
from __future__ import annotations

import enum
import json
import struct
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .framing import Frame, MAX_PAYLOAD

SEQ = struct.Struct("<IB")
FLAG_MORE = 0x01
MAX_FRAGMENT = MAX_PAYLOAD - SEQ.size


class MsgType(enum.IntEnum):
    START = 1
    STOP = 2
    BASIS_ANNOUNCE = 3
    DISCLOSE_SELECT = 4
    SYNDROME = 5
    TAG = 6
    PA_PARAMS = 7
    STATS_REPORT = 8


# bytes of public header in front of the key-dependent data
HEADER_BYTES = {MsgType.SYNDROME: 4, MsgType.TAG: 4}
LEAKING = (MsgType.SYNDROME, MsgType.TAG)


class ProtocolError(RuntimeError):
    pass


@dataclass
class LeakageLedger:
    bits: Counter = field(default_factory=Counter)

    def charge(self, msg_type: MsgType, body: bytes) -> None:
        n = max(0, len(body) - HEADER_BYTES.get(msg_type, 0)) * 8
        self.bits[MsgType(msg_type).name] += n

    @property
    def leaked(self) -> int:
        return sum(self.bits[t.name] for t in LEAKING)


def leakage_ledger(session: "Session") -> int:
    return session.ledger.leaked


@dataclass
class Message:
    type: MsgType
    body: bytes

    def json(self):
        return json.loads(self.body.decode())


class Session:
    """Typed, sequenced messages over a :class:`FrameLink`."""

    def __init__(self, link, name: str = ""):
        self.link = link
        self.name = name
        self.tx_seq = 0
        self.rx_seq = -1
        self.ledger = LeakageLedger()  # what this endpoint sent
        self.rx_ledger = LeakageLedger()  # what it received

    def send(self, msg_type: MsgType, body: bytes = b"") -> None:
        msg_type = MsgType(msg_type)
        pieces = [body[i:i + MAX_FRAGMENT] for i in range(0, len(body), MAX_FRAGMENT)] or [b""]
        for i, piece in enumerate(pieces):
            flags = FLAG_MORE if i < len(pieces) - 1 else 0
            self.link.send(Frame(int(msg_type), SEQ.pack(self.tx_seq, flags) + piece))
            self.tx_seq += 1
        self.ledger.charge(msg_type, body)

    def send_json(self, msg_type: MsgType, obj) -> None:
        self.send(msg_type, json.dumps(obj, sort_keys=True).encode())

    def recv(self, *expected: MsgType) -> Message:
        parts = []
        msg_type = None
        while True:
            frame = self.link.recv()
            seq, flags = SEQ.unpack_from(frame.payload)
            if seq <= self.rx_seq:
                raise ProtocolError(f"{self.name}: sequence went from {self.rx_seq} to {seq}")
            self.rx_seq = seq
            if msg_type is None:
                msg_type = MsgType(frame.msg_type)
            elif frame.msg_type != msg_type:
                raise ProtocolError(f"{self.name}: fragment type changed mid-message")
            parts.append(frame.payload[SEQ.size:])
            if not flags & FLAG_MORE:
                break
        body = b"".join(parts)
        self.rx_ledger.charge(msg_type, body)
        if expected and msg_type not in expected:
            raise ProtocolError(f"{self.name}: expected {[e.name for e in expected]}, "
                                f"got {msg_type.name}")
        return Message(msg_type, body)


def pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()


def unpack_bits(data: bytes, n: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=n, bitorder="little")
