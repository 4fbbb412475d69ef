"""Wire format of the classical link.

    0xAA 0x55 | msg_type u8 | length u16le | payload | crc16 u16le

The CRC is CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF) over
``msg_type .. payload``. A receiver that hits a bad CRC drops the
candidate frame and resumes scanning one byte past its sync word. A
candidate still waiting for bytes is abandoned the same way once a complete,
CRC-valid frame turns up after it.
"""
from __future__ import annotations

import binascii
import struct
from dataclasses import dataclass

SYNC = b"\xAA\x55"
HEADER = struct.Struct("<BH")  # msg_type, length
CRC = struct.Struct("<H")
MAX_PAYLOAD = 0xFFFF
OVERHEAD = len(SYNC) + HEADER.size + CRC.size


def crc16(data: bytes) -> int:
    return binascii.crc_hqx(data, 0xFFFF)


@dataclass(frozen=True)
class Frame:
    msg_type: int
    payload: bytes = b""

    def __post_init__(self):
        if not 0 <= self.msg_type <= 0xFF:
            raise ValueError("msg_type must fit in a byte")
        if len(self.payload) > MAX_PAYLOAD:
            raise ValueError(f"payload of {len(self.payload)} bytes exceeds {MAX_PAYLOAD}")

    def encode(self) -> bytes:
        body = HEADER.pack(self.msg_type, len(self.payload)) + bytes(self.payload)
        return SYNC + body + CRC.pack(crc16(body))


class FrameDecoder:
    """Incremental frame parser; feed bytes, collect frames."""

    def __init__(self):
        self._buf = bytearray()
        self.crc_failures = 0
        self.frames_ok = 0
        self._look = 0  # bytes past the pending candidate already searched

    def _later_frame_valid(self, buf: bytearray, i: int) -> bool:
        j = buf.find(SYNC, i + max(1, self._look))
        first_open = -1
        while j >= 0 and len(buf) - j >= len(SYNC) + HEADER.size:
            _, length = HEADER.unpack_from(buf, j + 2)
            end = j + len(SYNC) + HEADER.size + length + CRC.size
            if end <= len(buf):
                if CRC.unpack_from(buf, end - CRC.size)[0] == crc16(bytes(buf[j + 2:end - CRC.size])):
                    return True
            elif first_open < 0:
                first_open = j
            j = buf.find(SYNC, j + 1)
        stop = first_open if first_open >= 0 else (j if j >= 0 else len(buf) - 1)
        self._look = max(1, stop - i)
        return False

    def feed(self, data: bytes) -> list[Frame]:
        self._buf += data
        out = []
        buf = self._buf
        pos = 0
        while True:
            i = buf.find(SYNC, pos)
            if i < 0:
                # keep a trailing 0xAA that may start the next sync word
                pos = len(buf) - 1 if buf.endswith(SYNC[:1]) else len(buf)
                break
            if len(buf) - i < len(SYNC) + HEADER.size:
                pos = i
                break
            msg_type, length = HEADER.unpack_from(buf, i + 2)
            end = i + len(SYNC) + HEADER.size + length + CRC.size
            if len(buf) < end:
                if self._later_frame_valid(buf, i):
                    # a corrupted length would otherwise stall every frame behind it
                    self.crc_failures += 1
                    self._look = 0
                    pos = i + 1
                    continue
                pos = i
                break
            self._look = 0
            body = bytes(buf[i + 2:end - CRC.size])
            (crc,) = CRC.unpack_from(buf, end - CRC.size)
            if crc == crc16(body):
                out.append(Frame(msg_type, body[HEADER.size:]))
                self.frames_ok += 1
                pos = end
            else:
                self.crc_failures += 1
                pos = i + 1
        del buf[:pos]
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)
