"""Byte-stream transports for the classical link.

The OOK optical modem is abstracted to a reliable ordered byte stream.
:class:`InProcTransport` pairs run the endpoints as threads,
:class:`SocketTransport` as separate processes; :class:`LossyTransport`
corrupts bytes to exercise CRC dropping.
"""
from __future__ import annotations

import queue
import socket
import struct
import threading
import time
from pathlib import Path

import numpy as np

from .framing import Frame, FrameDecoder


class LinkClosed(ConnectionError):
    pass


class InProcTransport:
    def __init__(self, tx: queue.Queue, rx: queue.Queue):
        self._tx, self._rx = tx, rx

    @classmethod
    def pair(cls) -> tuple["InProcTransport", "InProcTransport"]:
        a, b = queue.Queue(), queue.Queue()
        return cls(a, b), cls(b, a)

    def send_bytes(self, data: bytes) -> None:
        self._tx.put(bytes(data))

    def recv_bytes(self, timeout: float | None = None) -> bytes:
        try:
            data = self._rx.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError("no data on in-process link") from None
        if data is None:
            raise LinkClosed("peer closed the link")
        return data

    def close(self) -> None:
        self._tx.put(None)


class SocketTransport:
    def __init__(self, sock: socket.socket):
        self.sock = sock

    @classmethod
    def connect(cls, host: str, port: int, *, retries: int = 50, wait_s: float = 0.1):
        for _ in range(retries):
            try:
                return cls(socket.create_connection((host, port)))
            except ConnectionRefusedError:
                time.sleep(wait_s)
        raise LinkClosed(f"could not connect to {host}:{port}")

    def send_bytes(self, data: bytes) -> None:
        self.sock.sendall(data)

    def recv_bytes(self, timeout: float | None = None) -> bytes:
        self.sock.settimeout(timeout)
        try:
            data = self.sock.recv(1 << 16)
        except socket.timeout:
            raise TimeoutError("no data on socket link") from None
        if not data:
            raise LinkClosed("peer closed the socket")
        return data

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass
        self.sock.close()


class LossyTransport:
    """Wraps a transport and flips random bits in outgoing bytes with
    probability ``byte_error_rate`` per byte."""

    def __init__(self, inner, byte_error_rate: float, seed: int = 0):
        self.inner = inner
        self.byte_error_rate = byte_error_rate
        self.rng = np.random.default_rng(seed)
        self.bytes_corrupted = 0

    def send_bytes(self, data: bytes) -> None:
        buf = np.frombuffer(bytes(data), dtype=np.uint8).copy()
        hit = np.flatnonzero(self.rng.random(len(buf)) < self.byte_error_rate)
        if len(hit):
            buf[hit] ^= self.rng.integers(1, 256, size=len(hit), dtype=np.uint8)
            self.bytes_corrupted += len(hit)
        self.inner.send_bytes(buf.tobytes())

    def recv_bytes(self, timeout=None) -> bytes:
        return self.inner.recv_bytes(timeout)

    def close(self) -> None:
        self.inner.close()


CAPTURE_RECORD = struct.Struct("<cdI")  # direction, unix time, frame length


class FrameLink:
    """Frame-level send/receive over a byte transport, with an optional
    capture log of every frame in both directions."""

    def __init__(self, transport, *, capture: str | Path | None = None,
                 timeout: float | None = 60.0):
        self.transport = transport
        self.decoder = FrameDecoder()
        self.timeout = timeout
        self._pending: list[Frame] = []
        self._capture = open(capture, "ab") if capture else None
        self._lock = threading.Lock()
        self.frames_sent = 0

    def _log(self, direction: bytes, raw: bytes):
        if self._capture is not None:
            with self._lock:
                self._capture.write(CAPTURE_RECORD.pack(direction, time.time(), len(raw)) + raw)

    def send(self, frame: Frame) -> None:
        raw = frame.encode()
        self._log(b">", raw)
        self.transport.send_bytes(raw)
        self.frames_sent += 1

    def recv(self) -> Frame:
        while not self._pending:
            self._pending.extend(self.decoder.feed(self.transport.recv_bytes(self.timeout)))
        frame = self._pending.pop(0)
        self._log(b"<", frame.encode())
        return frame

    @property
    def crc_drops(self) -> int:
        return self.decoder.crc_failures

    def close(self) -> None:
        self.transport.close()
        if self._capture is not None:
            self._capture.close()


def read_capture(path: str | Path) -> list[tuple[str, float, Frame]]:
    """Replay a capture log: ``(direction, time, frame)`` per record."""
    data = Path(path).read_bytes()
    out, pos = [], 0
    while pos < len(data):
        d, t, n = CAPTURE_RECORD.unpack_from(data, pos)
        pos += CAPTURE_RECORD.size
        frames = FrameDecoder().feed(data[pos:pos + n])
        pos += n
        out.extend((d.decode(), t, f) for f in frames)
    return out
