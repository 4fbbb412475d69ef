"""Toeplitz hashing over GF(2): short error-check tags and FFT privacy
amplification.

An ``m x n`` Toeplitz matrix is fixed by ``n + m - 1`` bits ``t`` with
``T[i, j] = t[i - j + n - 1]``, so ``T @ x`` is a slice of the linear
convolution ``t * x``. Both endpoints derive ``t`` from a shared seed.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

from ..protocol import make_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ToeplitzSeed:
    seed: int

    def bits(self, n_in: int, m_out: int) -> np.ndarray:
        """The ``n_in + m_out - 1`` diagonal bits, first column reversed
        into the leading ``n_in - 1`` entries."""
        return make_rng([self.seed, n_in, m_out]).integers(0, 2, n_in + m_out - 1, dtype=np.uint8)

    def matrix(self, n_in: int, m_out: int) -> np.ndarray:
        t = self.bits(n_in, m_out)
        # T[i, j] = t[i - j + n_in - 1]
        first_col = t[n_in - 1:]
        first_row = t[n_in - 1::-1]
        return toeplitz(first_col, first_row).astype(np.uint8)

    def fingerprint(self) -> str:
        return hashlib.sha256(str(self.seed).encode()).hexdigest()[:16]


def toeplitz_naive(x: np.ndarray, ts: ToeplitzSeed, m_out: int) -> np.ndarray:
    """Dense ``T @ x mod 2``; the reference for the fast path."""
    x = np.asarray(x, dtype=np.int64)
    T = ts.matrix(len(x), m_out).astype(np.int64)
    return ((T @ x) & 1).astype(np.uint8)


def _fft_len(n: int) -> int:
    size = 1
    while size < n:
        size <<= 1
    return size


def toeplitz_fft(x: np.ndarray, ts: ToeplitzSeed, m_out: int) -> np.ndarray:
    """``T @ x mod 2`` via a real FFT convolution.

    Convolution values are integers at most ``len(x)``; double precision
    rounds them exactly for inputs well beyond 2**22 bits.
    """
    x = np.asarray(x, dtype=np.uint8)
    n = len(x)
    t = ts.bits(n, m_out)
    L = _fft_len(n + len(t) - 1)
    conv = np.fft.irfft(np.fft.rfft(t.astype(float), L) * np.fft.rfft(x.astype(float), L), L)
    # (T x)_i = sum_j t[i - j + n - 1] x_j = conv[i + n - 1]
    window = conv[n - 1:n - 1 + m_out]
    y = np.rint(window)
    if len(y) and np.max(np.abs(window - y)) > 0.25:
        raise FloatingPointError("FFT convolution lost integer precision")
    y = y.astype(np.int64)
    return (y & 1).astype(np.uint8)


def toeplitz_tag(block: np.ndarray, ts: ToeplitzSeed, tag_bits: int = 8) -> int:
    """Error-check tag: ``tag_bits``-row Toeplitz hash packed into an int
    (row 0 is the most significant bit)."""
    block = np.asarray(block, dtype=np.uint8)
    if len(block) == 0:
        raise ValueError("block must be nonempty")
    n = len(block)
    t = ts.bits(n, tag_bits).astype(np.int64)
    xr = block[::-1].astype(np.int64)
    # row i of T is t[i : i + n] reversed
    h = [int(np.dot(t[i:i + n], xr)) & 1 for i in range(tag_bits)]
    return int("".join(map(str, h)), 2)


def privacy_amplify(block: np.ndarray, m_out: int, ts: ToeplitzSeed) -> np.ndarray:
    """Compress ``block`` to ``m_out`` bits with the seeded Toeplitz hash."""
    block = np.asarray(block, dtype=np.uint8)
    if m_out <= 0:
        log.warning("privacy amplification asked for %d output bits; block unusable", m_out)
        return np.empty(0, dtype=np.uint8)
    if m_out > len(block):
        raise ValueError(f"m_out={m_out} exceeds block length {len(block)}")
    return toeplitz_fft(block, ts, m_out)
