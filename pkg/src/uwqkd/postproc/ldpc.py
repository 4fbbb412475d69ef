"""Quasi-cyclic LDPC code from the 802.16e rate-3/4B base matrix, lifted to
z = 384 (n = 9216, k = 6912), with a normalized min-sum decoder.

Reconciliation is one-way: Alice encodes her sifted block as the
systematic part of a codeword and sends the 2304 parity bits; Bob decodes
his noisy copy with the parity bits pinned.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

FIXTURE_NAME = "ieee80216e_r34b_z96.txt"
FIXTURE_SHA256 = "ff8acb283169f89d2fa4392b711bcc85fd40a759bcbca98b767c8b94a6d60c30"
Z_DEFAULT = 384
PARITY_LLR = 100.0


class FixtureError(ValueError):
    pass


def load_base_matrix(path: str | Path | None = None, *, check_digest: bool = True
                     ) -> tuple[np.ndarray, int, str]:
    """Read a base-matrix fixture; returns ``(shifts, z0, name)``."""
    if path is None:
        ref = resources.files("uwqkd.data").joinpath(FIXTURE_NAME)
        raw, name = ref.read_bytes(), FIXTURE_NAME
    else:
        path = Path(path)
        raw, name = path.read_bytes(), path.name
    if check_digest and hashlib.sha256(raw).hexdigest() != FIXTURE_SHA256:
        raise FixtureError(f"{name}: digest does not match the shipped rate-3/4B table")
    z0, rows = None, []
    for line in raw.decode().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("z0"):
            z0 = int(line.split()[1])
            continue
        rows.append([int(x) for x in line.split()])
    if z0 is None:
        raise FixtureError(f"{name}: missing 'z0' line")
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise FixtureError(f"{name}: ragged or empty base matrix")
    base = np.array(rows, dtype=np.int64)
    validate_base(base, z0, name)
    return base, z0, name


def validate_base(base: np.ndarray, z0: int, name: str = "base matrix") -> None:
    """Check the dual-diagonal parity structure the encoder relies on."""
    m, n = base.shape
    k = n - m
    if m < 3:
        raise FixtureError(f"{name}: need at least 3 block rows")
    if base.min() < -1 or base.max() >= z0:
        raise FixtureError(f"{name}: shift values must lie in [-1, {z0})")
    hb = base[:, k]
    nz = np.flatnonzero(hb >= 0)
    if len(nz) != 3 or nz[0] != 0 or nz[-1] != m - 1 or hb[0] != hb[-1]:
        raise FixtureError(f"{name}: h_b column must have equal end shifts and one middle entry")
    dd = base[:, k + 1:]
    expect = np.full((m, m - 1), -1)
    for i in range(m):
        if i < m - 1:
            expect[i, i] = 0
        if i > 0:
            expect[i, i - 1] = 0
    if not np.array_equal(dd, expect):
        raise FixtureError(f"{name}: parity part is not dual-diagonal with zero shifts")


def lift_shifts(base: np.ndarray, z0: int, z: int) -> np.ndarray:
    """Scale shifts to a new expansion factor: floor(p * z / z0)."""
    return np.where(base < 0, -1, (base * z) // z0)


def _shift(x: np.ndarray, s: int) -> np.ndarray:
    # circulant P^s: row i has its one in column (i + s) mod z
    return np.roll(x, -s, axis=-1)


@dataclass
class LdpcCode:
    shifts: np.ndarray
    z: int

    @classmethod
    def default(cls, z: int = Z_DEFAULT) -> "LdpcCode":
        base, z0, _ = load_base_matrix()
        return cls(lift_shifts(base, z0, z), z)

    @classmethod
    def from_fixture(cls, path, z: int = Z_DEFAULT, *, check_digest: bool = True) -> "LdpcCode":
        base, z0, _ = load_base_matrix(path, check_digest=check_digest)
        return cls(lift_shifts(base, z0, z), z)

    @property
    def mb(self) -> int:
        return self.shifts.shape[0]

    @property
    def nb(self) -> int:
        return self.shifts.shape[1]

    @property
    def n(self) -> int:
        return self.nb * self.z

    @property
    def k(self) -> int:
        return (self.nb - self.mb) * self.z

    @property
    def rate(self) -> float:
        return self.k / self.n

    @cached_property
    def H(self) -> sp.csr_matrix:
        rows, cols = [], []
        t = np.arange(self.z)
        for i, j in zip(*np.nonzero(self.shifts >= 0)):
            s = self.shifts[i, j]
            rows.append(i * self.z + t)
            cols.append(j * self.z + (t + s) % self.z)
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        return sp.csr_matrix((np.ones(len(rows), np.int8), (rows, cols)),
                             shape=(self.mb * self.z, self.n))

    def syndrome(self, words: np.ndarray) -> np.ndarray:
        words = np.atleast_2d(words).astype(np.int32)
        return ((self.H @ words.T).T & 1).astype(np.uint8)

    def encode(self, msg: np.ndarray) -> np.ndarray:
        """Systematic codewords ``[msg | parity]`` for one or many messages."""
        msg = np.asarray(msg, dtype=np.uint8)
        single = msg.ndim == 1
        msg = np.atleast_2d(msg)
        if msg.shape[1] != self.k:
            raise ValueError(f"message length {msg.shape[1]} != k = {self.k}")
        z, mb, kb = self.z, self.mb, self.nb - self.mb
        s_blk = msg.reshape(len(msg), kb, z)
        lam = np.zeros((len(msg), mb, z), dtype=np.uint8)
        for i in range(mb):
            for j in range(kb):
                sh = self.shifts[i, j]
                if sh >= 0:
                    lam[:, i] ^= _shift(s_blk[:, j], sh)
        hb = self.shifts[:, kb]
        mid = int(np.flatnonzero(hb >= 0)[1])
        a, b = int(hb[0]), int(hb[mid])
        p = np.zeros((len(msg), mb, z), dtype=np.uint8)
        # summing all block rows cancels the dual diagonal and both end
        # entries of h_b, leaving P^b p0 = sum(lambda)
        p[:, 0] = _shift(np.bitwise_xor.reduce(lam, axis=1), -b)
        p0b = _shift(p[:, 0], b)
        p[:, 1] = lam[:, 0] ^ _shift(p[:, 0], a)
        for i in range(1, mb - 1):
            p[:, i + 1] = lam[:, i] ^ p[:, i]
            if i == mid:
                p[:, i + 1] ^= p0b
        cw = np.concatenate([msg, p.reshape(len(msg), -1)], axis=1)
        return cw[0] if single else cw

    @cached_property
    def _edges(self):
        """Per block row: (z, d) variable indices of each check's edges, and
        the flat edge order used for the sparse variable-sum matrix."""
        groups = []
        t = np.arange(self.z)
        for i in range(self.mb):
            cols = [j * self.z + (t + self.shifts[i, j]) % self.z
                    for j in np.flatnonzero(self.shifts[i] >= 0)]
            groups.append(np.stack(cols, axis=1))
        flat = np.concatenate([g.ravel() for g in groups])
        # sums edge messages into their variable nodes
        E = len(flat)
        scatter = sp.csr_matrix((np.ones(E), (np.arange(E), flat)), shape=(E, self.n))
        return groups, flat, scatter.T.tocsr()

    def decode(self, llr: np.ndarray, *, max_iter: int = 60, alpha: float = 0.75
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Normalized min-sum, flooding schedule.

        ``llr`` has shape ``(n,)`` or ``(B, n)``; positive favours bit 0.
        Returns ``(bits, converged, iterations)`` per frame. A frame whose
        hard decision already satisfies all checks stops at iteration 0.
        """
        llr = np.asarray(llr, dtype=float)
        single = llr.ndim == 1
        llr = np.atleast_2d(llr)
        B = len(llr)
        groups, flat, gather_t = self._edges
        bits = (llr < 0).astype(np.uint8)
        done = ~self.syndrome(bits).any(axis=1)
        iters = np.zeros(B, dtype=np.int64)
        v2c = llr[:, flat]
        c2v = np.zeros_like(v2c)
        active = np.flatnonzero(~done)
        it = 0
        while len(active) and it < max_iter:
            it += 1
            m = v2c[active]
            out = np.empty_like(m)
            off = 0
            for g in groups:
                d = g.shape[1]
                blk = m[:, off:off + g.size].reshape(len(active), self.z, d)
                mag = np.abs(blk)
                sgn = np.where(blk < 0, -1.0, 1.0)
                sprod = np.prod(sgn, axis=2, keepdims=True)
                order = np.argpartition(mag, 1, axis=2)
                min1 = np.take_along_axis(mag, order[:, :, :1], axis=2)
                min2 = np.take_along_axis(mag, order[:, :, 1:2], axis=2)
                is_min = np.arange(d)[None, None, :] == order[:, :, :1]
                o = alpha * sprod * sgn * np.where(is_min, min2, min1)
                out[:, off:off + g.size] = o.reshape(len(active), -1)
                off += g.size
            c2v[active] = out
            total = llr[active] + (gather_t @ out.T).T
            v2c[active] = total[:, flat] - out
            hard = (total < 0).astype(np.uint8)
            bits[active] = hard
            ok = ~self.syndrome(hard).any(axis=1)
            iters[active] = it
            done[active[ok]] = True
            active = active[~ok]
        if single:
            return bits[0], done[0], iters[0]
        return bits, done, iters


@dataclass
class ReconcileResult:
    bits: np.ndarray
    converged: bool
    iterations: int
    leaked_bits: int


def channel_llr(bits: np.ndarray, qber: float) -> np.ndarray:
    q = min(max(qber, 1e-4), 0.5 - 1e-6)
    mag = np.log((1 - q) / q)
    return np.where(np.asarray(bits) == 0, mag, -mag)


def alice_parity(code: LdpcCode, alice_block: np.ndarray) -> np.ndarray:
    """The n - k parity bits Alice sends for her k-bit block(s)."""
    return code.encode(alice_block)[..., code.k:]


def bob_correct(code: LdpcCode, bob_block: np.ndarray, parity: np.ndarray, qber: float, *,
                max_iter: int = 60) -> ReconcileResult:
    """Bob's side: decode his block against Alice's parity bits."""
    bob_block = np.asarray(bob_block, dtype=np.uint8)
    if bob_block.shape[-1] != code.k or parity.shape[-1] != code.n - code.k:
        raise ValueError("block or parity length does not match the code")
    llr = np.concatenate([channel_llr(bob_block, qber),
                          np.where(np.asarray(parity) == 0, PARITY_LLR, -PARITY_LLR)], axis=-1)
    bits, ok, it = code.decode(llr, max_iter=max_iter)
    return ReconcileResult(bits[..., :code.k].astype(np.uint8), bool(np.all(ok)), int(np.max(it)),
                           code.n - code.k)


def ldpc_syndrome_reconcile(alice_block: np.ndarray, bob_block: np.ndarray,
                            code: LdpcCode | None = None, max_iter: int = 60, *,
                            qber: float = 0.0155) -> ReconcileResult:
    """One reconciliation round for a single k-bit block."""
    code = code or default_code()
    alice_block = np.asarray(alice_block, dtype=np.uint8)
    if alice_block.shape != (code.k,) or np.shape(bob_block) != (code.k,):
        raise ValueError(f"blocks must be exactly k = {code.k} bits")
    return bob_correct(code, bob_block, alice_parity(code, alice_block), qber,
                       max_iter=max_iter)


_DEFAULT: LdpcCode | None = None


def default_code() -> LdpcCode:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = LdpcCode.default()
    return _DEFAULT
