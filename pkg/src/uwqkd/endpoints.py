"""Alice and Bob as session state machines.

Work is cut into epochs of ``epoch_frames`` consecutive slots. Per epoch:

    Bob   -> BASIS_ANNOUNCE   gated slots and measurement bases
    Alice -> BASIS_ANNOUNCE   basis-match mask, class of every announced slot
    Alice -> DISCLOSE_SELECT  her bits at the shared-seed disclosed positions
    Bob   -> STATS_REPORT     epoch tallies (Alice adopts them)
    Alice -> SYNDROME x g     parity bits of each full 6912-bit group
    Bob   -> STATS_REPORT     decode verdict per group

Every time 256 corrected groups accumulate (and once more at STOP for a
partial block) the endpoints run the PA step:

    Alice -> PA_PARAMS        block id, group ids, output length
    Alice -> TAG              8-bit Toeplitz tag of the corrected block
    Bob   -> STATS_REPORT     tag verdict; a mismatch discards the block

Both then hash with the per-block seed. The corrected groups are
identical on both sides, so the final keys match bit for bit.
"""
from __future__ import annotations

import enum
import logging
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .decoy import KeyRateParams, SourceParams
from .link.session import MsgType, ProtocolError, Session, pack_bits, unpack_bits
from .postproc.amplify import (PaAccumulator, PaBlockPolicy, derive_seed, estimate_from_tallies,
                               pa_output_length)
from .postproc.ldpc import PARITY_LLR, LdpcCode, alice_parity, channel_llr, default_code
from .postproc.toeplitz import privacy_amplify, toeplitz_tag
from .protocol import EventArray, FrameArray, StateClass
from .sifting import TallySet, alice_match, bob_announcement, disclosure_mask, tally

log = logging.getLogger(__name__)

EPOCH_HDR = struct.Struct("<II")  # epoch, count
REPLY_HDR = struct.Struct("<I3Qd")  # epoch, frames per class, elapsed_s
ID_HDR = struct.Struct("<I")
QBER_FLOOR = 0.01


class Phase(enum.Enum):
    IDLE = "idle"
    SIFTING = "sifting"
    RECONCILING = "reconciling"
    AMPLIFYING = "amplifying"
    DONE = "done"


@dataclass(frozen=True)
class SessionConfig:
    """Public parameters both endpoints must agree on at START."""

    seed: int
    n_slots: int
    first_slot: int = 0
    epoch_frames: int = 1 << 22
    disclosure: float = 0.20
    u: float = 0.8
    v: float = 0.1
    rep_rate_hz: float = 20e6
    groups_per_pa: int = 256
    tag_bits: int = 8
    flush_partial: bool = True
    leak_fraction_R: float = 1.0 / 3.0
    max_iter: int = 60

    def __post_init__(self):
        if self.n_slots < 0 or self.epoch_frames <= 0:
            raise ValueError("n_slots must be >= 0 and epoch_frames > 0")
        if self.tag_bits % 8:
            raise ValueError("tag_bits must be a whole number of bytes")

    @property
    def n_epochs(self) -> int:
        return -(-self.n_slots // self.epoch_frames)

    def epoch_range(self, e: int) -> tuple[int, int]:
        lo = self.first_slot + e * self.epoch_frames
        return lo, min(lo + self.epoch_frames, self.first_slot + self.n_slots)

    @property
    def policy(self) -> PaBlockPolicy:
        return PaBlockPolicy(self.groups_per_pa, tag_bits=self.tag_bits,
                             flush_partial=self.flush_partial)

    @property
    def source(self) -> SourceParams:
        return SourceParams(rep_rate_hz=self.rep_rate_hz, u=self.u, v=self.v,
                            disclosure=self.disclosure)

    @property
    def key_params(self) -> KeyRateParams:
        return KeyRateParams(leak_fraction_R=self.leak_fraction_R)


def epoch_seed(seed: int, epoch: int) -> int:
    state = np.random.SeedSequence([seed, 0, epoch]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


@dataclass
class BlockRecord:
    block_id: int
    n_groups: int
    block_bits: int
    m_out: int
    tag: int
    tag_ok: bool
    seed_fingerprint: str


@dataclass
class EndpointResult:
    role: str
    key: np.ndarray
    tallies: TallySet
    blocks: list[BlockRecord] = field(default_factory=list)
    groups_ok: int = 0
    groups_failed: int = 0
    leaked_bits: int = 0
    ledger: dict = field(default_factory=dict)

    def manifest(self) -> dict:
        return {
            "role": self.role, "key_bits": int(len(self.key)),
            "groups_ok": self.groups_ok, "groups_failed": self.groups_failed,
            "leaked_bits": self.leaked_bits, "ledger": dict(self.ledger),
            "blocks": [asdict(b) for b in self.blocks],
        }


class _Endpoint:
    role = ""

    def __init__(self, session: Session, cfg: SessionConfig, code: LdpcCode | None = None):
        self.s = session
        self.code = code or default_code()
        self._reset(cfg)

    def _reset(self, cfg: SessionConfig):
        self.cfg = cfg
        self.phase = Phase.IDLE
        self.tallies = TallySet(elapsed_s=0.0, disclosure=cfg.disclosure)
        self.pending = np.zeros(0, dtype=np.uint8)  # sifted key not yet grouped
        self.next_group = 0
        self.acc = PaAccumulator(cfg.policy)
        self.key_parts: list[np.ndarray] = []
        self.blocks: list[BlockRecord] = []
        self.groups_ok = self.groups_failed = 0

    def _take_groups(self) -> tuple[list[int], np.ndarray]:
        k = self.code.k
        g = len(self.pending) // k
        ids = list(range(self.next_group, self.next_group + g))
        groups = self.pending[:g * k].reshape(g, k)
        self.pending = self.pending[g * k:]
        self.next_group += g
        return ids, groups

    def _accept(self, ids, groups, ok) -> list:
        emitted = []
        for gid, bits, good in zip(ids, groups, ok):
            if good:
                self.groups_ok += 1
                blk = self.acc.add(gid, bits)
                if blk is not None:
                    emitted.append(blk)
            else:
                self.groups_failed += 1
        return emitted

    def _finish_block(self, block_id, group_ids, bits, m_out, tag, tag_ok):
        ts = derive_seed(self.cfg.seed, block_id, "pa")
        if tag_ok and m_out > 0:
            self.key_parts.append(privacy_amplify(bits, m_out, ts))
        elif tag_ok:
            log.warning("%s: block %d yields no secure key", self.role, block_id)
        self.blocks.append(BlockRecord(block_id, len(group_ids), int(len(bits)),
                                       int(m_out if tag_ok else 0), int(tag), bool(tag_ok),
                                       ts.fingerprint()))

    def result(self) -> EndpointResult:
        key = np.concatenate(self.key_parts) if self.key_parts else np.zeros(0, np.uint8)
        both = self.s.ledger.bits + self.s.rx_ledger.bits  # whole transcript
        return EndpointResult(self.role, key.astype(np.uint8), self.tallies, self.blocks,
                              self.groups_ok, self.groups_failed,
                              self.s.ledger.leaked + self.s.rx_ledger.leaked, dict(both))


class Alice(_Endpoint):
    role = "alice"

    def __init__(self, session: Session, cfg: SessionConfig, frames: FrameArray,
                 code: LdpcCode | None = None):
        super().__init__(session, cfg, code)
        self.frames = frames

    def run(self) -> EndpointResult:
        cfg = self.cfg
        self.s.send_json(MsgType.START, asdict(cfg))
        self.s.recv(MsgType.START)
        for e in range(cfg.n_epochs):
            self._epoch(e)
        self._amplify_all([b for b in [self.acc.flush()] if b is not None])
        self.s.send_json(MsgType.STOP, {"blocks": len(self.blocks)})
        self.s.recv(MsgType.STOP)
        self.phase = Phase.DONE
        return self.result()

    def _epoch(self, e: int):
        self.phase = Phase.SIFTING
        lo, hi = self.cfg.epoch_range(e)
        i0, i1 = np.searchsorted(self.frames.slot, [lo, hi])
        frames = self.frames[i0:i1]
        if len(frames) != hi - lo:
            raise ProtocolError(f"alice: epoch {e} covers {len(frames)} frames, "
                                f"expected {hi - lo}")

        msg = self.s.recv(MsgType.BASIS_ANNOUNCE)
        ep, n = EPOCH_HDR.unpack_from(msg.body)
        if ep != e:
            raise ProtocolError(f"alice: announcement for epoch {ep} during epoch {e}")
        off = EPOCH_HDR.size
        slots = np.frombuffer(msg.body, dtype="<u8", count=n, offset=off)
        bases = unpack_bits(msg.body[off + 8 * n:], n)
        match, cls_all = alice_match(frames, slots, bases)

        fpc = np.bincount(frames.cls, minlength=3)[:3]
        elapsed = len(frames) / self.cfg.rep_rate_hz
        self.s.send(MsgType.BASIS_ANNOUNCE,
                    REPLY_HDR.pack(e, *map(int, fpc), elapsed) + pack_bits(match)
                    + cls_all.astype(np.uint8).tobytes())

        idx = np.searchsorted(frames.slot, slots[match])
        bits = frames.bit[idx].astype(np.uint8)
        cls = cls_all[match]
        disclosed = disclosure_mask(epoch_seed(self.cfg.seed, e), len(cls), self.cfg.disclosure)
        self.s.send(MsgType.DISCLOSE_SELECT, ID_HDR.pack(e) + pack_bits(bits[disclosed]))

        rep = self.s.recv(MsgType.STATS_REPORT).json()
        if rep.get("kind") != "tally" or rep.get("epoch") != e:
            raise ProtocolError(f"alice: unexpected report {rep}")
        self.tallies = self.tallies.merge(TallySet.from_dict(rep["tally"]))
        keep = (cls == int(StateClass.SIGNAL)) & ~disclosed
        self.pending = np.concatenate([self.pending, bits[keep]])

        self.phase = Phase.RECONCILING
        ids, groups = self._take_groups()
        if not ids:
            return
        parity = alice_parity(self.code, groups)
        for gid, p in zip(ids, parity):
            self.s.send(MsgType.SYNDROME, ID_HDR.pack(gid) + pack_bits(p))
        rep = self.s.recv(MsgType.STATS_REPORT).json()
        if rep.get("kind") != "decode" or rep.get("groups") != ids:
            raise ProtocolError(f"alice: decode report does not match groups {ids[0]}..")
        self._amplify_all(self._accept(ids, groups, rep["ok"]))

    def _amplify_all(self, blocks):
        self.phase = Phase.AMPLIFYING
        for block_id, group_ids, bits in blocks:
            est = estimate_from_tallies(self.tallies, self.cfg.source)
            m_out = pa_output_length(self.tallies, est, self.cfg.key_params, len(bits),
                                     self.cfg.tag_bits)
            self.s.send_json(MsgType.PA_PARAMS, {"block_id": block_id, "group_ids": group_ids,
                                                 "m_out": m_out})
            tag = toeplitz_tag(bits, derive_seed(self.cfg.seed, block_id, "tag"),
                               self.cfg.tag_bits)
            self.s.send(MsgType.TAG, ID_HDR.pack(block_id)
                        + tag.to_bytes(self.cfg.tag_bits // 8, "big"))
            rep = self.s.recv(MsgType.STATS_REPORT).json()
            if rep.get("kind") != "verdict" or rep.get("block_id") != block_id:
                raise ProtocolError(f"alice: unexpected report {rep}")
            self._finish_block(block_id, group_ids, bits, m_out, tag, rep["match"])


class Bob(_Endpoint):
    role = "bob"

    def __init__(self, session: Session, cfg: SessionConfig | None, events: EventArray,
                 code: LdpcCode | None = None):
        # cfg may be None: Bob then adopts whatever Alice proposes at START
        super().__init__(session, cfg or SessionConfig(seed=0, n_slots=0), code)
        self._expected = cfg
        self.events = events.gated()

    def run(self) -> EndpointResult:
        start = self.s.recv(MsgType.START).json()
        cfg = SessionConfig(**start)
        if self._expected is not None and cfg != self._expected:
            raise ProtocolError("bob: session parameters differ from local configuration")
        self._reset(cfg)
        self.s.send_json(MsgType.START, {"ok": True})
        for e in range(cfg.n_epochs):
            self._epoch(e)
        while True:
            msg = self.s.recv(MsgType.PA_PARAMS, MsgType.STOP)
            if msg.type == MsgType.STOP:
                break
            self._amplify_one(msg.json(), self.acc.flush())
        self.s.send_json(MsgType.STOP, {"blocks": len(self.blocks)})
        self.phase = Phase.DONE
        return self.result()

    def _epoch(self, e: int):
        self.phase = Phase.SIFTING
        lo, hi = self.cfg.epoch_range(e)
        i0, i1 = np.searchsorted(self.events.slot, [lo, hi])
        ev = self.events[i0:i1]
        slots, bases = bob_announcement(ev)
        self.s.send(MsgType.BASIS_ANNOUNCE, EPOCH_HDR.pack(e, len(slots))
                    + slots.astype("<u8").tobytes() + pack_bits(bases))

        msg = self.s.recv(MsgType.BASIS_ANNOUNCE)
        ep, *fpc, elapsed = REPLY_HDR.unpack_from(msg.body)
        if ep != e:
            raise ProtocolError(f"bob: reply for epoch {ep} during epoch {e}")
        n = len(slots)
        off = REPLY_HDR.size
        nb = (n + 7) // 8
        match = unpack_bits(msg.body[off:off + nb], n).astype(bool)
        cls_all = np.frombuffer(msg.body, dtype=np.uint8, count=n, offset=off + nb)

        bits = (ev.detector & 1)[match].astype(np.uint8)
        cls = cls_all[match]
        disclosed = disclosure_mask(epoch_seed(self.cfg.seed, e), len(cls), self.cfg.disclosure)
        msg = self.s.recv(MsgType.DISCLOSE_SELECT)
        (ep,) = ID_HDR.unpack_from(msg.body)
        if ep != e:
            raise ProtocolError(f"bob: disclosure for epoch {ep} during epoch {e}")
        alice_disc = unpack_bits(msg.body[ID_HDR.size:], int(disclosed.sum()))
        errors = np.zeros(len(cls), dtype=bool)
        errors[disclosed] = alice_disc != bits[disclosed]
        t = tally(cls, disclosed, errors, fpc, elapsed, self.cfg.disclosure)
        self.tallies = self.tallies.merge(t)
        self.s.send_json(MsgType.STATS_REPORT, {"kind": "tally", "epoch": e,
                                                "tally": t.to_dict()})
        keep = (cls == int(StateClass.SIGNAL)) & ~disclosed
        self.pending = np.concatenate([self.pending, bits[keep]])

        self.phase = Phase.RECONCILING
        ids, groups = self._take_groups()
        if not ids:
            return
        m = self.code.n - self.code.k
        parity = np.empty((len(ids), m), dtype=np.uint8)
        for j, gid in enumerate(ids):
            msg = self.s.recv(MsgType.SYNDROME)
            (got,) = ID_HDR.unpack_from(msg.body)
            if got != gid:
                raise ProtocolError(f"bob: syndrome for group {got}, expected {gid}")
            parity[j] = unpack_bits(msg.body[ID_HDR.size:], m)
        qber = max(self.tallies.Eu, QBER_FLOOR)
        corrected, ok = self._decode(groups, parity, qber)
        self.s.send_json(MsgType.STATS_REPORT, {"kind": "decode", "groups": ids,
                                                "ok": [bool(x) for x in ok]})
        for blk in self._accept(ids, corrected, ok):
            msg = self.s.recv(MsgType.PA_PARAMS)
            self._amplify_one(msg.json(), blk)

    def _decode(self, groups, parity, qber):
        llr = np.concatenate([channel_llr(groups, qber),
                              np.where(parity == 0, PARITY_LLR, -PARITY_LLR)], axis=-1)
        bits, ok, _ = self.code.decode(llr, max_iter=self.cfg.max_iter)
        return bits[:, :self.code.k].astype(np.uint8), np.atleast_1d(ok)

    def _amplify_one(self, params: dict, blk):
        self.phase = Phase.AMPLIFYING
        if blk is None:
            raise ProtocolError("bob: PA_PARAMS received with no block pending")
        block_id, group_ids, bits = blk
        if params["block_id"] != block_id or params["group_ids"] != group_ids:
            raise ProtocolError(f"bob: PA block {params['block_id']} does not match local "
                                f"block {block_id}")
        msg = self.s.recv(MsgType.TAG)
        (bid,) = ID_HDR.unpack_from(msg.body)
        their = int.from_bytes(msg.body[ID_HDR.size:], "big")
        mine = toeplitz_tag(bits, derive_seed(self.cfg.seed, block_id, "tag"), self.cfg.tag_bits)
        ok = bid == block_id and their == mine
        if not ok:
            log.warning("bob: tag mismatch on block %d, discarding", block_id)
        self.s.send_json(MsgType.STATS_REPORT, {"kind": "verdict", "block_id": block_id,
                                                "match": bool(ok)})
        self._finish_block(block_id, group_ids, bits, int(params["m_out"]), mine, ok)
