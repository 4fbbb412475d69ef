"""Seeded Monte Carlo of photon detection through the channel.

The slot-level engine (:func:`simulate_run`) assumes the gates are already
aligned to the pulses. Timing lives in :func:`gate_filter` and
:func:`align_delay`, which model the 5 MHz sync-derived gate clock and the
250 ps programmable delay scan.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .channel import ChannelParams
from .protocol import EventArray, FrameArray, SLOT_NS, make_rng

log = logging.getLogger(__name__)

CHUNK = 1 << 20


@dataclass(frozen=True)
class DetectorModel:
    gate_period_ns: float = SLOT_NS
    gate_width_ns: float = 10.0
    dead_time_ns: float = 0.0
    y0_per_gate: float = 0.0
    e_det: float = 0.015

    def __post_init__(self):
        if not 0 < self.gate_width_ns < self.gate_period_ns:
            raise ValueError("need 0 < gate_width_ns < gate_period_ns")
        if not (0 <= self.y0_per_gate <= 1 and 0 <= self.e_det <= 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.dead_time_ns < 0:
            raise ValueError("dead_time_ns must be >= 0")

    @classmethod
    def from_channel(cls, ch: ChannelParams, **kw) -> "DetectorModel":
        return cls(y0_per_gate=ch.y0, e_det=ch.e_det, **kw)


@dataclass(frozen=True)
class SyncModel:
    sync_period_ns: float = 200.0
    sync_pulse_width_ns: float = 30.0
    delay_step_ps: float = 250.0
    max_delay_ns: float = 64.0
    true_offset_ns: float = 0.0
    # start of the sync pulse within its period, relative to the first
    # gate opening; the default lands it in the gap between two gates
    sync_phase_ns: float = 15.0
    pulse_width_ns: float = 9.5

    def __post_init__(self):
        if self.delay_step_ps <= 0:
            raise ValueError("delay_step_ps must be > 0")
        if self.true_offset_ns < 0:
            raise ValueError("true_offset_ns must be >= 0")

    @property
    def step_ns(self) -> float:
        return self.delay_step_ps / 1000.0

    def delay_grid(self) -> np.ndarray:
        """The programmable settings: 0, 0.25, ... below ``max_delay_ns``."""
        n = int(round(self.max_delay_ns / self.step_ns))
        return np.arange(n) * self.step_ns


def _check_frames(frames: FrameArray):
    if len(frames) == 0:
        raise ValueError("frames must be nonempty")
    if np.any(frames.cls > 2) or np.any(frames.pol > 3):
        raise ValueError("frame with invalid class or polarization code")


def _simulate_chunk(frames: FrameArray, eta: float, det: DetectorModel,
                    rng: np.random.Generator) -> EventArray:
    n = len(frames)
    mu = frames.mu
    # thinning: survivors of Poisson(mu) through eta are Poisson(eta*mu)
    lit = np.flatnonzero(mu > 0)
    k = np.zeros(n, dtype=np.int64)
    if eta > 0 and len(lit):
        k[lit] = rng.poisson(eta * mu[lit])

    # fired[i, d]: detector d clicked in slot i; only rows with activity kept
    photon_rows = np.flatnonzero(k)
    p_bg = det.y0_per_gate / 4.0
    bg_rows = []
    bg_dets = []
    if p_bg > 0:
        for d in range(4):
            m = rng.binomial(n, p_bg)
            if m:
                rows = rng.choice(n, size=m, replace=False)
                bg_rows.append(rows)
                bg_dets.append(np.full(m, d))
    bg_rows = np.concatenate(bg_rows) if bg_rows else np.empty(0, np.int64)
    bg_dets = np.concatenate(bg_dets) if bg_dets else np.empty(0, np.int64)

    active = np.union1d(photon_rows, bg_rows)
    if len(active) == 0:
        return EventArray.empty()
    fired = np.zeros((len(active), 4), dtype=bool)

    if len(photon_rows):
        counts = k[photon_rows]
        owner = np.repeat(photon_rows, counts)
        n_ph = len(owner)
        sent_basis = (frames.pol[owner] >> 1).astype(np.int64)
        sent_bit = (frames.pol[owner] & 1).astype(np.int64)
        # passive 50/50 basis split at Bob
        bob_basis = rng.integers(0, 2, size=n_ph)
        match = bob_basis == sent_basis
        flip = rng.random(n_ph) < det.e_det
        coin = rng.integers(0, 2, size=n_ph)
        bob_bit = np.where(match, sent_bit ^ flip, coin)
        det_idx = 2 * bob_basis + bob_bit
        act_idx = np.searchsorted(active, owner)
        fired[act_idx, det_idx] = True
    if len(bg_rows):
        fired[np.searchsorted(active, bg_rows), bg_dets] = True

    # squash: choose a basis among those that clicked, then a bit
    rect = fired[:, 0] | fired[:, 1]
    diag = fired[:, 2] | fired[:, 3]
    both = rect & diag
    basis = np.where(diag, 1, 0)
    if both.any():
        basis[both] = rng.integers(0, 2, size=int(both.sum()))
    b0 = fired[np.arange(len(active)), 2 * basis]
    b1 = fired[np.arange(len(active)), 2 * basis + 1]
    bit = np.where(b1 & ~b0, 1, 0)
    dbl = b0 & b1
    if dbl.any():
        bit[dbl] = rng.integers(0, 2, size=int(dbl.sum()))
    detector = (2 * basis + bit).astype(np.uint8)
    return EventArray(frames.slot[active], detector, np.ones(len(active), dtype=bool))


def simulate_run(frames: FrameArray, ch: ChannelParams | float, det: DetectorModel,
                 seed: int, *, chunk: int = CHUNK) -> EventArray:
    """Detection events for ``frames`` sent through ``ch``.

    ``ch`` may be a :class:`ChannelParams` or a bare transmittance. Slot
    ranges of ``chunk`` frames draw from independent child seeds, so the
    result depends only on ``seed`` and ``chunk``.
    """
    _check_frames(frames)
    eta = ch.eta if isinstance(ch, ChannelParams) else float(ch)
    if not 0 <= eta <= 1:
        raise ValueError(f"transmittance {eta} outside [0, 1]")
    n_chunks = math.ceil(len(frames) / chunk)
    seqs = np.random.SeedSequence(seed).spawn(n_chunks)
    parts = []
    for i, ss in enumerate(seqs):
        sl = slice(i * chunk, (i + 1) * chunk)
        parts.append(_simulate_chunk(frames[sl], eta, det, make_rng(ss)))
    return EventArray.concat(parts)


def _in_windows(t: np.ndarray, start: float, width: float, period: float) -> np.ndarray:
    return np.mod(t - start, period) < width


def gate_filter(click_times_ns, detectors, det: DetectorModel, sync: SyncModel, *,
                delay_ns: float = 0.0) -> EventArray:
    """Keep clicks that fall inside an open gate.

    Gate ``k`` spans ``[k*P + delay, k*P + delay + W)``. Any gate that
    overlaps a sync pulse is blanked entirely.
    """
    t = np.asarray(click_times_ns, dtype=float)
    detectors = np.asarray(detectors, dtype=np.uint8)
    P, W = det.gate_period_ns, det.gate_width_ns
    k = np.floor((t - delay_ns) / P)
    in_gate = (t - delay_ns - k * P) < W
    gate_start = k * P + delay_ns
    blanked = _gate_overlaps_sync(gate_start, W, sync)
    keep = in_gate & ~blanked & (k >= 0)
    return EventArray(k[keep].astype(np.uint64), detectors[keep], np.ones(int(keep.sum()), bool))


def _gate_overlaps_sync(gate_start, width, sync: SyncModel):
    # sync pulse j spans [j*S + phase, j*S + phase + Ws)
    S, Ws = sync.sync_period_ns, sync.sync_pulse_width_ns
    rel = np.mod(np.asarray(gate_start, dtype=float) - sync.sync_phase_ns, S)
    # overlap iff gate start lies in (-width, Ws) modulo S
    return (rel < Ws) | (rel > S - width)


def blanked_fraction(det: DetectorModel, sync: SyncModel, *, delay_ns: float = 0.0) -> float:
    """Fraction of gates lost to sync blanking over one sync period."""
    per = int(round(sync.sync_period_ns / det.gate_period_ns))
    starts = np.arange(per) * det.gate_period_ns + delay_ns
    return float(np.mean(_gate_overlaps_sync(starts, det.gate_width_ns, sync)))


class AlignmentError(RuntimeError):
    pass


def _gated_counts(delays, det, sync, probe_frames, detect_prob, rng):
    """Monte Carlo in-gate click counts for each candidate delay.

    A pulse's photons arrive uniformly over the pulse width, centred
    ``true_offset + W/2`` after the period start; background clicks are
    uniform over the period.
    """
    P, W = det.gate_period_ns, det.gate_width_ns
    half = sync.pulse_width_ns / 2.0
    centre = sync.true_offset_ns + W / 2.0
    counts = np.empty(len(delays), dtype=np.int64)
    for i, d in enumerate(delays):
        n_sig = rng.binomial(probe_frames, detect_prob)
        t_sig = centre + rng.uniform(-half, half, size=n_sig)
        n_bg = rng.binomial(probe_frames, min(1.0, det.y0_per_gate * P / W))
        t_bg = rng.uniform(0, P, size=n_bg)
        t = np.concatenate([t_sig, t_bg])
        counts[i] = int(np.count_nonzero(_in_windows(t, d, W, P)))
    return counts


def align_delay(det: DetectorModel, sync: SyncModel, probe_frames: int, seed: int, *,
                detect_prob: float = 0.01, alpha: float = 1e-3) -> float:
    """Scan the delay chip and return the setting that centres the gate on
    the pulse, reduced modulo the gate period.

    Each setting is probed with ``probe_frames`` pulses (``detect_prob``
    is the per-pulse click probability with the gate fully open; the
    default matches a ~200 kHz count rate at 20 MHz). The count profile is
    cross-correlated with the expected gate/pulse overlap and the peak is
    taken, which uses both edges of the profile rather than its flat top.

    Raises :class:`AlignmentError` if a chi-square test cannot reject a
    flat profile at level ``alpha``.
    """
    if probe_frames <= 0:
        raise ValueError("probe_frames must be positive")
    rng = make_rng(seed)
    delays = sync.delay_grid()
    counts = _gated_counts(delays, det, sync, probe_frames, detect_prob, rng)
    mean = counts.mean()
    if mean == 0:
        raise AlignmentError("no clicks at any delay setting")
    chi2 = float(((counts - mean) ** 2).sum() / mean)
    p_flat = stats.chi2.sf(chi2, len(counts) - 1)
    if p_flat > alpha:
        raise AlignmentError(
            f"gated counts are flat across {len(delays)} delays (chi2={chi2:.1f}, p={p_flat:.3g})")

    P, W = det.gate_period_ns, det.gate_width_ns
    step = sync.step_ns
    # expected profile vs delay offset: overlap of gate [x, x+W) with the
    # pulse [W/2 - half, W/2 + half), on a fine lattice of one period
    half = sync.pulse_width_ns / 2.0
    lattice = np.arange(int(round(P / step))) * step

    def overlap(x):
        x = (x + P / 2) % P - P / 2
        lo = np.maximum(x, W / 2 - half)
        hi = np.minimum(x + W, W / 2 + half)
        return np.clip(hi - lo, 0, None)

    # settings past one period repeat earlier phases; average them so no
    # phase is weighted twice
    phase = np.rint((delays % P) / step).astype(int) % len(lattice)
    folded = np.bincount(phase, counts, len(lattice)) / np.maximum(
        np.bincount(phase, minlength=len(lattice)), 1)
    resid = folded - np.median(folded)
    # score(c) = sum_j resid_j * template(lattice_j - c)
    scores = np.array([np.dot(resid, overlap(lattice - c)) for c in lattice])
    best = lattice[int(np.argmax(scores))]
    log.debug("align_delay: best=%.2f ns, chi2=%.1f", best, chi2)
    return float(best % P)


def circular_distance(a: float, b: float, period: float) -> float:
    d = (a - b) % period
    return min(d, period - d)
