"""Three-intensity decoy-state analysis and the asymptotic secure key rate.

Everything here is analytic. Per-pulse gains follow the usual Poisson
source model

    Q_mu = Y0 + 1 - exp(-eta*mu)
    E_mu * Q_mu = e0*Y0 + e_det*(1 - exp(-eta*mu))

and the single-photon bounds are the vacuum + weak-decoy lower bound on
Y1 and upper bound on e1. Rates in bit/s are obtained by multiplying a
per-pulse quantity by the size of its sifted pulse pool (see
:meth:`SourceParams.signal_pool`).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ChannelParams, JERLOV_I, WaterType, attenuation_db, db_to_eta

E0 = 0.5

# reference operating values
REF_Q0_BPS = 16.7
REF_E_DET = 0.015
REF_ETA_OPT_DB = 9.59
REF_QU_300M_BPS = 1200.1


def h2(x):
    """Binary entropy in bits. Accepts scalars or arrays.

    >>> h2(0.5)
    1.0
    >>> h2(0.0)
    0.0
    """
    arr = np.asarray(x, dtype=float)
    if np.any((arr < 0) | (arr > 1)) or np.any(np.isnan(arr)):
        raise ValueError("h2 argument must lie in [0, 1]")
    inner = (arr > 0) & (arr < 1)
    safe = np.where(inner, arr, 0.5)
    out = np.where(inner, -safe * np.log2(safe) - (1 - safe) * np.log2(1 - safe), 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SourceParams:
    rep_rate_hz: float = 20e6
    u: float = 0.8
    v: float = 0.1
    class_ratio: tuple[int, int, int] = (2, 1, 1)  # signal : decoy : vacuum
    disclosure: float = 0.20
    kappa: float = 1.0  # calibration factor on the signal pool

    def __post_init__(self):
        if not (self.u > self.v > 0):
            raise ValueError(f"need u > v > 0, got u={self.u}, v={self.v}")
        if self.u * self.v - self.v ** 2 <= 0:
            raise ValueError("u*v - v^2 must be positive")
        if not 0 <= self.disclosure < 1:
            raise ValueError("disclosure must lie in [0, 1)")
        if self.rep_rate_hz <= 0 or self.kappa <= 0:
            raise ValueError("rep_rate_hz and kappa must be positive")
        if len(self.class_ratio) != 3 or min(self.class_ratio) < 0 or self.class_ratio[0] == 0:
            raise ValueError(f"bad class ratio {self.class_ratio}")

    def class_share(self, i: int) -> float:
        return self.class_ratio[i] / sum(self.class_ratio)

    def signal_pool(self) -> float:
        """Signal pulses per second that end up as non-disclosed sifted
        candidates: F * share * 1/2 (basis match) * (1 - disclosure) * kappa."""
        return self.kappa * self.rep_rate_hz * self.class_share(0) * 0.5 * (1 - self.disclosure)

    def decoy_pool(self) -> float:
        return self.signal_pool() * self.class_ratio[1] / self.class_ratio[0]

    def y0_from_rate(self, q0_bps: float) -> float:
        """Per-gate background yield from a vacuum count rate referenced
        to the signal pool."""
        return q0_bps / self.signal_pool()


class ECMode(enum.Enum):
    LDPC = "ldpc"
    IDEAL = "ideal"


@dataclass(frozen=True)
class KeyRateParams:
    leak_fraction_R: float = 1.0 / 3.0
    ideal_f_ec: float = 1.16

    def __post_init__(self):
        if not 0 <= self.leak_fraction_R < 1:
            raise ValueError("leak_fraction_R must lie in [0, 1)")


@dataclass(frozen=True)
class DecoyEstimate:
    Y1: float
    Q1: float
    e1: float
    consistent: bool


def estimate_single_photon(Qu: float, Qv: float, Y0: float, Eu: float, Ev: float,
                           src: SourceParams = SourceParams()) -> DecoyEstimate:
    """Vacuum + weak decoy bounds from per-pulse gains and error rates.

    ``Eu`` is accepted for symmetry with the measured tallies; the bounds
    only use the decoy error rate.
    """
    for name, val in (("Qu", Qu), ("Qv", Qv), ("Y0", Y0)):
        if not 0 <= val <= 1:
            raise ValueError(f"{name}={val} is not a per-pulse probability")
    u, v = src.u, src.v
    denom = u * v - v * v
    if denom <= 0:
        raise ValueError("u*v - v^2 must be positive")
    y1 = (u / denom) * (Qv * math.exp(v) - Qu * math.exp(u) * v * v / (u * u)
                        - (u * u - v * v) / (u * u) * Y0)
    consistent = True
    if y1 <= 0:
        return DecoyEstimate(0.0, 0.0, E0, False)
    if y1 > 1:
        y1, consistent = 1.0, False
    e1 = (Ev * Qv * math.exp(v) - E0 * Y0) / (y1 * v)
    if e1 < 0:
        e1, consistent = 0.0, False
    elif e1 > E0:
        e1, consistent = E0, False
    return DecoyEstimate(y1, y1 * u * math.exp(-u), e1, consistent)


def secure_key_rate(Q1_rate: float, e1: float, Qu_rate: float,
                    kp: KeyRateParams = KeyRateParams(), mode: ECMode = ECMode.LDPC,
                    Eu: float = 0.0) -> float:
    """Asymptotic key rate ``Q1*(1 - h2(e1)) - leak``, clamped at zero.

    LDPC mode charges a fixed fraction R of the sifted signal bits; ideal
    mode charges ``f * h2(Eu)``.
    """
    if Q1_rate < 0 or Qu_rate < 0:
        raise ValueError("rates must be non-negative")
    if not (0 <= e1 <= 0.5 and 0 <= Eu <= 0.5):
        raise ValueError("e1 and Eu must lie in [0, 0.5]")
    gain = Q1_rate * (1.0 - h2(e1))
    if ECMode(mode) is ECMode.LDPC:
        leak = Qu_rate * kp.leak_fraction_R
    else:
        leak = Qu_rate * kp.ideal_f_ec * h2(Eu)
    return max(0.0, gain - leak)


def gain(eta: float, mu: float, y0: float) -> float:
    return y0 + (-math.expm1(-eta * mu))


def qber(eta: float, mu: float, y0: float, e_det: float, e0: float = E0) -> float:
    q = gain(eta, mu, y0)
    if q == 0:
        return 0.0
    return (e0 * y0 + e_det * (-math.expm1(-eta * mu))) / q


@dataclass(frozen=True)
class Performance:
    eta: float
    Qu: float  # per pulse
    Qv: float
    Eu: float
    Ev: float
    Qu_rate: float  # bit/s
    Qv_rate: float
    estimate: DecoyEstimate
    Q1_rate: float
    R_skr: float
    R_skr_ideal: float

    @property
    def single_photon_term(self) -> float:
        """Q1 * (1 - h2(e1)) in bit/s."""
        return self.Q1_rate * (1.0 - h2(self.estimate.e1))


def predict_from_eta(eta: float, y0: float, e_det: float, src: SourceParams = SourceParams(),
                     kp: KeyRateParams = KeyRateParams(), e0: float = E0) -> Performance:
    Qu, Qv = gain(eta, src.u, y0), gain(eta, src.v, y0)
    Eu, Ev = qber(eta, src.u, y0, e_det, e0), qber(eta, src.v, y0, e_det, e0)
    est = estimate_single_photon(Qu, Qv, y0, Eu, Ev, src)
    n_s = src.signal_pool()
    Qu_rate, Q1_rate = Qu * n_s, est.Q1 * n_s
    r_ldpc = secure_key_rate(Q1_rate, est.e1, Qu_rate, kp, ECMode.LDPC, Eu)
    r_ideal = secure_key_rate(Q1_rate, est.e1, Qu_rate, kp, ECMode.IDEAL, Eu)
    return Performance(eta, Qu, Qv, Eu, Ev, Qu_rate, Qv * src.decoy_pool(), est,
                       Q1_rate, r_ldpc, r_ideal)


def predict_performance(ch: ChannelParams, src: SourceParams = SourceParams(),
                        kp: KeyRateParams = KeyRateParams()) -> Performance:
    """Closed-form Qu, Eu, Qv, Ev, decoy bounds and key rate for a channel."""
    return predict_from_eta(ch.eta, ch.y0, ch.e_det, src, kp, ch.e0)


def calibrate_kappa(target_qu_bps: float, ch: ChannelParams, src: SourceParams,
                    q0_bps: float | None = None) -> float:
    """Pool factor that makes the predicted Qu rate equal ``target_qu_bps``.

    With ``q0_bps`` given, Y0 is re-derived from it for each kappa (so the
    background contributes exactly ``q0_bps`` to the signal rate);
    otherwise ``ch.y0`` is held fixed.
    """
    base = replace(src, kappa=1.0).signal_pool()
    g = -math.expm1(-ch.eta * src.u)
    if q0_bps is None:
        return target_qu_bps / (base * (ch.y0 + g))
    if target_qu_bps <= q0_bps:
        raise ValueError("target rate must exceed the background rate")
    return (target_qu_bps - q0_bps) / (base * g)


@dataclass(frozen=True)
class OperatingPoint:
    ch: ChannelParams
    src: SourceParams
    kp: KeyRateParams


def reference_point(water: WaterType = JERLOV_I, length_m: float = 300.0, *,
                 calibrate: bool = True, q0_bps: float = REF_Q0_BPS,
                 target_qu_bps: float = REF_QU_300M_BPS) -> OperatingPoint:
    """Reference operating parameters at a given water/length.

    With ``calibrate`` the pool factor kappa is fitted so that 300 m of
    Jerlov I water gives ``target_qu_bps``; kappa is a property of the
    system, so it is fitted once at that reference point and reused for
    ``water``/``length_m``.
    """
    src = SourceParams()
    if calibrate:
        ref = ChannelParams(JERLOV_I, 300.0, REF_ETA_OPT_DB, 0.0, REF_E_DET)
        src = replace(src, kappa=calibrate_kappa(target_qu_bps, ref, src, q0_bps))
    ch = ChannelParams(water, length_m, REF_ETA_OPT_DB, src.y0_from_rate(q0_bps), REF_E_DET)
    return OperatingPoint(ch, src, KeyRateParams())


@dataclass(frozen=True)
class CurvePoint:
    L_m: float
    attenuation_db: float
    Qu_bps: float
    Eu: float
    Q1_bps: float
    e1: float
    R_skr_bps: float

    CSV_HEADER = ("L_m", "attenuation_db", "Qu_bps", "Eu", "Q1_bps", "e1", "R_skr_bps")

    def row(self):
        return (self.L_m, self.attenuation_db, self.Qu_bps, self.Eu, self.Q1_bps, self.e1,
                self.R_skr_bps)


def keyrate_curve(water: WaterType, L_min: float, L_max: float, step: float,
                  src: SourceParams = SourceParams(), kp: KeyRateParams = KeyRateParams(), *,
                  eta_opt_db: float = REF_ETA_OPT_DB, y0: float | None = None,
                  e_det: float = REF_E_DET, mode: ECMode = ECMode.LDPC) -> list[CurvePoint]:
    """Key rate against distance for one water type.

    ``L_min == L_max`` yields a single point.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if L_max < L_min:
        raise ValueError("L_max must be >= L_min")
    if y0 is None:
        y0 = src.y0_from_rate(REF_Q0_BPS)
    n = int(math.floor((L_max - L_min) / step + 1e-9)) + 1
    out = []
    for L in L_min + step * np.arange(n):
        ch = ChannelParams(water, float(L), eta_opt_db, y0, e_det)
        p = predict_performance(ch, src, kp)
        r = p.R_skr if ECMode(mode) is ECMode.LDPC else p.R_skr_ideal
        out.append(CurvePoint(float(L), ch.channel_db, p.Qu_rate, p.Eu, p.Q1_rate,
                              p.estimate.e1, r))
    return out


class UnboundedAttenuation(RuntimeError):
    pass


def max_tolerable_attenuation(src: SourceParams = SourceParams(),
                              kp: KeyRateParams = KeyRateParams(), y0: float | None = None,
                              e_det: float = REF_E_DET, *, mode: ECMode = ECMode.LDPC,
                              tol_db: float = 0.01, ceiling_db: float = 80.0) -> float:
    """Largest total loss (channel + receiver, dB) with a positive key rate."""
    if y0 is None:
        y0 = src.y0_from_rate(REF_Q0_BPS)

    def rate(db):
        p = predict_from_eta(db_to_eta(db), y0, e_det, src, kp)
        return p.R_skr if ECMode(mode) is ECMode.LDPC else p.R_skr_ideal

    if rate(ceiling_db) > 0:
        raise UnboundedAttenuation(f"key rate still positive at {ceiling_db} dB")
    lo, hi = 0.0, ceiling_db
    if rate(lo) <= 0:
        return 0.0
    while hi - lo > tol_db:
        mid = 0.5 * (lo + hi)
        if rate(mid) > 0:
            lo = mid
        else:
            hi = mid
    return lo


