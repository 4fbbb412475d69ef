"""Link budget for the seawater channel and Bob's receiver."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

DB_PER_NEPER = 10.0 * math.log10(math.e)  # 4.3429...


@dataclass(frozen=True)
class WaterType:
    name: str
    c: float  # attenuation coefficient, 1/m

    def __post_init__(self):
        # c = 0 is allowed as a lossless reference medium
        if not self.c >= 0:
            raise ValueError(f"attenuation coefficient must be >= 0, got {self.c}")


JERLOV_III = WaterType("JerlovIII", 0.293)
# 300 m of this water is 23.7 dB
JERLOV_I = WaterType("JerlovI", 0.01819)

PRESETS = {w.name: w for w in (JERLOV_I, JERLOV_III)}


def load_presets(path: str | Path) -> dict[str, WaterType]:
    """Read ``name c`` pairs, one per line. ``#`` starts a comment."""
    presets = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'name c', got {line!r}")
        presets[parts[0]] = WaterType(parts[0], float(parts[1]))
    return presets


def parse_water(spec: str, presets: dict[str, WaterType] | None = None) -> WaterType:
    """Resolve a CLI ``--water`` value: a preset name or ``c=VALUE``."""
    presets = PRESETS if presets is None else {**PRESETS, **presets}
    if spec.startswith("c="):
        c = float(spec[2:])
        return WaterType(f"c={c:g}", c)
    try:
        return presets[spec]
    except KeyError:
        raise ValueError(f"unknown water type {spec!r}; known: {sorted(presets)}") from None


@dataclass(frozen=True)
class ChannelParams:
    water: WaterType = JERLOV_III
    length_m: float = 10.4
    eta_opt_db: float = 9.59
    y0: float = 0.0  # background yield per gate
    e_det: float = 0.015
    e0: float = 0.5

    def __post_init__(self):
        if self.length_m < 0:
            raise ValueError("length_m must be >= 0")
        if self.eta_opt_db < 0:
            raise ValueError("eta_opt_db must be >= 0")
        if not 0 <= self.y0 < 1:
            raise ValueError("y0 must lie in [0, 1)")
        if not 0 <= self.e_det <= 0.5:
            raise ValueError("e_det must lie in [0, 0.5]")
        if self.e_det >= self.e0 and self.e_det > 0:
            raise ValueError("e_det must be below e0")

    @property
    def channel_db(self) -> float:
        return attenuation_db(self.water.c, self.length_m)

    @property
    def total_db(self) -> float:
        return self.channel_db + self.eta_opt_db

    @property
    def eta(self) -> float:
        return total_efficiency(self)

    def with_total_db(self, total_db: float) -> "ChannelParams":
        """Same water and receiver, length chosen to hit ``total_db``."""
        ch_db = total_db - self.eta_opt_db
        if ch_db < 0:
            raise ValueError(f"{total_db} dB is below the receiver loss {self.eta_opt_db} dB")
        if self.water.c == 0:
            raise ValueError("a lossless medium cannot reach a set attenuation")
        return replace(self, length_m=ch_db / (DB_PER_NEPER * self.water.c))


def attenuation_db(c: float, length_m: float) -> float:
    if c < 0 or length_m < 0:
        raise ValueError("c and length_m must be non-negative")
    return DB_PER_NEPER * c * length_m


def transmittance(c: float, length_m: float) -> float:
    if c < 0 or length_m < 0:
        raise ValueError("c and length_m must be non-negative")
    return math.exp(-c * length_m)


def total_efficiency(p: ChannelParams) -> float:
    return math.exp(-p.water.c * p.length_m) * 10.0 ** (-p.eta_opt_db / 10.0)


def db_to_eta(db: float) -> float:
    return 10.0 ** (-db / 10.0)


def receiver_budget(collect_eff: float, qe: float) -> float:
    """Receiver loss in dB from collection efficiency and detector QE."""
    if not (0 < collect_eff <= 1 and 0 < qe <= 1):
        raise ValueError("efficiencies must lie in (0, 1]")
    return -10.0 * math.log10(collect_eff * qe)
