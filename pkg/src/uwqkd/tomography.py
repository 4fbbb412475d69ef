"""Single-qubit polarization tomography from H/V/P/M (optionally R/L)
counts, and Uhlmann fidelity.

Convention: H = (1, 0), V = (0, 1), P = (H + V)/sqrt2, M = (H - V)/sqrt2,
so s1 couples to sigma_z, s2 to sigma_x and s3 to sigma_y.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)

_PSD_TOL = 1e-10
_ROUNDOFF = 64 * np.finfo(float).eps


def _ket(a, b):
    return np.array([a, b], dtype=complex)


KETS = {
    "H": _ket(1, 0),
    "V": _ket(0, 1),
    "P": _ket(1, 1) / np.sqrt(2),
    "M": _ket(1, -1) / np.sqrt(2),
    "R": _ket(1, 1j) / np.sqrt(2),
    "L": _ket(1, -1j) / np.sqrt(2),
}
IDEAL = {k: np.outer(v, v.conj()) for k, v in KETS.items() if k in "HVPM"}


@dataclass(frozen=True)
class TomographyCounts:
    n_H: int
    n_V: int
    n_P: int
    n_M: int
    n_R: int | None = None
    n_L: int | None = None

    def __post_init__(self):
        vals = [self.n_H, self.n_V, self.n_P, self.n_M]
        if (self.n_R is None) != (self.n_L is None):
            raise ValueError("give both circular counts or neither")
        if self.n_R is not None:
            vals += [self.n_R, self.n_L]
        if min(vals) < 0:
            raise ValueError("counts must be non-negative")
        if self.n_H + self.n_V == 0 or self.n_P + self.n_M == 0:
            raise ValueError("each linear basis needs at least one count")
        if self.n_R is not None and self.n_R + self.n_L == 0:
            raise ValueError("circular basis given with zero counts")


def is_density_matrix(rho: np.ndarray, tol: float = _PSD_TOL) -> bool:
    rho = np.asarray(rho)
    if rho.shape != (2, 2):
        return False
    if not np.allclose(rho, rho.conj().T, atol=tol):
        return False
    if abs(np.trace(rho) - 1) > tol:
        return False
    return np.linalg.eigvalsh(rho).min() >= -tol


def stokes_to_rho(s1: float, s2: float, s3: float = 0.0) -> np.ndarray:
    return 0.5 * (I2 + s1 * SZ + s2 * SX + s3 * SY)


def reconstruct(counts: TomographyCounts) -> np.ndarray:
    """Linear-inversion estimate; Stokes vectors longer than 1 are scaled
    back onto the Bloch sphere."""
    s1 = (counts.n_H - counts.n_V) / (counts.n_H + counts.n_V)
    s2 = (counts.n_P - counts.n_M) / (counts.n_P + counts.n_M)
    s3 = 0.0
    if counts.n_R is not None:
        s3 = (counts.n_R - counts.n_L) / (counts.n_R + counts.n_L)
    s = np.array([s1, s2, s3])
    norm = np.linalg.norm(s)
    if norm > 1:
        s /= norm
    return stokes_to_rho(*s)


def ideal_counts(rho: np.ndarray, n_per_basis: int, *, circular: bool = False) -> TomographyCounts:
    """Expected (rounded) counts for ``rho`` with ``n_per_basis`` detections
    in each measured basis."""
    def expect(k):
        return int(round(n_per_basis * float(np.real(KETS[k].conj() @ rho @ KETS[k]))))
    extra = (expect("R"), expect("L")) if circular else (None, None)
    return TomographyCounts(expect("H"), expect("V"), expect("P"), expect("M"), *extra)


def sample_counts(rho: np.ndarray, n_per_basis: int, rng: np.random.Generator, *,
                  circular: bool = False) -> TomographyCounts:
    def draw(a, b):
        p = float(np.clip(np.real(KETS[a].conj() @ rho @ KETS[a]), 0, 1))
        k = int(rng.binomial(n_per_basis, p))
        return k, n_per_basis - k
    h, v = draw("H", "V")
    p, m = draw("P", "M")
    r, l = draw("R", "L") if circular else (None, None)
    return TomographyCounts(h, v, p, m, r, l)


def _psd_sqrt(rho: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(rho)
    return (U * np.sqrt(np.clip(w, 0, None))) @ U.conj().T


def _det_psd(rho: np.ndarray) -> float:
    # eigenvalues at round-off level are exact zeros (pure states)
    w = np.linalg.eigvalsh(rho)
    w[w < _ROUNDOFF] = 0.0
    return float(w[0] * w[1])


def fidelity(rho_mea: np.ndarray, rho_ide: np.ndarray) -> float:
    """Uhlmann fidelity ``(tr sqrt(sqrt(a) b sqrt(a)))**2``."""
    for name, r in (("rho_mea", rho_mea), ("rho_ide", rho_ide)):
        if not is_density_matrix(r):
            raise ValueError(f"{name} is not a valid density matrix")
    a = np.asarray(rho_mea, dtype=complex)
    b = np.asarray(rho_ide, dtype=complex)
    sa = _psd_sqrt(a)
    inner = sa @ b @ sa
    # a 2x2 PSD matrix A has (tr sqrt A)^2 = tr A + 2 sqrt(det A), and
    # det(inner) = det(a) det(b); this avoids square roots of round-off
    # eigenvalues when either state is pure
    det = _det_psd(a) * _det_psd(b)
    f = float(np.real(np.trace(inner))) + 2.0 * np.sqrt(det)
    return min(1.0, max(0.0, f))


def pure_state_fidelity(rho: np.ndarray, ket: np.ndarray) -> float:
    return float(np.real(ket.conj() @ rho @ ket))


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.linalg.eigvalsh(a - b)).sum())


def depolarize(rho: np.ndarray, p: float) -> np.ndarray:
    return (1 - p) * rho + p * I2 / 2


COUNTS_COLUMNS = ("state", "n_H", "n_V", "n_P", "n_M")


def read_counts_csv(path: str | Path) -> dict[str, TomographyCounts]:
    """Rows of ``state,n_H,n_V,n_P,n_M[,n_R,n_L]``; ``state`` is the
    prepared polarization (H, V, P or M)."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            circ = row.get("n_R") not in (None, "")
            out[row["state"].strip()] = TomographyCounts(
                int(row["n_H"]), int(row["n_V"]), int(row["n_P"]), int(row["n_M"]),
                int(row["n_R"]) if circ else None, int(row["n_L"]) if circ else None)
    return out


def tomography_table(counts: dict[str, TomographyCounts]) -> list[dict]:
    """Reconstructed matrices (real/imag parts) and fidelity per state."""
    rows = []
    for state, c in counts.items():
        rho = reconstruct(c)
        row = {"state": state}
        for i in range(2):
            for j in range(2):
                row[f"re{i}{j}"] = float(np.real(rho[i, j]))
                row[f"im{i}{j}"] = float(np.imag(rho[i, j]))
        row["fidelity"] = fidelity(rho, IDEAL[state]) if state in IDEAL else float("nan")
        rows.append(row)
    return rows
