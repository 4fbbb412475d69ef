import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

from uwqkd.protocol import make_rng
from uwqkd.tomography import (IDEAL, KETS, TomographyCounts, depolarize, fidelity,
                              ideal_counts, is_density_matrix, pure_state_fidelity,
                              read_counts_csv, reconstruct, sample_counts, stokes_to_rho,
                              tomography_table, trace_distance)


def uhlmann_oracle(a, b):
    sa = scipy.linalg.sqrtm(a)
    return float(np.real(np.trace(scipy.linalg.sqrtm(sa @ b @ sa))) ** 2)


def random_rho(rng, pure=False):
    v = rng.normal(size=3)
    v /= np.linalg.norm(v)
    if not pure:
        v *= rng.random()
    return stokes_to_rho(*v)


@pytest.mark.parametrize("counts,expected", [
    ((1000, 0, 500, 500), np.diag([1.0, 0.0])),
    ((500, 500, 500, 500), np.eye(2) / 2),
    ((985, 15, 500, 500), np.diag([0.985, 0.015])),
    ((500, 500, 1000, 0), IDEAL["P"]),
    ((500, 500, 0, 1000), IDEAL["M"]),
])
def test_reconstruct_examples(counts, expected):
    rho = reconstruct(TomographyCounts(*counts))
    assert np.allclose(rho, expected, atol=1e-12)
    assert is_density_matrix(rho)


@pytest.mark.parametrize("state", "HVPM")
def test_ideal_counts_roundtrip(state):
    assert np.allclose(reconstruct(ideal_counts(IDEAL[state], 1000)), IDEAL[state], atol=1e-12)


def test_circular_counts_and_rescale():
    rho_r = np.outer(KETS["R"], KETS["R"].conj())
    assert np.allclose(reconstruct(ideal_counts(rho_r, 1000, circular=True)), rho_r, atol=1e-12)
    # s = (1, 1, 0) has norm sqrt2 and is scaled onto the sphere
    rho = reconstruct(TomographyCounts(10, 0, 10, 0))
    assert is_density_matrix(rho)
    assert np.linalg.eigvalsh(rho).min() == pytest.approx(0, abs=1e-12)


@pytest.mark.parametrize("bad", [(0, 0, 1, 1), (1, 1, 0, 0), (-1, 2, 1, 1),
                                 (1, 1, 1, 1, 3, None), (1, 1, 1, 1, 0, 0)])
def test_counts_validation(bad):
    with pytest.raises(ValueError):
        TomographyCounts(*bad)


def test_fidelity_examples():
    assert fidelity(IDEAL["H"], IDEAL["H"]) == pytest.approx(1, abs=1e-12)
    assert fidelity(IDEAL["H"], IDEAL["V"]) == pytest.approx(0, abs=1e-12)
    assert fidelity(IDEAL["P"], IDEAL["H"]) == pytest.approx(0.5, abs=1e-12)
    for p in (0.0, 0.046, 0.1, 0.5, 1.0):
        f = fidelity(depolarize(IDEAL["H"], p), IDEAL["H"])
        assert abs(f - (1 - p / 2)) < 1e-10
    assert round(fidelity(depolarize(IDEAL["H"], 0.046), IDEAL["H"]), 3) == 0.977


def test_fidelity_rejects_invalid():
    with pytest.raises(ValueError):
        fidelity(np.diag([1.2, -0.2]), IDEAL["H"])
    with pytest.raises(ValueError):
        fidelity(IDEAL["H"], np.array([[0.5, 1], [0, 0.5]]))
    with pytest.raises(ValueError):
        fidelity(np.eye(2), IDEAL["H"])


@given(st.integers(0, 2 ** 32))
def test_fidelity_matches_sqrtm_oracle(seed):
    rng = make_rng(seed)
    a, b = random_rho(rng), random_rho(rng)
    assert fidelity(a, b) == pytest.approx(uhlmann_oracle(a, b), abs=1e-8)
    assert fidelity(a, a) == pytest.approx(1, abs=1e-10)


@given(st.integers(0, 2 ** 32))
def test_pure_state_shortcut(seed):
    rng = make_rng(seed)
    rho = random_rho(rng)
    psi = random_rho(rng, pure=True)
    w, U = np.linalg.eigh(psi)
    ket = U[:, np.argmax(w)]
    assert abs(fidelity(rho, psi) - pure_state_fidelity(rho, ket)) < 1e-10


@given(st.integers(0, 2 ** 32))
def test_unitary_invariance_and_symmetry(seed):
    rng = make_rng(seed)
    a, b = random_rho(rng), random_rho(rng)
    U = scipy.linalg.expm(1j * stokes_to_rho(*rng.normal(size=3)))
    rot = fidelity(U @ a @ U.conj().T, U @ b @ U.conj().T)
    assert rot == pytest.approx(fidelity(a, b), abs=1e-9)
    assert fidelity(b, a) == pytest.approx(fidelity(a, b), abs=1e-9)


def test_sampled_counts_converge():
    rng = make_rng(12)
    rho = depolarize(IDEAL["P"], 0.2)
    for n in (100, 10_000, 1_000_000):
        d = trace_distance(reconstruct(sample_counts(rho, n, rng)), rho)
        assert d <= 5 / np.sqrt(n)


def test_csv_table(tmp_path):
    p = tmp_path / "counts.csv"
    p.write_text("state,n_H,n_V,n_P,n_M\nH,985,15,500,500\nP,500,500,977,23\nX,500,500,500,500\n")
    rows = tomography_table(read_counts_csv(p))
    assert [r["state"] for r in rows] == ["H", "P", "X"]
    assert rows[0]["re00"] == pytest.approx(0.985) and rows[0]["im01"] == 0
    assert rows[0]["fidelity"] == pytest.approx(0.985)
    assert rows[1]["fidelity"] == pytest.approx(0.977)
    assert np.isnan(rows[2]["fidelity"])
