import logging
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uwqkd.decoy import DecoyEstimate, KeyRateParams
from uwqkd.postproc.amplify import (PaAccumulator, PaBlockPolicy, derive_seed,
                                    output_length_from_rates, pa_output_length)
from uwqkd.postproc.toeplitz import (ToeplitzSeed, privacy_amplify, toeplitz_fft,
                                     toeplitz_naive, toeplitz_tag)
from uwqkd.protocol import make_rng
from uwqkd.sifting import ClassTally, TallySet


@dataclass(frozen=True)
class DeltaSeed(ToeplitzSeed):
    """Diagonal bits with a single one on the main diagonal: T = identity."""

    def bits(self, n_in, m_out):
        t = np.zeros(n_in + m_out - 1, np.uint8)
        t[n_in - 1] = 1
        return t


def test_identity_seed_both_paths():
    x = make_rng(1).integers(0, 2, 64, dtype=np.uint8)
    ts = DeltaSeed(0)
    assert np.array_equal(toeplitz_naive(x, ts, 64), x)
    assert np.array_equal(toeplitz_fft(x, ts, 64), x)
    assert np.array_equal(toeplitz_fft(x, ts, 16), toeplitz_naive(x, ts, 16))
    assert np.array_equal(ts.matrix(64, 64), np.eye(64, dtype=np.uint8))


def test_matrix_is_toeplitz():
    T = ToeplitzSeed(9).matrix(40, 12)
    assert T.shape == (12, 40)
    assert np.array_equal(T[1:, 1:], T[:-1, :-1])


def test_fft_equals_naive_on_random_cases():
    rng = make_rng(31337)
    sizes = np.concatenate([[1, 2, 3, 5, 12, 1000, 4096, 4097, 2 ** 16 - 1, 2 ** 16],
                            rng.integers(1, 2 ** 16 + 1, 90)])
    for n in sizes:
        n = int(n)
        m = int(rng.integers(1, min(n, 512) + 1))
        x = rng.integers(0, 2, n, dtype=np.uint8)
        ts = ToeplitzSeed(int(rng.integers(0, 2 ** 62)))
        assert np.array_equal(toeplitz_fft(x, ts, m), toeplitz_naive(x, ts, m)), (n, m)


@settings(max_examples=40)
@given(st.integers(1, 300), st.integers(0, 2 ** 62), st.data())
def test_fft_equals_naive_property(n, seed, data):
    m = data.draw(st.integers(1, n))
    x = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)), np.uint8)
    ts = ToeplitzSeed(seed)
    assert np.array_equal(toeplitz_fft(x, ts, m), toeplitz_naive(x, ts, m))


def test_tag_basics():
    ts = ToeplitzSeed(4)
    assert toeplitz_tag(np.zeros(1024, np.uint8), ts) == 0
    x = make_rng(2).integers(0, 2, 1024, dtype=np.uint8)
    assert toeplitz_tag(x, ToeplitzSeed(4)) == toeplitz_tag(x.copy(), ToeplitzSeed(4))
    assert 0 <= toeplitz_tag(x, ts) < 256
    # tag equals the packed naive product
    bits = toeplitz_naive(x, ts, 8)
    assert toeplitz_tag(x, ts) == int("".join(map(str, bits)), 2)
    with pytest.raises(ValueError):
        toeplitz_tag(np.zeros(0, np.uint8), ts)


def test_tag_collisions_uniform():
    n_pairs, n = 100_000, 96
    rng = make_rng(99)
    seeds = rng.integers(0, 2 ** 62, n_pairs)
    flips = rng.integers(0, n, n_pairs)
    x = rng.integers(0, 2, n, dtype=np.uint8)
    hits = 0
    for s, j in zip(seeds, flips):
        ts = ToeplitzSeed(int(s))
        y = x.copy()
        y[j] ^= 1
        hits += toeplitz_tag(x, ts) == toeplitz_tag(y, ts)
    p = 2 ** -8
    assert hits / n_pairs <= p + 5 * np.sqrt(p * (1 - p) / n_pairs)


def test_pa_zero_and_edge_cases(caplog):
    ts = ToeplitzSeed(1)
    assert not privacy_amplify(np.zeros(5000, np.uint8), 300, ts).any()
    with caplog.at_level(logging.WARNING):
        assert len(privacy_amplify(np.ones(10, np.uint8), 0, ts)) == 0
    assert "unusable" in caplog.text
    with pytest.raises(ValueError):
        privacy_amplify(np.ones(10, np.uint8), 11, ts)


def test_pa_monobit():
    rng = make_rng(3)
    for k in range(5):
        x = rng.integers(0, 2, 200_000, dtype=np.uint8)
        out = privacy_amplify(x, 50_000, ToeplitzSeed(int(rng.integers(0, 2 ** 62))))
        m = len(out)
        assert abs(out.mean() - 0.5) < 5 * 0.5 / np.sqrt(m)


def test_full_block_pa_fast_enough():
    import time
    x = make_rng(4).integers(0, 2, 1_769_472, dtype=np.uint8)
    t0 = time.perf_counter()
    out = privacy_amplify(x, 40_000, ToeplitzSeed(8))
    assert time.perf_counter() - t0 <= 5.0 and len(out) == 40_000


def test_derive_seed_distinct_and_stable():
    a = derive_seed(5, 0, "pa")
    assert a == derive_seed(5, 0, "pa")
    assert len({a, derive_seed(5, 1, "pa"), derive_seed(5, 0, "tag"), derive_seed(6, 0, "pa")}) == 4
    assert len(a.fingerprint()) == 16
    with pytest.raises(KeyError):
        derive_seed(5, 0, "other")


def reported_tallies():
    # rates in bps over 1 s: per-pulse gains only enter as the Q1/Qu ratio
    return TallySet(ClassTally(10_000_000, 14564, 0, 0), ClassTally(5_000_000, 100, 20, 1),
                    ClassTally(5_000_000, 10, 2, 1), elapsed_s=1.0)


def test_pa_output_length_reported_tallies():
    kp = KeyRateParams()
    assert output_length_from_rates(7205.9, 0.0225, 14564.7, kp, 1_769_472) == 149_697
    # the same value through the tally/estimate path, with the per-pulse
    # gains chosen in the reported ratio
    t = reported_tallies()
    qu = t.signal.gain
    est = DecoyEstimate(Y1=1.0, Q1=qu * 7205.9 / 14564.7, e1=0.0225, consistent=True)
    assert pa_output_length(t, est, kp, 1_769_472) in (149_696, 149_697)


def test_pa_output_length_degenerate():
    t = reported_tallies()
    kp = KeyRateParams()
    assert pa_output_length(t, DecoyEstimate(0, 0, 0.5, False), kp, 1000) == 0
    assert pa_output_length(t, DecoyEstimate(0.1, 0.0, 0.01, True), kp, 1000) == 0
    assert output_length_from_rates(1, 0.01, 0, kp, 100) == 0


def test_pa_fraction_at_300m():
    from uwqkd.decoy import predict_performance, reference_point
    op = reference_point()
    p = predict_performance(op.ch, op.src, op.kp)
    m = output_length_from_rates(p.Q1_rate, p.estimate.e1, p.Qu_rate, op.kp, 1_769_472)
    assert (m + 8) / 1_769_472 == pytest.approx(p.R_skr / p.Qu_rate, rel=1e-4)
    assert (m + 8) / 1_769_472 == pytest.approx(27.4 / 1200.1, rel=0.1)


def test_accumulator_fires_on_exact_count():
    acc = PaAccumulator(PaBlockPolicy(groups_per_pa=3, group_bits=4))
    assert acc.add(0, np.zeros(4)) is None
    assert acc.add(1, np.ones(4)) is None
    bid, ids, bits = acc.add(5, np.zeros(4))
    assert (bid, ids, len(bits)) == (0, [0, 1, 5], 12)
    assert acc.flush() is None
    acc.add(6, np.ones(4))
    bid, ids, bits = acc.flush()
    assert (bid, ids) == (1, [6])
    no_flush = PaAccumulator(PaBlockPolicy(groups_per_pa=3, flush_partial=False))
    no_flush.add(0, np.zeros(4))
    assert no_flush.flush() is None and no_flush.groups == []
    assert PaBlockPolicy().bits_per_pa == 1_769_472
