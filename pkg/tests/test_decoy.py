import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from uwqkd.channel import JERLOV_I, JERLOV_III, ChannelParams, WaterType
from uwqkd.decoy import (ECMode, KeyRateParams, SourceParams, UnboundedAttenuation,
                         estimate_single_photon, gain, h2, keyrate_curve,
                         max_tolerable_attenuation, predict_from_eta, predict_performance,
                         qber, secure_key_rate, reference_point)

# frozen from /root/notes-style mpmath oracle (50 digits)
H2_0225 = 0.15525613787433581
R_REPORTED = 1232.2397960913236
Y1_IDEAL = 0.98310675506231793
KAPPA = 0.78887469153217824
Y0_300 = 5.2923487656717423e-6
QV_300, EV_300 = 5.2178526642804198e-5, 0.064192442111716355
Y1_300, E1_300 = 4.4835713821336450e-4, 0.023542821180014704
EU_300, Q1_300 = 0.021749020914923756, 508.56504261213307
ANCHOR_300 = 426.73942364186357
R_LDPC_300, R_IDEAL_300 = 26.706090308530236, 216.31930239803208


def test_h2_examples():
    assert h2(0.5) == 1.0 and h2(0.0) == 0.0 and h2(1.0) == 0.0
    assert h2(0.0225) == pytest.approx(H2_0225, rel=1e-14)
    assert round(h2(0.0225), 4) == 0.1553
    with pytest.raises(ValueError):
        h2(1.2)
    with pytest.raises(ValueError):
        h2(np.array([0.1, -0.1]))


def test_h2_table_agreement():
    x = np.linspace(0, 1, 1_000_001)
    got = h2(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        ref = -x * np.log(x) / math.log(2) - (1 - x) * np.log1p(-x) / math.log(2)
    ref[0] = ref[-1] = 0.0
    assert np.max(np.abs(got - ref)) < 1e-12


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_h2_symmetric_and_concave(a, b, t):
    assert h2(a) == pytest.approx(h2(1 - a), abs=1e-12)
    mid = t * a + (1 - t) * b
    assert h2(mid) >= t * h2(a) + (1 - t) * h2(b) - 1e-12


def test_ideal_single_photon_bound():
    qu, qv = 1 - math.exp(-0.8), 1 - math.exp(-0.1)
    est = estimate_single_photon(qu, qv, 0.0, 0.0, 0.0)
    assert est.Y1 == pytest.approx(Y1_IDEAL, rel=1e-12)
    assert round(est.Y1, 4) == 0.9831 and est.Y1 <= 1
    assert est.e1 == 0 and est.Q1 == pytest.approx(est.Y1 * 0.8 * math.exp(-0.8))


def test_degenerate_inputs():
    est = estimate_single_photon(0, 0, 0, 0, 0)
    assert est.Q1 == 0 and not est.consistent and est.e1 == 0.5
    with pytest.raises(ValueError):
        estimate_single_photon(1.5, 0, 0, 0, 0)
    with pytest.raises(ValueError):
        SourceParams(u=0.1, v=0.2)


def true_yields(eta, y0):
    return lambda n: y0 + 1 - (1 - eta) ** n


def model_inputs(eta, y0, e_det, u, v, nmax=60):
    yn = true_yields(eta, y0)

    def Q(mu):
        return sum(math.exp(-mu) * mu ** n / math.factorial(n) * yn(n) for n in range(nmax))

    def EQ(mu):
        return sum(math.exp(-mu) * mu ** n / math.factorial(n)
                   * (0.5 * y0 + e_det * (yn(n) - y0)) for n in range(nmax))
    return Q(u), Q(v), EQ(u) / Q(u), EQ(v) / Q(v), yn(1), (0.5 * y0 + e_det * eta) / yn(1)


ETAS = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1]
Y0S = [0.0, 1e-6, 1e-5, 3e-5, 1e-4]


@pytest.mark.parametrize("eta", ETAS)
@pytest.mark.parametrize("y0", Y0S)
def test_decoy_bounds_sound(eta, y0):
    src = SourceParams()
    qu, qv, eu, ev, y1, e1 = model_inputs(eta, y0, 0.015, src.u, src.v)
    est = estimate_single_photon(qu, qv, y0, eu, ev, src)
    assert est.Y1 <= y1 * (1 + 1e-12)
    assert est.e1 >= e1 * (1 - 1e-12)


@pytest.mark.parametrize("eta", [1e-3, 1e-2, 1e-1])
def test_bound_gap_shrinks_with_v(eta):
    vs = (0.2, 0.1, 0.05, 0.02, 0.01, 0.001)
    gaps = []
    for v in vs:
        src = SourceParams(v=v)
        qu, qv, eu, ev, y1, _ = model_inputs(eta, 1e-5, 0.015, src.u, v)
        gaps.append((y1 - estimate_single_photon(qu, qv, 1e-5, eu, ev, src).Y1) / y1)
    assert all(g >= 0 for g in gaps)
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    # the relative gap is first order in v
    assert all(g < v for g, v in zip(gaps, vs))


def test_reported_tallies_key_rate():
    r = secure_key_rate(7205.9, 0.0225, 14564.7, KeyRateParams(), ECMode.LDPC)
    assert r == pytest.approx(R_REPORTED, rel=1e-12)
    assert abs(r - 1232.3) <= 0.5
    assert secure_key_rate(0, 0.02, 100, KeyRateParams()) == 0


@given(st.floats(0, 1e4), st.floats(0, 0.5), st.floats(0, 0.5), st.floats(1, 1e4),
       st.floats(0, 0.9), st.floats(0, 0.1))
def test_key_rate_monotone(q1, e1, eu, qu, R, d):
    kp, kp2 = KeyRateParams(R), KeyRateParams(min(R + d, 0.99))
    for mode in ECMode:
        base = secure_key_rate(q1, e1, qu, kp, mode, eu)
        assert secure_key_rate(q1, min(e1 + d, 0.5), qu, kp, mode, eu) <= base + 1e-9
        assert secure_key_rate(q1 + d * 1e3, e1, qu, kp, mode, eu) >= base - 1e-9
        assert secure_key_rate(q1, e1, qu, kp2, mode, eu) <= base + 1e-9
        assert secure_key_rate(q1, e1, qu, kp, mode, min(eu + d, 0.5)) <= base + 1e-9


def test_300m_chain_against_oracle():
    op = reference_point()
    assert op.src.kappa == pytest.approx(KAPPA, rel=1e-10)
    assert op.ch.y0 == pytest.approx(Y0_300, rel=1e-10)
    p = predict_performance(op.ch, op.src, op.kp)
    assert p.Qu_rate == pytest.approx(1200.1, rel=1e-10)
    assert p.Eu == pytest.approx(EU_300, rel=1e-10)
    assert p.Qv == pytest.approx(QV_300, rel=1e-10) and p.Ev == pytest.approx(EV_300, rel=1e-10)
    assert p.estimate.Y1 == pytest.approx(Y1_300, rel=1e-9)
    assert p.estimate.e1 == pytest.approx(E1_300, rel=1e-9)
    assert p.Q1_rate == pytest.approx(Q1_300, rel=1e-9)
    assert p.single_photon_term == pytest.approx(ANCHOR_300, rel=1e-9)
    assert p.R_skr == pytest.approx(R_LDPC_300, rel=1e-8)
    assert p.R_skr_ideal == pytest.approx(R_IDEAL_300, rel=1e-9)


def test_300m_within_reference_bands():
    op = reference_point()
    p = predict_performance(op.ch, op.src, op.kp)
    assert abs(p.Eu - 0.0215) <= 0.0015
    assert 26.5 <= p.R_skr <= 27.7
    assert abs(p.R_skr_ideal - 219.2) <= 5
    assert abs(p.single_photon_term - 427.5) <= 0.05 * 427.5


def test_uncalibrated_pool():
    op = reference_point(calibrate=False)
    assert op.src.kappa == 1.0
    p = predict_performance(op.ch, op.src, op.kp)
    assert p.Qu_rate > 1200.1


def test_ideal_device():
    p = predict_from_eta(1.0, 0.0, 0.0)
    assert p.Eu == 0 and p.R_skr > 0


def test_total_db_equivalence():
    op = reference_point()
    L3 = 23.699449877460452 / (10 * math.log10(math.e) * 0.293)
    assert L3 == pytest.approx(18.62, abs=0.01)
    a = predict_performance(op.ch, op.src, op.kp).R_skr
    b = predict_performance(ChannelParams(JERLOV_III, L3, 9.59, op.ch.y0, 0.015),
                            op.src, op.kp).R_skr
    assert b == pytest.approx(a, rel=1e-3)


def test_gain_and_qber_closed_form():
    assert gain(0.01, 0.8, 1e-5) == pytest.approx(1e-5 + 1 - math.exp(-0.008))
    assert qber(0.0, 0.8, 1e-5, 0.015) == pytest.approx(0.5)


def test_keyrate_curve_properties():
    op = reference_point()
    pts = keyrate_curve(JERLOV_I, 0, 350, 10, op.src, op.kp, y0=op.ch.y0)
    assert len(pts) == 36
    r = [p.R_skr_bps for p in pts]
    assert all(a >= b for a, b in zip(r, r[1:]))
    assert all(p.R_skr_bps > 0 for p in pts if p.L_m <= 300)
    single = keyrate_curve(JERLOV_I, 300, 300, 1, op.src, op.kp, y0=op.ch.y0)
    assert len(single) == 1
    assert single[0].R_skr_bps == pytest.approx(predict_performance(op.ch, op.src, op.kp).R_skr)
    ideal = keyrate_curve(JERLOV_I, 300, 300, 1, op.src, op.kp, y0=op.ch.y0, mode=ECMode.IDEAL)
    assert ideal[0].R_skr_bps == pytest.approx(R_IDEAL_300, rel=1e-9)
    with pytest.raises(ValueError):
        keyrate_curve(JERLOV_I, 10, 0, 1)


def test_jerlov_iii_curve_cutoff():
    # the cutoff is where total loss reaches the tolerable attenuation
    op = reference_point()
    att = max_tolerable_attenuation(op.src, op.kp, op.ch.y0)
    pts = keyrate_curve(JERLOV_III, 0, 40, 0.05, op.src, op.kp, y0=op.ch.y0)
    last = max(p.L_m for p in pts if p.R_skr_bps > 0)
    expect = (att - 9.59) / (10 * math.log10(math.e) * 0.293)
    assert last == pytest.approx(expect, abs=0.06)


def test_max_tolerable_attenuation_monotone():
    op = reference_point()
    base = max_tolerable_attenuation(op.src, op.kp, op.ch.y0)
    # the operating point at 300 m still has positive rate
    assert base > 33.29
    assert max_tolerable_attenuation(op.src, op.kp, op.ch.y0 * 2) < base
    with pytest.raises(UnboundedAttenuation):
        max_tolerable_attenuation(op.src, op.kp, 0.0, 0.0)
    # and the rate at the returned value is positive, 0.01 dB later it is not
    p_in = predict_from_eta(10 ** (-base / 10), op.ch.y0, 0.015, op.src, op.kp)
    p_out = predict_from_eta(10 ** (-(base + 0.01) / 10), op.ch.y0, 0.015, op.src, op.kp)
    assert p_in.R_skr > 0 and p_out.R_skr == 0


def test_noise_free_is_unbounded_rather_than_larger():
    # with no background the key rate never reaches zero; the search says so
    op = reference_point()
    with pytest.raises(UnboundedAttenuation, match="80"):
        max_tolerable_attenuation(op.src, op.kp, y0=0.0, e_det=0.0)
    # a tiny background restores a finite answer above the reference one
    base = max_tolerable_attenuation(op.src, op.kp, op.ch.y0)
    assert max_tolerable_attenuation(op.src, op.kp, op.ch.y0 / 100, 0.0) > base


@given(st.floats(1e-4, 1e-1), st.floats(0, 1e-4))
def test_pool_conversion(eta, y0):
    src = SourceParams(kappa=0.9)
    p = predict_from_eta(eta, y0, 0.015, src)
    assert p.Qu_rate == pytest.approx(p.Qu * src.signal_pool())
    assert p.Qv_rate == pytest.approx(p.Qv * src.signal_pool() / 2)
