import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from qillum.chain import ChainParams, detect
from qillum.constants import DomainError, Hypothesis, SecondMoments, moments_classical, moments_coherent, moments_from_tmsv
from qillum.dsp import RecordBatch, fsum_mean, sample_records
from qillum.receivers import (
    DecisionStats,
    DegenerateInputError,
    Receiver,
    SnrReport,
    decision_stats,
    error_probability,
    heterodyne_snr,
    heterodyne_snr_analytic,
    homodyne_snr,
    homodyne_snr_analytic,
    pc_decision_records,
    pc_snr_analytic,
    pc_snr_records,
    pc_vacuum_correction,
    snr_from_stats,
    snr_zscore,
)


def sampled_pair(m, chain, eta, M, seed):
    return tuple(
        sample_records(detect(m, chain, eta, h), M, seed + k, hypothesis=h)
        for k, h in enumerate((Hypothesis.ABSENT, Hypothesis.PRESENT))
    )


def test_pc_decision_examples():
    assert pc_decision_records(np.array([1 + 0j]), np.array([1 + 0j]))[0] == pytest.approx(2.0)
    assert pc_decision_records(np.array([1j]), np.array([1 + 0j]))[0] == pytest.approx(0.0)


def test_pc_decision_matches_closed_form():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((2, 100)) + 1j * rng.standard_normal((2, 100))
    np.testing.assert_allclose(pc_decision_records(a[0], a[1]), 2 * np.real(a[0] * a[1]), atol=1e-12)


def test_pc_decision_rejects_mismatch():
    a = RecordBatch(np.ones(3), np.ones(3), hypothesis=Hypothesis.ABSENT)
    b = RecordBatch(np.ones(3), np.ones(3), hypothesis=Hypothesis.PRESENT)
    with pytest.raises(ValueError):
        pc_decision_records(a, b)
    with pytest.raises(ValueError):
        pc_decision_records(a, RecordBatch(np.ones(4), np.ones(4), hypothesis=Hypothesis.ABSENT))


def test_pc_decision_mean_oracle(chain):
    m = moments_from_tmsv(0.5)
    batch = sample_records(detect(m, chain, 1.0, Hypothesis.PRESENT), 100_000, seed=1)
    d = pc_decision_records(batch)
    expect = 2 * math.sqrt(chain.g_s * chain.g_i_total) * m.c.real
    se = np.std(d) / math.sqrt(d.size)
    assert abs(fsum_mean(d) - expect) < 5 * se


def test_snr_from_stats_examples():
    assert snr_from_stats(DecisionStats(0.0, 2.0, 1.0, 1.0)).snr == pytest.approx(0.5)
    assert snr_from_stats(DecisionStats(1.0, 1.0, 1.0, 2.0)).snr == 0.0
    with pytest.raises(DegenerateInputError):
        snr_from_stats(DecisionStats(0.0, 1.0, 0.0, 0.0))


def test_snr_report_db():
    r = SnrReport(0.01, 0.001, Receiver.HOMODYNE)
    assert r.snr_db == pytest.approx(-20.0)
    assert r.stderr_db == pytest.approx(10 / math.log(10) * 0.1)


def test_snr_stderr_matches_replication():
    rng = np.random.default_rng(3)
    snrs, ses = [], []
    for _ in range(300):
        s = decision_stats(rng.standard_normal(2000), 0.2 + 1.3 * rng.standard_normal(2000))
        r = snr_from_stats(s)
        snrs.append(r.snr)
        ses.append(r.stderr)
    assert np.std(snrs) == pytest.approx(np.mean(ses), rel=0.15)


def test_uncorrelated_source_has_zero_pc_snr(chain):
    assert pc_snr_analytic(moments_classical(0.0), chain, 1.0).snr == 0.0
    assert pc_snr_analytic(SecondMoments(1.0, 1.0), chain, 1.0, calibrated=True).snr == 0.0


def test_calibrated_qi_beats_homodyne_by_about_1db(chain):
    qi = pc_snr_analytic(moments_from_tmsv(0.5), chain, 1.0, calibrated=True).snr_db
    hom = homodyne_snr_analytic(moments_coherent(0.5), chain, 1.0).snr_db
    assert qi - hom == pytest.approx(1.0, abs=0.5)


def test_raw_qi_below_homodyne(chain):
    raw = pc_snr_analytic(moments_from_tmsv(0.5), chain, 1.0).snr_db
    hom = homodyne_snr_analytic(moments_coherent(0.5), chain, 1.0).snr_db
    assert raw < hom


def test_analytic_pc_independent_of_source_phase(chain):
    from qillum.constants import apply_phase_rotation

    m = moments_from_tmsv(0.5)
    a = pc_snr_analytic(m, chain, 0.3, calibrated=True).snr
    b = pc_snr_analytic(apply_phase_rotation(m, 2.0), chain, 0.3, calibrated=True).snr
    assert a == pytest.approx(b, rel=1e-12)


@pytest.mark.parametrize("n", [0.05, 0.5, 3.0])
def test_calibrated_tmsv_beats_classical(chain, n):
    qi = pc_snr_analytic(moments_from_tmsv(n), chain, 1.0, calibrated=True).snr
    ci = pc_snr_analytic(moments_classical(n), chain, 1.0, calibrated=True).snr
    assert qi > ci


def test_heterodyne_is_half_homodyne_for_equal_variances():
    h0 = SecondMoments(3.0, 0.0)
    h1 = SecondMoments(3.0, 0.0, mean_s=2.0)
    assert heterodyne_snr(h0, h1).snr == pytest.approx(homodyne_snr(h0, h1).snr / 2, rel=1e-12)


def test_zero_signal_coherent_receivers(chain):
    for f in (homodyne_snr_analytic, heterodyne_snr_analytic):
        assert f(moments_coherent(0.0), chain, 1.0).snr == 0.0


def test_noise_dominated_ratio(chain):
    m = moments_coherent(0.5)
    ratio = homodyne_snr_analytic(m, chain, 1.0).snr / heterodyne_snr_analytic(m, chain, 1.0).snr
    assert ratio == pytest.approx(2.0, rel=1e-6)


@given(st.floats(0.0, 20.0), st.floats(0.0, 1.0))
@settings(max_examples=50)
def test_homodyne_not_below_heterodyne(n, eta):
    chain = ChainParams.reference()
    m = moments_coherent(n)
    assert homodyne_snr_analytic(m, chain, eta).snr >= heterodyne_snr_analytic(m, chain, eta).snr


def test_coherent_mc_matches_closed_form(chain):
    m = moments_coherent(0.5)
    b0, b1 = sampled_pair(m, chain, 1.0, 192_000, seed=10)
    for mc, exact in (
        (homodyne_snr(b0, b1), homodyne_snr_analytic(m, chain, 1.0)),
        (heterodyne_snr(b0, b1), heterodyne_snr_analytic(m, chain, 1.0)),
    ):
        assert abs(snr_zscore(mc, exact.snr)) < 3


@pytest.mark.parametrize("calibrated", [False, True])
def test_pc_mc_matches_closed_form(chain, calibrated):
    m = moments_from_tmsv(0.5)
    b0, b1 = sampled_pair(m, chain, 1.0, 380_000, seed=20)
    mc = pc_snr_records(b0, b1, calibrated=calibrated, chain=chain)
    exact = pc_snr_analytic(m, chain, 1.0, calibrated=calibrated)
    assert abs(snr_zscore(mc, exact.snr)) < 3


def test_calibrated_records_need_chain(chain):
    b0, b1 = sampled_pair(moments_from_tmsv(0.5), chain, 1.0, 1000, seed=1)
    with pytest.raises(ValueError):
        pc_snr_records(b0, b1, calibrated=True)


def test_record_snr_scale_invariant(chain):
    b0, b1 = sampled_pair(moments_from_tmsv(0.5), chain, 1.0, 20_000, seed=5)
    c0, c1 = sampled_pair(moments_coherent(0.5), chain, 1.0, 20_000, seed=6)
    k = 1e-4
    assert pc_snr_records(b0.scaled(k), b1.scaled(k)).snr == pytest.approx(pc_snr_records(b0, b1).snr, rel=1e-9)
    assert homodyne_snr(c0.scaled(k), c1.scaled(k)).snr == pytest.approx(homodyne_snr(c0, c1).snr, rel=1e-9)
    assert heterodyne_snr(c0.scaled(k), c1.scaled(k)).snr == pytest.approx(heterodyne_snr(c0, c1).snr, rel=1e-9)


def test_vacuum_correction_on_noiseless_chain():
    """Operator-formula variance exceeds the record variance by exactly P + Q."""
    chain = ChainParams.identity()
    m = moments_from_tmsv(0.8)
    d1 = detect(m, chain, 1.0, Hypothesis.PRESENT)
    P, Q, C = d1.record_power_s, d1.record_power_i, d1.c.real
    op_var = pc_snr_analytic(m, chain, 1.0).stats.var1
    record_var = 2 * (P * Q + C**2)
    assert op_var - record_var == pytest.approx(pc_vacuum_correction(P, Q), rel=1e-12)
    d = pc_decision_records(sample_records(d1, 400_000, seed=3))
    var = float(np.var(d))
    se = math.sqrt((np.mean((d - d.mean()) ** 4) - var**2) / d.size)
    assert abs(var - record_var) < 5 * se


def test_vacuum_correction_negligible_with_reference_chain(chain):
    m = moments_from_tmsv(0.5)
    d1 = detect(m, chain, 1.0, Hypothesis.PRESENT)
    P, Q = d1.record_power_s, d1.record_power_i
    var = pc_snr_analytic(m, chain, 1.0).stats.var1
    assert pc_vacuum_correction(P, Q) / var < 1e-6


def test_snr_zscore():
    r = SnrReport(4.0, 0.4, Receiver.PC_RAW)
    assert snr_zscore(r, 4.0) == 0.0
    assert snr_zscore(r, 3.61) == pytest.approx((2.0 - 1.9) * 4.0 / 0.4)
    with pytest.raises(DomainError):
        snr_zscore(SnrReport(0.0, 0.0, Receiver.PC_RAW), 1.0)


def _tail_oracle(x):
    # erfc(y) / 2 = exp(-y^2) / sqrt(pi) * int_0^inf exp(-2 y u - u^2) du
    y = math.sqrt(x)
    val, _ = integrate.quad(lambda u: math.exp(-2 * y * u - u * u), 0.0, math.inf, epsabs=0, epsrel=1e-13)
    return math.exp(-x) * val / math.sqrt(math.pi)


@pytest.mark.parametrize("x", [0.0, 0.3, 1.0, 2.5, 6.0, 36.0])
def test_error_probability_against_integration(x):
    assert error_probability(x, 1) == pytest.approx(_tail_oracle(x), rel=1e-11, abs=1e-300)


def test_error_probability_examples():
    assert error_probability(0.0, 1) == 0.5
    assert error_probability(1.0, 1) == pytest.approx(0.0786496, abs=1e-6)
    with pytest.raises(DomainError):
        error_probability(-1.0, 1)
    with pytest.raises(DomainError):
        error_probability(1.0, 0)


@given(st.floats(1e-6, 0.5), st.integers(1, 1000))
def test_error_probability_monotone(snr, M):
    a, b = error_probability(snr, M), error_probability(snr, M + 1)
    assert 0.0 < b < a <= 0.5
