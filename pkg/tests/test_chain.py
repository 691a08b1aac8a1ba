import math
import warnings

import pytest
from hypothesis import given
from hypothesis import strategies as st

from qillum.chain import (
    ChainParams,
    SubQuantumLimitWarning,
    TargetScenario,
    detect,
    detect_idler,
    detect_signal,
    noise_totals,
    passive_snr,
    passive_snr_db,
)
from qillum.constants import ConfigError, DomainError, Hypothesis, db, moments_from_tmsv

etas = st.floats(min_value=0.0, max_value=1.0)


def test_reference_constants(chain):
    assert db(chain.g_s_amp) == pytest.approx(77.16)
    assert db(chain.g_s_det) == pytest.approx(16.82)
    assert db(chain.g_i_total) == pytest.approx(94.25)
    assert (chain.g_s_amp - 1) * chain.n_amp_s == pytest.approx(5e8)
    assert chain.n_amp_s == pytest.approx(9.61, abs=0.01)
    assert chain.n_add_s == pytest.approx(9.61, abs=0.02)
    assert not chain.sub_quantum_limited


def test_identity_chain_is_transparent():
    p = ChainParams.identity()
    m = moments_from_tmsv(0.7, 0.9)
    d = detect(m, p, 1.0, Hypothesis.PRESENT)
    assert d.n_s == pytest.approx(m.n_s)
    assert d.n_i == pytest.approx(m.n_i)
    assert d.c == pytest.approx(m.c)
    assert d.vac_i == 1.0


def test_absent_target_discards_signal(chain):
    d = detect_signal(moments_from_tmsv(1.0), chain, TargetScenario(0.5, Hypothesis.ABSENT))
    assert d.c == 0 and d.mean_s == 0
    assert d.n_s == pytest.approx(noise_totals(chain, 0.5).n0)


def test_present_target_scales_correlation(chain):
    m = moments_from_tmsv(1.0)
    d = detect_signal(m, chain, TargetScenario(0.25))
    assert d.c == pytest.approx(math.sqrt(0.25 * chain.g_s) * m.c)
    assert d.n_s == pytest.approx(0.25 * chain.g_s * 1.0 + noise_totals(chain, 0.25).n1)


def test_zero_eta_matches_absence(chain):
    totals = noise_totals(chain, 0.0)
    assert totals.n1 == pytest.approx(totals.n0)
    d = detect_signal(moments_from_tmsv(1.0), chain, TargetScenario(0.0))
    assert d.c == 0


def test_detect_idler_record_power(chain):
    m = moments_from_tmsv(0.5)
    d = detect_idler(m, chain)
    assert d.record_power_i == pytest.approx(chain.g_i_total * (0.5 + chain.n_add_i + 1.0))
    assert d.c == pytest.approx(math.sqrt(chain.g_i_total) * m.c)


def test_passive_snr_reference(chain):
    assert passive_snr_db(chain, 1.0) == pytest.approx(31.4, abs=1.5)
    assert passive_snr(chain, 0.0) == pytest.approx(0.0, abs=1e-12)


def test_passive_snr_sign_for_transparent_amplifier():
    p = ChainParams.reference().with_(n_amp_s=0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SubQuantumLimitWarning)
        assert passive_snr(p, 0.5) < 0


@given(etas, etas)
def test_n1_monotone_in_eta(a, b):
    p = ChainParams.reference()
    lo, hi = sorted((a, b))
    assert noise_totals(p, lo).n1 <= noise_totals(p, hi).n1 * (1 + 1e-12)


@pytest.mark.parametrize("eta", [-0.1, 1.1, math.nan])
def test_eta_domain(chain, eta):
    with pytest.raises(DomainError):
        noise_totals(chain, eta)


def test_sub_quantum_warning():
    p = ChainParams.reference().with_(n_add_i=0.1)
    assert p.sub_quantum_limited
    with pytest.warns(SubQuantumLimitWarning):
        detect(moments_from_tmsv(1.0), p, 1.0, Hypothesis.PRESENT)


def test_invalid_gain_rejected():
    with pytest.raises(ConfigError):
        ChainParams.reference().with_(g_s_det=0.5)


def test_from_mapping_units():
    p = ChainParams.from_mapping({"g_i_total_db": 90.0, "n_env": 100})
    assert p.g_i_total == pytest.approx(1e9)
    assert p.n_env == 100
    q = ChainParams.from_mapping({"g_s_amp_lin": 1e7})
    assert (q.g_s_amp - 1) * q.n_amp_s == pytest.approx(5e8)
    with pytest.raises(ConfigError, match="unknown chain key"):
        ChainParams.from_mapping({"bogus": 1})
    with pytest.raises(ConfigError, match="more than once"):
        ChainParams.from_mapping({"g_s_det": 10, "g_s_det_db": 10})


def test_to_dict_round_trip(chain):
    back = ChainParams.from_mapping(chain.to_dict())
    for name in ("g_s_amp", "g_s_det", "g_i_total", "n_amp_s", "n_det_s", "n_add_i", "n_env"):
        assert getattr(back, name) == pytest.approx(getattr(chain, name), rel=1e-12)
