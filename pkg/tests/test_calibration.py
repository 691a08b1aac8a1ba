import math
import warnings

import numpy as np
import pytest

from qillum.calibration import (
    CalibrationPoint,
    FitError,
    NegativeOccupationWarning,
    calibrate_idler_number,
    fit_gain_noise,
    half_coth,
    noise_density_model,
    read_points_csv,
    write_points_csv,
)
from qillum.chain import detect_idler
from qillum.constants import PHYS, ConfigError, from_db, moments_from_tmsv
from qillum.dsp import estimate_moments, sample_records

G_S, N_S = 10**9.398, 9.61
G_I, N_I = from_db(94.25), 14.91
TEMPS = np.linspace(0.05, 1.0, 8)


def points(band, omega, gain, n_add, temps=TEMPS, noise=0.0, rng=None):
    y = noise_density_model(temps, gain, n_add, band, omega)
    if noise:
        y = y * (1 + noise * rng.standard_normal(len(temps)))
    return [CalibrationPoint(t, v, noise * v) for t, v in zip(temps, y)]


def test_low_temperature_limit(band):
    unit = PHYS.hbar * band.omega_i * band.bandwidth_B * band.impedance_R * G_I
    bracket = noise_density_model(1e-3, G_I, N_I, band, band.omega_i) / unit
    assert bracket == pytest.approx(0.5 + N_I, abs=1e-6)


def test_high_temperature_slope(band):
    h = 1e-3
    f = lambda t: noise_density_model(t, G_I, N_I, band, band.omega_i)
    slope = (f(5.0 + h) - f(5.0 - h)) / (2 * h)
    assert slope == pytest.approx(PHYS.k_B * band.bandwidth_B * band.impedance_R * G_I, rel=5e-3)


def test_rayleigh_jeans_linear(band):
    t = np.array([100.0, 200.0, 300.0])
    y = noise_density_model(t, G_I, N_I, band, band.omega_i)
    assert (y[2] - y[1]) == pytest.approx(y[1] - y[0], rel=1e-6)


def test_half_coth_vectorized(band):
    np.testing.assert_allclose(half_coth([1e-4, 1e4], band.omega_i)[0], 0.5)


def test_noiseless_round_trip(band):
    fit = fit_gain_noise(points(band, band.omega_s, G_S, N_S), band, band.omega_s)
    assert fit.gain_linear == pytest.approx(G_S, rel=1e-9)
    assert fit.n_add == pytest.approx(N_S, rel=1e-9)
    assert fit.dof == 6
    assert fit.residual_norm < 1e-9 * noise_density_model(1.0, G_S, N_S, band, band.omega_s)


def test_reference_idler_values_echo(band):
    fit = fit_gain_noise(points(band, band.omega_i, G_I, N_I), band, band.omega_i)
    assert fit.gain_db == pytest.approx(94.25, abs=1e-9)
    assert fit.n_add == pytest.approx(14.91, rel=1e-9)
    report = fit.to_dict()
    assert set(report) >= {"gain_linear", "gain_db", "n_add", "stderr_gain", "stderr_n_add", "ci95_gain", "ci95_n_add"}


def test_noisy_coverage(band):
    rng = np.random.default_rng(2024)
    hits_g = hits_n = 0
    for _ in range(200):
        fit = fit_gain_noise(points(band, band.omega_s, G_S, N_S, noise=0.01, rng=rng), band, band.omega_s)
        g, n = fit.covers(G_S, N_S)
        hits_g += g
        hits_n += n
    assert hits_g / 200 >= 0.93
    assert hits_n / 200 >= 0.93


def test_weighted_fit_recovers(band):
    rng = np.random.default_rng(1)
    fit = fit_gain_noise(points(band, band.omega_s, G_S, N_S, noise=0.01, rng=rng), band, band.omega_s, weighted=True)
    assert abs(fit.gain_linear - G_S) < 4 * fit.stderr_gain
    with pytest.raises(FitError):
        fit_gain_noise(points(band, band.omega_s, G_S, N_S), band, band.omega_s, weighted=True)


def test_two_points_exact(band):
    with pytest.warns(RuntimeWarning):
        fit = fit_gain_noise(points(band, band.omega_s, G_S, N_S, temps=[0.05, 1.0]), band, band.omega_s)
    assert fit.gain_linear == pytest.approx(G_S, rel=1e-9)
    assert fit.residual_norm <= 1e-12 * noise_density_model(1.0, G_S, N_S, band, band.omega_s)
    assert math.isnan(fit.ci95_gain)


def test_rank_deficient(band):
    pts = points(band, band.omega_s, G_S, N_S, temps=[0.3, 0.3, 0.3])
    with pytest.raises(FitError):
        fit_gain_noise(pts, band, band.omega_s)
    with pytest.raises(FitError):
        fit_gain_noise(pts[:1], band, band.omega_s)


def test_negative_gain_is_fit_error(band):
    pts = points(band, band.omega_s, G_S, N_S)
    flipped = [CalibrationPoint(p.temperature_T, pts[-1 - k].noise_density) for k, p in enumerate(pts)]
    with pytest.raises(FitError):
        fit_gain_noise(flipped, band, band.omega_s)


def test_negative_n_add_flagged(band):
    pts = points(band, band.omega_s, G_S, -0.2)
    with pytest.warns(RuntimeWarning):
        fit = fit_gain_noise(pts, band, band.omega_s)
    assert fit.negative_n_add and fit.n_add == pytest.approx(-0.2, rel=1e-6)


def test_stderr_shrinks_with_replication(band):
    ses = {}
    for reps in (1, 4):
        vals = []
        for seed in range(40):
            rng = np.random.default_rng(seed)
            temps = np.tile(TEMPS, reps)
            vals.append(fit_gain_noise(points(band, band.omega_s, G_S, N_S, temps, 0.01, rng), band, band.omega_s).stderr_n_add)
        ses[reps] = np.mean(vals)
    assert ses[4] / ses[1] == pytest.approx(0.5, rel=0.2)


def test_point_validation():
    with pytest.raises(ConfigError):
        CalibrationPoint(0.0, 1.0)
    with pytest.raises(ConfigError):
        CalibrationPoint(1.0, -1.0)


def test_calibrate_idler_examples():
    assert calibrate_idler_number(G_I * (N_I + 1), G_I, N_I) == pytest.approx(0.0, abs=1e-9)
    assert calibrate_idler_number(G_I * (0.5 + N_I + 1), G_I, N_I) == pytest.approx(0.5)
    with pytest.warns(NegativeOccupationWarning):
        assert calibrate_idler_number(G_I * N_I, G_I, N_I) == pytest.approx(-1.0)
    with pytest.raises(ConfigError):
        calibrate_idler_number(1.0, 0.0, 1.0)


def test_calibrate_inverts_detect_idler(chain):
    for n in (0.0, 0.3, 4.0):
        d = detect_idler(moments_from_tmsv(n), chain)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NegativeOccupationWarning)
            value = calibrate_idler_number(d.record_power_i, chain.g_i_total, chain.n_add_i)
        assert value == pytest.approx(n, abs=1e-9)


def test_calibrate_idler_from_records(chain):
    d = detect_idler(moments_from_tmsv(1.0), chain)
    est = estimate_moments(sample_records(d, 200_000, seed=8))
    value = calibrate_idler_number(est.power_i, chain.g_i_total, chain.n_add_i)
    assert abs(value - 1.0) < 5 * est.stderr_power_i / chain.g_i_total


def test_csv_round_trip(tmp_path, band):
    pts = points(band, band.omega_s, G_S, N_S)
    path = tmp_path / "p.csv"
    write_points_csv(path, pts)
    assert read_points_csv(path) == pts
    bad = tmp_path / "bad.csv"
    bad.write_text("T,noise\n1,2\n")
    with pytest.raises(ConfigError, match="T_K"):
        read_points_csv(bad)
