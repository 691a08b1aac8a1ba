"""Fast invariant suite behind ``qillum selftest``.

Each property is a zero-argument callable returning ``(ok, detail)``.  Faults
for mutation smoke tests are installed with :mod:`unittest.mock` and resolve
module attributes at call time, so every property calls through the module.
"""

from __future__ import annotations

import itertools
import math
from contextlib import ExitStack
from typing import Callable
from unittest import mock

import numpy as np

from . import calibration, chain, constants, dsp, experiments, receivers

PropertyResult = tuple[bool, str]

ORACLE_M = 10_000


def _physicality() -> PropertyResult:
    for n, p in itertools.product((0.01, 0.5, 3.0), (1.0, 0.8)):
        m = constants.moments_from_tmsv(n, p)
        if not m.is_physical():
            return False, f"tmsv({n}, {p}) flagged unphysical"
    over = constants.moments_from_tmsv(1.0).with_(c=1.1 * math.sqrt(2.0))
    if over.is_physical():
        return False, "over-correlated state accepted"
    if not constants.moments_classical(0.7).is_classical():
        return False, "classical source not classical"
    return True, "symplectic bound holds"


def _duan() -> PropertyResult:
    for n in (0.01, 0.5, 3.0):
        if not constants.duan_delta(constants.moments_from_tmsv(n)) < 1.0:
            return False, f"pure tmsv at N={n} not certified entangled"
        if constants.duan_delta(constants.moments_classical(n)) < 1.0 - 1e-9:
            return False, f"classical source at N={n} certified entangled"
    return True, "tmsv < 1 <= classical"


def _dsp_round_trip() -> PropertyResult:
    band = constants.BandParams.reference()
    m = constants.moments_from_tmsv(0.5)
    batch = dsp.sample_records(m, 500, seed=3)
    back = dsp.demodulate_records(dsp.synthesize_if(batch, band, gain=1e9), gain=1e9)
    err = max(
        float(np.max(np.abs(back.a_s - batch.a_s) / np.abs(batch.a_s))),
        float(np.max(np.abs(back.a_i - batch.a_i) / np.abs(batch.a_i))),
    )
    return err < 1e-9, f"max relative error {err:.2e}"


def _calibration_round_trip() -> PropertyResult:
    band = constants.BandParams.reference()
    gain, n_add = constants.from_db(94.25), 14.91
    temps = np.linspace(0.05, 1.0, 8)
    pts = [
        calibration.CalibrationPoint(t, calibration.noise_density_model(t, gain, n_add, band, band.omega_i))
        for t in temps
    ]
    fit = calibration.fit_gain_noise(pts, band, band.omega_i)
    err = max(abs(fit.gain_linear / gain - 1), abs(fit.n_add / n_add - 1))
    return err < 1e-9, f"relative error {err:.2e}"


def _idler_calibration() -> PropertyResult:
    p = chain.ChainParams.reference()
    m = constants.moments_from_tmsv(1.0)
    det = chain.detect_idler(m, p)
    value = calibration.calibrate_idler_number(det.record_power_i, p.g_i_total, p.n_add_i, warn=False)
    return abs(value - 1.0) < 1e-9, f"calibrated N_I = {value:.12g}"


def _error_probability() -> PropertyResult:
    value = receivers.error_probability(1.0, 1)
    ok = abs(value - 0.0786496) < 1e-6 and receivers.error_probability(0.0, 1) == 0.5
    return ok, f"E(1, 1) = {value:.7f}"


def _passive() -> PropertyResult:
    value = chain.passive_snr_db(chain.ChainParams.reference(), 1.0)
    return abs(value - 31.4) <= 1.5, f"{value:.2f} dB"


ORACLE_GRID = tuple(itertools.product((0.1, 0.5, 2.0), (1.0, 0.1, 0.01), (1.0, 0.9, 0.7)))


def oracle_zscores(seed: int = 0, M: int = ORACLE_M) -> list[tuple[str, float]]:
    """Sampled-vs-closed-form z-scores over the 27-point (N, eta, purity) grid.

    Every receiver is checked: the PC receivers on a TMSV source and the
    linear receivers on a coherent source of the same N.
    """
    p = chain.ChainParams.reference()
    cfg = experiments.SweepConfig(variable="n_s", grid=[0.1], repetitions=1, seed=seed, M=M, M_coherent=M)
    out = []
    for index, (n, eta, purity) in enumerate(ORACLE_GRID):
        for source, m in (
            (experiments.Source.TMSV, constants.moments_from_tmsv(n, purity)),
            (experiments.Source.COHERENT, constants.moments_coherent(n)),
        ):
            reports = experiments._mc_reports(cfg, source, m, p, eta, M, index)
            for receiver, (mc,) in reports.items():
                exact = experiments._analytic(receiver, m, p, eta)
                label = f"{receiver.value} at N={n}, eta={eta}, purity={purity}"
                out.append((label, receivers.snr_zscore(mc, exact.snr)))
    return out


def _oracle_grid(seed: int) -> PropertyResult:
    scores = oracle_zscores(seed)
    label, z = max(scores, key=lambda item: abs(item[1]))
    if abs(z) > 3.0:
        return False, f"{label}: {abs(z):.1f} s.e."
    return True, f"{len(scores)} comparisons, worst {abs(z):.2f} s.e."


def properties(seed: int = 0) -> dict[str, Callable[[], PropertyResult]]:
    return {
        "physicality": _physicality,
        "duan_criterion": _duan,
        "dsp_round_trip": _dsp_round_trip,
        "calibration_round_trip": _calibration_round_trip,
        "idler_calibration": _idler_calibration,
        "error_probability": _error_probability,
        "passive_snr": _passive,
        "oracle_grid": lambda: _oracle_grid(seed),
    }


def _bad_duan(m):
    return m.n_s + m.n_i + 1.0 + 2.0 * m.c.real


def _bad_pc_mean_var(P, Q, C):
    Q = max(Q, 0.0)
    n_plus, n_minus = (P + Q + 2.0 * C) / 2.0, (P + Q - 2.0 * C) / 2.0
    return 2.0 * C, n_plus * (n_plus + 1.0) + n_minus * (n_minus + 1.0)


def _bad_calibrate(detected, g_i, n_add_i, warn=True):
    return detected / g_i - n_add_i


def _bad_erfc(snr, M):
    from scipy.special import erfc

    return float(erfc(math.sqrt(snr * M)))


# fault name -> list of (module, attribute, replacement)
FAULTS = {
    "duan": [(constants, "duan_delta", _bad_duan)],
    "pc_variance": [(receivers, "_pc_mean_var", _bad_pc_mean_var)],
    "idler_calibration": [
        (calibration, "calibrate_idler_number", _bad_calibrate),
        (receivers, "calibrate_idler_number", _bad_calibrate),
    ],
    "error_probability": [(receivers, "error_probability", _bad_erfc)],
    "passive": [(chain, "passive_snr_db", lambda p, eta: 20.0)],
}


def run(seed: int = 0, fault: str | None = None, out=print) -> bool:
    """Run every property, print one PASS/FAIL line each, return overall success."""
    with ExitStack() as stack:
        if fault is not None:
            if fault not in FAULTS:
                raise KeyError(f"unknown fault {fault!r}; choose from {', '.join(FAULTS)}")
            for module, attr, repl in FAULTS[fault]:
                stack.enter_context(mock.patch.object(module, attr, repl))
        ok_all = True
        for name, prop in properties(seed).items():
            try:
                ok, detail = prop()
            except Exception as exc:  # a crash counts as a failed property
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            ok_all &= ok
            out(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return ok_all


__all__ = ["run", "properties", "oracle_zscores", "FAULTS"]
