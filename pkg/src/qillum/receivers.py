"""Detection strategies and their signal-to-noise ratios.

All receivers share the binary-decision SNR of a Gaussian decision variable
``O`` with conditional means and variances under target absence (0) and
presence (1)::

    SNR = (<O_1> - <O_0>)^2 / (2 (sqrt(var_1) + sqrt(var_0))^2)

Each receiver is available twice: from detected-mode moments (closed form) and
from record batches (Monte Carlo, with delta-method standard errors).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import erfc

from .calibration import calibrate_idler_number
from .chain import ChainParams, detect
from .constants import DomainError, Hypothesis, SecondMoments, apply_phase_rotation, db, optimal_rotation
from .dsp import RecordBatch, fsum_mean

__all__ = [
    "Receiver",
    "DecisionStats",
    "SnrReport",
    "DegenerateInputError",
    "pc_decision_records",
    "decision_stats",
    "snr_from_stats",
    "pc_snr_analytic",
    "pc_snr_records",
    "pc_vacuum_correction",
    "homodyne_snr",
    "heterodyne_snr",
    "homodyne_snr_analytic",
    "heterodyne_snr_analytic",
    "error_probability",
    "record_rotation",
    "snr_zscore",
]


class Receiver(str, enum.Enum):
    PC_RAW = "pc_raw"
    PC_CALIBRATED = "pc_calibrated"
    HOMODYNE = "homodyne"
    HETERODYNE = "heterodyne"
    PASSIVE = "passive"


class DegenerateInputError(ValueError):
    """Both conditional variances vanish, so the SNR is undefined."""


@dataclass(frozen=True)
class DecisionStats:
    mean0: float
    mean1: float
    var0: float
    var1: float
    M: int = 0
    # third and fourth central moments, only known for sampled statistics
    m3_0: float = math.nan
    m4_0: float = math.nan
    m3_1: float = math.nan
    m4_1: float = math.nan


@dataclass(frozen=True)
class SnrReport:
    snr: float
    stderr: float
    receiver: Receiver
    stats: DecisionStats | None = None

    @property
    def snr_db(self) -> float:
        return float(db(self.snr))

    @property
    def stderr_db(self) -> float:
        if self.snr <= 0:
            return math.inf if self.stderr > 0 else 0.0
        return 10.0 / math.log(10.0) * self.stderr / self.snr


def _snr(mean0: float, mean1: float, var0: float, var1: float) -> float:
    spread = math.sqrt(max(var1, 0.0)) + math.sqrt(max(var0, 0.0))
    if spread == 0.0:
        raise DegenerateInputError("decision variable has zero variance under both hypotheses")
    return (mean1 - mean0) ** 2 / (2.0 * spread**2)


def snr_from_stats(s: DecisionStats, receiver: Receiver = Receiver.PC_RAW) -> SnrReport:
    snr = _snr(s.mean0, s.mean1, s.var0, s.var1)
    stderr = 0.0
    if s.M > 0 and not math.isnan(s.m4_0 + s.m4_1):
        s0, s1 = math.sqrt(s.var0), math.sqrt(s.var1)
        D, T = s.mean1 - s.mean0, s0 + s1
        g_mean = D / T**2
        g_sd = -(D**2) / T**3
        var = 0.0
        for sign, v, sd, m3, m4 in ((1, s.var1, s1, s.m3_1, s.m4_1), (-1, s.var0, s0, s.m3_0, s.m4_0)):
            var_sd = (m4 - v**2) / (4.0 * v) if v > 0 else 0.0
            cov = m3 / (2.0 * sd) if sd > 0 else 0.0
            var += (g_mean**2 * v + g_sd**2 * var_sd + 2.0 * sign * g_mean * g_sd * cov) / s.M
        stderr = math.sqrt(max(var, 0.0))
    return SnrReport(snr, stderr, receiver, s)


def _central_moments(x: np.ndarray) -> tuple[float, float, float, float]:
    mean = fsum_mean(x)
    d = x - mean
    d2 = d * d
    return mean, fsum_mean(d2), fsum_mean(d2 * d), fsum_mean(d2 * d2)


def decision_stats(d0: np.ndarray, d1: np.ndarray) -> DecisionStats:
    d0 = np.asarray(d0, dtype=float).reshape(-1)
    d1 = np.asarray(d1, dtype=float).reshape(-1)
    if d0.size != d1.size:
        raise ValueError(f"hypotheses hold different sample counts: {d0.size} vs {d1.size}")
    mean0, var0, m3_0, m4_0 = _central_moments(d0)
    mean1, var1, m3_1, m4_1 = _central_moments(d1)
    return DecisionStats(mean0, mean1, var0, var1, d0.size, m3_0, m4_0, m3_1, m4_1)


def _delta_stderr(
    func: Callable[[np.ndarray, np.ndarray], float],
    params: Sequence[np.ndarray],
    influences: Sequence[np.ndarray],
) -> float:
    """Delta-method standard error of ``func(theta0, theta1)``.

    ``influences[h]`` holds per-shot influence values (shape ``M_h x p``) of
    the estimated parameter vector ``params[h]``.
    """
    params = [np.asarray(p, dtype=float) for p in params]
    var = 0.0
    for h, (theta, psi) in enumerate(zip(params, influences)):
        scale = np.abs(theta) + psi.std(axis=0)
        grad = np.empty(theta.size)
        for j in range(theta.size):
            step = 1e-6 * scale[j] if scale[j] > 0 else 1e-12
            up = [p.copy() for p in params]
            down = [p.copy() for p in params]
            up[h][j] += step
            down[h][j] -= step
            grad[j] = (func(*up) - func(*down)) / (2.0 * step)
        var += float(np.var(psi @ grad)) / psi.shape[0]
    return math.sqrt(var)


# --- phase-conjugate receiver -------------------------------------------------


def _as_amplitudes(sig, idl) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(sig, RecordBatch):
        idl = sig if idl is None else idl
        if not isinstance(idl, RecordBatch):
            raise TypeError("signal and idler must both be RecordBatch objects")
        if sig.M != idl.M:
            raise ValueError(f"signal and idler batches differ in size: {sig.M} vs {idl.M}")
        if sig.hypothesis != idl.hypothesis:
            raise ValueError("signal and idler batches belong to different hypotheses")
        return sig.a_s, idl.a_i
    a_s = np.atleast_1d(np.asarray(sig, dtype=complex))
    a_i = np.atleast_1d(np.asarray(idl, dtype=complex))
    if a_s.shape != a_i.shape:
        raise ValueError("signal and idler arrays differ in shape")
    return a_s, a_i


def pc_decision_records(sig, idl=None) -> np.ndarray:
    """Per-shot photon-count difference of the digital phase-conjugate receiver.

    The signal record is conjugated and mixed with the idler on a 50:50
    splitter; the outputs' intensity difference equals ``2 Re(a_S a_I)``.
    ``sig``/``idl`` are record batches (``idl`` defaults to ``sig``'s own idler)
    or plain complex arrays.
    """
    a_s, a_i = _as_amplitudes(sig, idl)
    a_pc = np.conj(a_s)
    plus = (a_pc + a_i) / math.sqrt(2.0)
    minus = (a_pc - a_i) / math.sqrt(2.0)
    return np.abs(plus) ** 2 - np.abs(minus) ** 2


def _pc_mean_var(P: float, Q: float, C: float) -> tuple[float, float]:
    Q = max(Q, 0.0)
    n_plus = (P + Q + 2.0 * C) / 2.0
    n_minus = (P + Q - 2.0 * C) / 2.0
    var = n_plus * (n_plus + 1.0) + n_minus * (n_minus + 1.0) - (P - Q) ** 2 / 2.0
    return 2.0 * C, var


def _pc_stats(P0, P1, Q0, Q1, C0, C1) -> DecisionStats:
    mean0, var0 = _pc_mean_var(P0, Q0, C0)
    mean1, var1 = _pc_mean_var(P1, Q1, C1)
    return DecisionStats(mean0, mean1, var0, var1)


def pc_vacuum_correction(P: float, Q: float) -> float:
    """Operator-formula variance minus the classical record variance ``2(PQ + C^2)``.

    ``P`` is the conjugated-signal number ``<a a^dag>`` (= signal record
    power) and ``Q`` the idler number entering the operator formula.
    """
    return P + Q


def pc_snr_analytic(m: SecondMoments, p: ChainParams, eta: float, calibrated: bool = False) -> SnrReport:
    """Closed-form phase-conjugate receiver SNR for source moments ``m``.

    The raw receiver uses the detected idler number ``<a_I^det+ a_I^det>``,
    which equals ``G_I (N_I + n_add,I + 1)``.  The calibrated receiver replaces
    it by the source-plane idler number ``N_I`` and refers the cross
    correlation to the idler source plane.
    """
    rot = optimal_rotation(m)
    m = apply_phase_rotation(m, rot.angle)
    d0 = detect(m, p, eta, Hypothesis.ABSENT)
    d1 = detect(m, p, eta, Hypothesis.PRESENT)
    P0, P1 = d0.record_power_s, d1.record_power_s
    if calibrated:
        g = p.g_i_total
        Q0 = calibrate_idler_number(d0.record_power_i, g, p.n_add_i, warn=False)
        Q1 = calibrate_idler_number(d1.record_power_i, g, p.n_add_i, warn=False)
        C0, C1 = d0.c.real / math.sqrt(g), d1.c.real / math.sqrt(g)
        receiver = Receiver.PC_CALIBRATED
    else:
        Q0, Q1 = d0.record_power_i, d1.record_power_i
        C0, C1 = d0.c.real, d1.c.real
        receiver = Receiver.PC_RAW
    stats = _pc_stats(P0, P1, Q0, Q1, C0, C1)
    return SnrReport(_snr(stats.mean0, stats.mean1, stats.var0, stats.var1), 0.0, receiver, stats)


def record_rotation(b1: RecordBatch) -> float:
    """Idler rotation making the estimated ``<a_S a_I>`` of ``b1`` real positive."""
    c = fsum_mean(b1.a_s * b1.a_i)
    return -math.atan2(c.imag, c.real)


def pc_snr_records(
    b0: RecordBatch,
    b1: RecordBatch,
    calibrated: bool = False,
    chain: ChainParams | None = None,
) -> SnrReport:
    """Phase-conjugate receiver SNR estimated from records of both hypotheses.

    Raw: two-hypothesis SNR of the per-shot decision values.  Calibrated: plug-in of
    estimated signal power, cross correlation and calibrated idler number into
    the closed form; needs ``chain`` for the idler gain and added noise.
    Batches must already be rotated so the cross correlation is real.
    """
    if b0.M != b1.M:
        raise ValueError(f"hypotheses hold different record counts: {b0.M} vs {b1.M}")
    if not calibrated:
        stats = decision_stats(pc_decision_records(b0), pc_decision_records(b1))
        return snr_from_stats(stats, Receiver.PC_RAW)
    if chain is None:
        raise ValueError("the calibrated receiver needs the chain's idler gain and added noise")
    g = chain.g_i_total if b1.units == "detected" else 1.0
    root_g = math.sqrt(g)

    params, influences = [], []
    for b in (b0, b1):
        feats = np.stack([np.abs(b.a_s) ** 2, (b.a_s * b.a_i).real, np.abs(b.a_i) ** 2], axis=1)
        theta = np.array([fsum_mean(feats[:, j]) for j in range(3)])
        params.append(theta)
        influences.append(feats - theta)

    def stats_of(t0, t1) -> DecisionStats:
        q0 = calibrate_idler_number(t0[2], g, chain.n_add_i, warn=False)
        q1 = calibrate_idler_number(t1[2], g, chain.n_add_i, warn=False)
        return _pc_stats(t0[0], t1[0], q0, q1, t0[1] / root_g, t1[1] / root_g)

    def snr_of(t0, t1) -> float:
        s = stats_of(t0, t1)
        return _snr(s.mean0, s.mean1, s.var0, s.var1)

    stats = stats_of(*params)
    stats = DecisionStats(stats.mean0, stats.mean1, stats.var0, stats.var1, b1.M)
    return SnrReport(snr_of(*params), _delta_stderr(snr_of, params, influences), Receiver.PC_CALIBRATED, stats)


# --- coherent-state receivers -------------------------------------------------


def _quadratures(b: RecordBatch, phase: float) -> tuple[np.ndarray, np.ndarray]:
    rotated = b.a_s * np.exp(-1j * phase)
    return math.sqrt(2.0) * rotated.real, math.sqrt(2.0) * rotated.imag


def _check_pair(h0, h1) -> str:
    if isinstance(h0, SecondMoments) and isinstance(h1, SecondMoments):
        return "moments"
    if isinstance(h0, RecordBatch) and isinstance(h1, RecordBatch):
        if h0.M != h1.M:
            raise ValueError(f"hypotheses hold different record counts: {h0.M} vs {h1.M}")
        return "records"
    raise TypeError("pass two SecondMoments (closed form) or two RecordBatch objects (Monte Carlo)")


def homodyne_snr(h0, h1, phase: float = 0.0) -> SnrReport:
    """Single-quadrature SNR with the local oscillator at ``phase``.

    ``h0``/``h1`` are detected moments (closed form: quadrature variance
    ``n + 1/2``) or record batches.
    """
    if _check_pair(h0, h1) == "moments":
        rot = np.exp(-1j * phase)
        x0 = math.sqrt(2.0) * (h0.mean_s * rot).real
        x1 = math.sqrt(2.0) * (h1.mean_s * rot).real
        stats = DecisionStats(x0, x1, h0.n_s + h0.vac_s / 2.0, h1.n_s + h1.vac_s / 2.0)
        return SnrReport(_snr(x0, x1, stats.var0, stats.var1), 0.0, Receiver.HOMODYNE, stats)
    x0, _ = _quadratures(h0, phase)
    x1, _ = _quadratures(h1, phase)
    return snr_from_stats(decision_stats(x0, x1), Receiver.HOMODYNE)


def _heterodyne_snr(t0: np.ndarray, t1: np.ndarray) -> float:
    dx, dp = t1[0] - t0[0], t1[1] - t0[1]
    spread = math.sqrt(max(t1[2] + t1[3], 0.0)) + math.sqrt(max(t0[2] + t0[3], 0.0))
    if spread == 0.0:
        raise DegenerateInputError("quadratures have zero variance under both hypotheses")
    return (dx**2 + dp**2) / (2.0 * spread**2)


def _heterodyne_stats(t0: np.ndarray, t1: np.ndarray, M: int = 0) -> DecisionStats:
    diff = np.array([t1[0] - t0[0], t1[1] - t0[1]])
    norm = float(np.hypot(*diff))
    unit = diff / norm if norm > 0 else np.array([1.0, 0.0])
    return DecisionStats(
        float(unit @ t0[:2]), float(unit @ t1[:2]), float(t0[2] + t0[3]), float(t1[2] + t1[3]), M
    )


def heterodyne_snr(h0, h1, phase: float = 0.0) -> SnrReport:
    """Two-quadrature SNR; independent of ``phase``."""
    if _check_pair(h0, h1) == "moments":
        params = []
        for h in (h0, h1):
            mean = h.mean_s * np.exp(-1j * phase)
            v = h.n_s + h.vac_s / 2.0
            params.append(np.array([math.sqrt(2.0) * mean.real, math.sqrt(2.0) * mean.imag, v, v]))
        snr = _heterodyne_snr(*params)
        return SnrReport(snr, 0.0, Receiver.HETERODYNE, _heterodyne_stats(*params))
    params, influences = [], []
    for h in (h0, h1):
        x, p = _quadratures(h, phase)
        mx, mp = fsum_mean(x), fsum_mean(p)
        dx, dp = x - mx, p - mp
        vx, vp = fsum_mean(dx * dx), fsum_mean(dp * dp)
        params.append(np.array([mx, mp, vx, vp]))
        influences.append(np.stack([dx, dp, dx * dx - vx, dp * dp - vp], axis=1))
    snr = _heterodyne_snr(*params)
    stderr = _delta_stderr(_heterodyne_snr, params, influences)
    return SnrReport(snr, stderr, Receiver.HETERODYNE, _heterodyne_stats(*params, M=h1.M))


def _detected_pair(m: SecondMoments, p: ChainParams, eta: float) -> tuple[SecondMoments, SecondMoments]:
    return detect(m, p, eta, Hypothesis.ABSENT), detect(m, p, eta, Hypothesis.PRESENT)


def homodyne_snr_analytic(m: SecondMoments, p: ChainParams, eta: float) -> SnrReport:
    """Homodyne SNR of a coherent source; the LO is aligned with its mean."""
    d0, d1 = _detected_pair(m, p, eta)
    return homodyne_snr(d0, d1, phase=float(np.angle(m.mean_s)))


def heterodyne_snr_analytic(m: SecondMoments, p: ChainParams, eta: float) -> SnrReport:
    d0, d1 = _detected_pair(m, p, eta)
    return heterodyne_snr(d0, d1)


def snr_zscore(report: SnrReport, reference: float) -> float:
    """Distance of a sampled SNR from ``reference`` in standard errors.

    Measured on the ``sqrt(SNR)`` scale, where the estimator is close to
    Gaussian even at small ``SNR * M``; the linear scale is strongly skewed there.
    """
    if not (report.snr > 0 and report.stderr > 0):
        raise DomainError("z-score needs a positive SNR estimate with a positive standard error")
    if reference < 0:
        raise DomainError(f"reference SNR must be non-negative, got {reference}")
    return (math.sqrt(report.snr) - math.sqrt(reference)) * 2.0 * math.sqrt(report.snr) / report.stderr


def error_probability(snr, M):
    """Symmetric binary-decision error probability ``erfc(sqrt(SNR M)) / 2``."""
    snr_arr = np.asarray(snr, dtype=float)
    M_arr = np.asarray(M, dtype=float)
    if np.any(snr_arr < 0):
        raise DomainError("snr must be non-negative")
    if np.any(M_arr < 1):
        raise DomainError("M must be at least 1")
    out = 0.5 * erfc(np.sqrt(snr_arr * M_arr))
    return float(out) if out.ndim == 0 else out
