"""Amplifier, target and down-conversion chain.

The signal is amplified (``g_s_amp``), sent through a round trip of total
transmissivity ``eta`` that mixes in room-temperature environment noise, and
amplified again after detection (``g_s_det``).  The idler is amplified and
down-converted with total gain ``g_i_total`` and referred added noise
``n_add_i``.  All amplifiers are phase insensitive with independent thermal
noise modes.

Noise bookkeeping (full ``eta`` dependence)::

    n0 = G_det n_env + (G_det - 1) n_det
    n1 = eta G_det (G_amp - 1) n_amp + (1 - eta) G_det n_env + (G_det - 1) n_det

For ``eta << 1`` this reduces to ``n1 = eta G_det (G_amp - 1) n_amp + n0``.
``n_amp_s`` and ``n_det_s`` are effective noise quanta that already contain the
amplifier's vacuum contribution, so a quantum-limited stage has quanta >= 1.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, fields, replace
from typing import Mapping

from .constants import ConfigError, DomainError, Hypothesis, SecondMoments, db, from_db

__all__ = [
    "ChainParams",
    "TargetScenario",
    "NoiseTotals",
    "SubQuantumLimitWarning",
    "detect_signal",
    "detect_idler",
    "detect",
    "noise_totals",
    "passive_snr",
    "passive_snr_db",
]

# Product (G_amp - 1) n_amp quoted by the experiment; n_amp itself is not given separately.
REFERENCE_AMP_NOISE_PRODUCT = 5e8


class SubQuantumLimitWarning(RuntimeWarning):
    """Chain noise is below what a phase-insensitive amplifier must add."""


_GAIN_FIELDS = ("g_s_amp", "g_s_det", "g_i_total")
_NOISE_FIELDS = ("n_amp_s", "n_det_s", "n_add_i", "n_env")


@dataclass(frozen=True)
class ChainParams:
    g_s_amp: float
    g_s_det: float
    g_i_total: float
    n_amp_s: float
    n_det_s: float
    n_add_i: float
    n_env: float
    # 1-sigma uncertainties of the total gains in dB, used for sweep error bands
    g_s_db_err: float = 0.0
    g_i_db_err: float = 0.0

    def __post_init__(self):
        for name in _GAIN_FIELDS:
            value = getattr(self, name)
            if not (value >= 1.0 and math.isfinite(value)):
                raise ConfigError(f"chain.{name} must be a linear gain >= 1, got {value}")
        for name in _NOISE_FIELDS:
            value = getattr(self, name)
            if not (value >= 0.0 and math.isfinite(value)):
                raise ConfigError(f"chain.{name} must be non-negative, got {value}")

    @classmethod
    def reference(cls) -> "ChainParams":
        g_s_amp = from_db(77.16)
        return cls(
            g_s_amp=g_s_amp,
            g_s_det=from_db(16.82),
            g_i_total=from_db(94.25),
            n_amp_s=REFERENCE_AMP_NOISE_PRODUCT / (g_s_amp - 1.0),
            n_det_s=3e5,
            n_add_i=14.91,
            n_env=672.0,
            g_s_db_err=0.01,
            g_i_db_err=0.02,
        )

    @classmethod
    def identity(cls) -> "ChainParams":
        """Unit gains and no noise; detection leaves moments unchanged."""
        return cls(1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0)

    @property
    def g_s(self) -> float:
        return self.g_s_amp * self.g_s_det

    @property
    def n_add_s(self) -> float:
        """Signal-chain added noise referred to the source output."""
        return (self.g_s_amp - 1.0) / self.g_s_amp * self.n_amp_s + (
            self.g_s_det - 1.0
        ) / self.g_s * self.n_det_s

    @property
    def sub_quantum_limited(self) -> bool:
        if self.g_s_amp > 1.0 and self.n_amp_s < 1.0:
            return True
        if self.g_s_det > 1.0 and self.n_det_s < 1.0:
            return True
        return self.n_add_i < 1.0 - 1.0 / self.g_i_total

    def with_(self, **changes) -> "ChainParams":
        return replace(self, **changes)

    def to_dict(self, gains_in_db: bool = True) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if gains_in_db and f.name in _GAIN_FIELDS:
                out[f"{f.name}_db"] = float(db(value))
            else:
                out[f.name] = float(value)
        return out

    @classmethod
    def from_mapping(cls, data: Mapping, base: "ChainParams | None" = None) -> "ChainParams":
        """Build from a flat mapping.

        Gains may be given as ``<name>_db`` or ``<name>_lin`` (or bare, meaning
        linear).  Keys absent from ``data`` are taken from ``base`` (reference
        values by default).
        """
        base = cls.reference() if base is None else base
        values = asdict(base)
        known = {f.name for f in fields(cls)}
        seen = set()
        for key, raw in data.items():
            if key in known:
                name, unit = key, "lin"
            elif key.endswith("_db") and key[:-3] in _GAIN_FIELDS:
                name, unit = key[:-3], "db"
            elif key.endswith("_lin") and key[:-4] in _GAIN_FIELDS:
                name, unit = key[:-4], "lin"
            else:
                raise ConfigError(f"unknown chain key {key!r}")
            if name in seen:
                raise ConfigError(f"chain key {name!r} given more than once")
            seen.add(name)
            try:
                value = float(raw)
            except (TypeError, ValueError):
                raise ConfigError(f"chain.{key} must be a number, got {raw!r}") from None
            values[name] = from_db(value) if unit == "db" else value
        if "g_s_amp" in seen and "n_amp_s" not in seen:
            values["n_amp_s"] = REFERENCE_AMP_NOISE_PRODUCT / max(values["g_s_amp"] - 1.0, 1e-300)
        return cls(**values)


@dataclass(frozen=True)
class TargetScenario:
    eta: float
    hypothesis: Hypothesis = Hypothesis.PRESENT

    def __post_init__(self):
        _check_eta(self.eta)


@dataclass(frozen=True)
class NoiseTotals:
    n0: float
    n1: float


def _check_eta(eta: float) -> None:
    if not (0.0 <= eta <= 1.0):
        raise DomainError(f"eta must lie in [0, 1], got {eta}")


def _warn_if_sub_quantum(p: ChainParams) -> None:
    if p.sub_quantum_limited:
        warnings.warn(
            "chain added noise is below the phase-insensitive amplifier limit",
            SubQuantumLimitWarning,
            stacklevel=3,
        )


def noise_totals(p: ChainParams, eta: float) -> NoiseTotals:
    _check_eta(eta)
    n0 = p.g_s_det * p.n_env + (p.g_s_det - 1.0) * p.n_det_s
    n1 = (
        eta * p.g_s_det * (p.g_s_amp - 1.0) * p.n_amp_s
        + (1.0 - eta) * p.g_s_det * p.n_env
        + (p.g_s_det - 1.0) * p.n_det_s
    )
    return NoiseTotals(n0=n0, n1=n1)


def detect_signal(m: SecondMoments, p: ChainParams, t: TargetScenario) -> SecondMoments:
    """Detected signal-mode moments under one hypothesis; idler untouched."""
    _warn_if_sub_quantum(p)
    totals = noise_totals(p, t.eta)
    if t.hypothesis is Hypothesis.ABSENT:
        return m.with_(n_s=totals.n0, c=0.0, mean_s=0.0)
    scale = math.sqrt(t.eta * p.g_s)
    return m.with_(
        n_s=t.eta * p.g_s * m.n_s + totals.n1,
        c=scale * m.c,
        mean_s=scale * m.mean_s,
    )


def detect_idler(m: SecondMoments, p: ChainParams) -> SecondMoments:
    _warn_if_sub_quantum(p)
    g = p.g_i_total
    root = math.sqrt(g)
    return m.with_(
        n_i=g * (m.n_i + p.n_add_i),
        c=root * m.c,
        mean_i=root * m.mean_i,
        vac_i=g * m.vac_i,
    )


def detect(m: SecondMoments, p: ChainParams, eta: float, hypothesis: Hypothesis) -> SecondMoments:
    """Both detected modes for one hypothesis."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SubQuantumLimitWarning)
        out = detect_idler(detect_signal(m, p, TargetScenario(eta, hypothesis)), p)
    _warn_if_sub_quantum(p)
    return out


def passive_snr(p: ChainParams, eta: float) -> float:
    """SNR of deciding on the amplified-noise level alone, ``(n1 - n0)/(n0 + 1)``.

    Negative when the target return is colder than the environment it hides.
    """
    totals = noise_totals(p, eta)
    return (totals.n1 - totals.n0) / (totals.n0 + 1.0)


def passive_snr_db(p: ChainParams, eta: float) -> float:
    return float(db(abs(passive_snr(p, eta))))
