"""Physical constants, band parameters and two-mode Gaussian second moments.

Every source used in the simulator is a two-mode Gaussian state with
phase-insensitive marginals, so it is fully described by the two mean
occupations, the complex cross-correlation ``<a_S a_I>`` and the coherent
means.  Single-mode squeezing terms ``<a_S a_S>`` are identically zero.

Quadratures follow ``x = (a + a^dag)/sqrt(2)``, so the vacuum variance is 1/2
and a state is physical when both symplectic eigenvalues are >= 1/2.
"""

from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy import constants as _sc

__all__ = [
    "PhysConstants",
    "PHYS",
    "BandParams",
    "Hypothesis",
    "SecondMoments",
    "Rotation",
    "DomainError",
    "ConfigError",
    "moments_from_tmsv",
    "moments_classical",
    "moments_coherent",
    "duan_delta",
    "apply_phase_rotation",
    "optimal_rotation",
    "db",
    "from_db",
    "bose_occupation",
]

PHYSICALITY_RTOL = 1e-9
_OMEGA = np.kron(np.eye(2), np.array([[0.0, 1.0], [-1.0, 0.0]]))


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class ConfigError(ValueError):
    """Inconsistent or missing configuration."""


@dataclass(frozen=True)
class PhysConstants:
    hbar: float = _sc.hbar
    k_B: float = _sc.k


PHYS = PhysConstants()


def db(x):
    """Linear power ratio to dB (``-inf`` for zero)."""
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x)


def from_db(x_db):
    out = 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)
    return float(out) if out.ndim == 0 else out


def bose_occupation(omega: float, temperature: float) -> float:
    """Thermal photon number of a mode at angular frequency ``omega`` [rad/s]."""
    if temperature <= 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    x = PHYS.hbar * omega / (PHYS.k_B * temperature)
    return 1.0 / math.expm1(x)


class Hypothesis(enum.Enum):
    ABSENT = 0
    PRESENT = 1


@dataclass(frozen=True)
class BandParams:
    """Frequencies and digitizer settings of the two-channel receiver.

    ``omega_s``/``omega_i`` are angular frequencies in rad/s.  The measurement
    bandwidth equals the record's FFT bin spacing, ``sample_rate / record_len``.
    """

    omega_s: float
    omega_i: float
    bandwidth_B: float
    impedance_R: float
    sample_rate: float
    if_freq: float
    record_len: int

    def __post_init__(self):
        for name in ("omega_s", "omega_i", "bandwidth_B", "impedance_R", "sample_rate", "if_freq"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigError(f"band.{name} must be positive and finite, got {value}")
        if int(self.record_len) != self.record_len or self.record_len < 2:
            raise ConfigError(f"band.record_len must be an integer >= 2, got {self.record_len}")
        if self.if_freq >= self.sample_rate / 2:
            raise ConfigError(
                f"band.if_freq={self.if_freq} Hz is not below Nyquist ({self.sample_rate / 2} Hz)"
            )
        expected = self.sample_rate / self.record_len
        if not math.isclose(self.bandwidth_B, expected, rel_tol=1e-9):
            raise ConfigError(
                f"band.bandwidth_B={self.bandwidth_B} Hz must equal sample_rate/record_len={expected} Hz"
            )

    @classmethod
    def reference(cls) -> "BandParams":
        return cls(
            omega_s=2 * math.pi * 10.09e9,
            omega_i=2 * math.pi * 6.8e9,
            bandwidth_B=200e3,
            impedance_R=50.0,
            sample_rate=100e6,
            if_freq=20e6,
            record_len=500,
        )

    @property
    def if_bin(self) -> float:
        """IF frequency in units of the FFT bin spacing (not necessarily integral)."""
        return self.if_freq / self.bandwidth_B

    def omega(self, channel: str) -> float:
        return {"s": self.omega_s, "i": self.omega_i}[channel]

    def with_(self, **changes) -> "BandParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class SecondMoments:
    """Moments of a zero-squeezing two-mode Gaussian state.

    ``n_s``/``n_i`` are excess (normally ordered, mean-subtracted) occupations,
    ``c`` is ``<a_S a_I>`` of the fluctuations.  ``vac_s``/``vac_i`` give the
    size of one heterodyne vacuum unit in the units the moments are expressed
    in (1 at the source plane; the idler chain refers it through its gain).
    """

    n_s: float
    n_i: float
    c: complex = 0.0
    mean_s: complex = 0.0
    mean_i: complex = 0.0
    vac_s: float = 1.0
    vac_i: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "c", complex(self.c))
        object.__setattr__(self, "mean_s", complex(self.mean_s))
        object.__setattr__(self, "mean_i", complex(self.mean_i))
        for name in ("n_s", "n_i"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise DomainError(f"{name} must be a finite non-negative number, got {value}")
        if not (self.vac_s > 0 and self.vac_i > 0):
            raise DomainError("vacuum units must be positive")

    def covariance(self) -> np.ndarray:
        """4x4 quadrature covariance in the order (x_S, p_S, x_I, p_I)."""
        a = self.n_s + 0.5
        b = self.n_i + 0.5
        cr, ci = self.c.real, self.c.imag
        cross = np.array([[cr, ci], [ci, -cr]])
        cov = np.zeros((4, 4))
        cov[:2, :2] = a * np.eye(2)
        cov[2:, 2:] = b * np.eye(2)
        cov[:2, 2:] = cross
        cov[2:, :2] = cross.T
        return cov

    def symplectic_eigenvalues(self) -> tuple[float, float]:
        """``(nu_minus, nu_plus)``; meaningful only for a positive-definite covariance."""
        ev = np.abs(np.linalg.eigvals(1j * _OMEGA @ self.covariance()))
        ev = np.sort(ev)
        # eigenvalues come in +/- pairs
        return float(ev[0]), float(ev[2])

    def is_physical(self, rtol: float = PHYSICALITY_RTOL) -> bool:
        """Uncertainty principle ``V + i Omega / 2 >= 0``, i.e. ``nu_minus >= 1/2``."""
        cov = self.covariance()
        lowest = np.linalg.eigvalsh(cov + 0.5j * _OMEGA)[0]
        return bool(lowest >= -rtol * max(1.0, float(np.trace(cov))))

    def is_classical(self, rtol: float = PHYSICALITY_RTOL) -> bool:
        bound = self.n_s * self.n_i
        return abs(self.c) ** 2 <= bound * (1 + rtol) + 1e-300

    @property
    def record_power_s(self) -> float:
        """Mean ``|a_S|^2`` of heterodyne records of this state."""
        return self.n_s + self.vac_s + abs(self.mean_s) ** 2

    @property
    def record_power_i(self) -> float:
        return self.n_i + self.vac_i + abs(self.mean_i) ** 2

    def with_(self, **changes) -> "SecondMoments":
        return replace(self, **changes)


class Rotation(NamedTuple):
    angle: float
    degenerate: bool


def _check_photon_number(name: str, value: float) -> None:
    if not (value >= 0 and math.isfinite(value)):
        raise DomainError(f"{name} must be a finite non-negative photon number, got {value}")


def moments_from_tmsv(n_s: float, purity: float = 1.0) -> SecondMoments:
    """Two-mode squeezed vacuum with ``n_s`` photons per mode.

    ``purity`` scales the cross-correlation below its pure-state value
    ``sqrt(n_s (n_s + 1))`` and stands in for source heating.
    """
    _check_photon_number("n_s", n_s)
    if not (0.0 <= purity <= 1.0):
        raise DomainError(f"purity must lie in [0, 1], got {purity}")
    c = purity * math.sqrt(n_s * (n_s + 1.0))
    return SecondMoments(n_s=n_s, n_i=n_s, c=c)


def moments_classical(n_s: float, n_i: float | None = None) -> SecondMoments:
    """Maximally correlated classical thermal pair, ``c = sqrt(n_s n_i)``."""
    if n_i is None:
        n_i = n_s
    _check_photon_number("n_s", n_s)
    _check_photon_number("n_i", n_i)
    return SecondMoments(n_s=n_s, n_i=n_i, c=math.sqrt(n_s * n_i))


def moments_coherent(n_s: float) -> SecondMoments:
    _check_photon_number("n_s", n_s)
    return SecondMoments(n_s=0.0, n_i=0.0, mean_s=math.sqrt(n_s))


def duan_delta(m: SecondMoments) -> float:
    """Sum of joint quadrature variances; below 1 certifies entanglement."""
    return m.n_s + m.n_i + 1.0 - 2.0 * m.c.real


def apply_phase_rotation(m: SecondMoments, theta: float) -> SecondMoments:
    """Rotate the idler phase by ``theta`` radians."""
    phase = cmath.exp(1j * theta)
    return m.with_(c=m.c * phase, mean_i=m.mean_i * phase)


def optimal_rotation(m: SecondMoments) -> Rotation:
    """Idler rotation that makes ``c`` real and positive.

    Returns angle 0 flagged as degenerate when ``c == 0``.
    """
    if m.c == 0:
        return Rotation(0.0, True)
    theta = -cmath.phase(m.c)
    if theta <= -math.pi:
        theta += 2 * math.pi
    return Rotation(theta, False)
