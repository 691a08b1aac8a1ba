"""Radiometric gain/noise calibration with a variable-temperature load.

The measured noise density of a chain with gain ``G`` and referred added noise
``n_add`` looking at a matched load at temperature ``T`` is::

    N(T) = hbar omega B R G [ coth(hbar omega / 2 k_B T) / 2 + n_add ]

which is linear in ``a = hbar omega B R G`` and ``b = a n_add``, so the fit is
an exact (weighted) linear least-squares problem.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .constants import PHYS, BandParams, ConfigError, db

__all__ = [
    "CalibrationPoint",
    "CalibrationFit",
    "FitError",
    "NegativeOccupationWarning",
    "noise_density_model",
    "half_coth",
    "fit_gain_noise",
    "calibrate_idler_number",
    "read_points_csv",
    "write_points_csv",
]


class FitError(ValueError):
    pass


class NegativeOccupationWarning(RuntimeWarning):
    """A calibrated occupation came out below zero (sampling noise)."""


@dataclass(frozen=True)
class CalibrationPoint:
    temperature_T: float
    noise_density: float
    stderr: float = 0.0

    def __post_init__(self):
        for name in ("temperature_T", "noise_density", "stderr"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.temperature_T > 0:
            raise ConfigError(f"load temperature must be positive, got {self.temperature_T} K")
        if not self.noise_density > 0:
            raise ConfigError(f"noise density must be positive, got {self.noise_density}")
        if self.stderr < 0:
            raise ConfigError(f"stderr must be non-negative, got {self.stderr}")


@dataclass(frozen=True)
class CalibrationFit:
    gain_linear: float
    n_add: float
    stderr_gain: float
    stderr_n_add: float
    ci95_gain: float
    ci95_n_add: float
    residual_norm: float
    dof: int
    negative_n_add: bool = False

    @property
    def gain_db(self) -> float:
        return float(db(self.gain_linear))

    @property
    def stderr_gain_db(self) -> float:
        return 10.0 / math.log(10.0) * self.stderr_gain / self.gain_linear

    @property
    def ci95_gain_db(self) -> float:
        return 10.0 / math.log(10.0) * self.ci95_gain / self.gain_linear

    def covers(self, gain: float, n_add: float) -> tuple[bool, bool]:
        """Whether the 95% intervals contain the given gain and added noise."""
        return abs(gain - self.gain_linear) <= self.ci95_gain, abs(n_add - self.n_add) <= self.ci95_n_add

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(gain_db=self.gain_db, stderr_gain_db=self.stderr_gain_db, ci95_gain_db=self.ci95_gain_db)
        return out


def half_coth(temperature, omega: float):
    """``coth(hbar omega / 2 k_B T) / 2``, the load's symmetrized occupation."""
    x = PHYS.hbar * omega / (2.0 * PHYS.k_B * np.asarray(temperature, dtype=float))
    return 0.5 / np.tanh(x)


def noise_density_model(T, gain: float, n_add: float, band: BandParams, omega: float):
    scale = PHYS.hbar * omega * band.bandwidth_B * band.impedance_R * gain
    out = scale * (half_coth(T, omega) + n_add)
    return float(out) if np.ndim(out) == 0 else out


def fit_gain_noise(
    points: Sequence[CalibrationPoint],
    band: BandParams,
    omega: float,
    weighted: bool = False,
) -> CalibrationFit:
    """Least-squares gain and added noise with 95% Student-t intervals.

    With ``weighted=True`` each point is weighted by ``1/stderr^2``; the
    parameter covariance is always scaled by the residual variance.
    """
    points = list(points)
    temps = np.array([p.temperature_T for p in points])
    y = np.array([p.noise_density for p in points])
    if len(points) < 2 or np.unique(temps).size < 2:
        raise FitError("rank-deficient calibration: need at least two distinct load temperatures")
    if len(points) < 3 or temps.max() / temps.min() < 3.0:
        warnings.warn(
            "calibration points span fewer than 3 loads or less than a factor 3 in temperature",
            RuntimeWarning,
            stacklevel=2,
        )
    design = np.column_stack([half_coth(temps, omega), np.ones_like(temps)])
    if weighted:
        se = np.array([p.stderr for p in points])
        if np.any(se <= 0):
            raise FitError("weighted fit needs a positive stderr on every point")
        w = 1.0 / se
    else:
        w = np.ones_like(y)
    # column scaling keeps the normal matrix well conditioned for densities ~1e-12
    y_scale = float(np.max(np.abs(y)))
    A = design * w[:, None]
    rhs = y * w / y_scale
    coef, _, rank, _ = np.linalg.lstsq(A, rhs, rcond=None)
    if rank < 2:
        raise FitError("rank-deficient calibration design")
    resid = rhs - A @ coef
    dof = len(points) - 2
    a, b = coef * y_scale
    if not a > 0:
        raise FitError(f"fitted gain is not positive (slope {a:.3e})")
    ssr = float(resid @ resid)
    if dof > 0:
        cov = np.linalg.inv(A.T @ A) * (ssr / dof) * y_scale**2
        t95 = float(stats.t.ppf(0.975, dof))
    else:
        cov = np.full((2, 2), math.nan)
        t95 = math.nan
    unit = PHYS.hbar * omega * band.bandwidth_B * band.impedance_R
    gain = float(a / unit)
    n_add = float(b / a)
    se_gain = math.sqrt(cov[0, 0]) / unit if dof > 0 else math.nan
    if dof > 0:
        jac = np.array([-b / a**2, 1.0 / a])
        se_n_add = math.sqrt(float(jac @ cov @ jac))
    else:
        se_n_add = math.nan
    negative = bool(n_add < 0)
    if negative:
        warnings.warn(f"fitted added noise is negative ({n_add:.3g})", RuntimeWarning, stacklevel=2)
    return CalibrationFit(
        gain_linear=gain,
        n_add=n_add,
        stderr_gain=se_gain,
        stderr_n_add=se_n_add,
        ci95_gain=t95 * se_gain,
        ci95_n_add=t95 * se_n_add,
        residual_norm=math.sqrt(ssr) * y_scale,
        dof=dof,
        negative_n_add=negative,
    )


def calibrate_idler_number(detected_occupation: float, g_i: float, n_add_i: float, warn: bool = True) -> float:
    """Source-plane idler number from the detected idler number.

    ``detected_occupation`` is the idler record power ``<|a_I^det|^2>``; the
    result is ``detected/g_i - (n_add_i + 1)`` and is returned unclamped.
    """
    if not g_i > 0:
        raise ConfigError(f"idler gain must be positive, got {g_i}")
    value = detected_occupation / g_i - (n_add_i + 1.0)
    if warn and value < 0:
        warnings.warn(f"calibrated idler number is negative ({value:.3g})", NegativeOccupationWarning, stacklevel=2)
    return value


_CSV_COLUMNS = ("T_K", "noise_density_V2Hz", "stderr")


def read_points_csv(path) -> list[CalibrationPoint]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in _CSV_COLUMNS[:2] if c not in (reader.fieldnames or [])]
        if missing:
            raise ConfigError(f"{path}: missing column(s) {', '.join(missing)}")
        points = []
        for row in reader:
            try:
                points.append(
                    CalibrationPoint(
                        float(row["T_K"]),
                        float(row["noise_density_V2Hz"]),
                        float(row.get("stderr") or 0.0),
                    )
                )
            except ValueError as exc:
                raise ConfigError(f"{path}: bad row {row}: {exc}") from None
    return points


def write_points_csv(path, points: Sequence[CalibrationPoint]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_COLUMNS)
        for p in points:
            writer.writerow([repr(p.temperature_T), repr(p.noise_density), repr(p.stderr)])
