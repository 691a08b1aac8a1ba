"""Microwave quantum-illumination simulator.

Gaussian source moments, the amplifier/loss chain, IF record synthesis and
demodulation, four receivers and radiometric calibration.
"""

from .calibration import CalibrationFit, CalibrationPoint, calibrate_idler_number, fit_gain_noise, noise_density_model
from .chain import ChainParams, TargetScenario, detect, detect_idler, detect_signal, noise_totals, passive_snr, passive_snr_db
from .constants import (
    PHYS,
    BandParams,
    ConfigError,
    DomainError,
    Hypothesis,
    SecondMoments,
    apply_phase_rotation,
    duan_delta,
    moments_classical,
    moments_coherent,
    moments_from_tmsv,
    optimal_rotation,
)
from .dsp import RecordBatch, demodulate_records, estimate_moments, sample_records, synthesize_if
from .receivers import (
    Receiver,
    SnrReport,
    error_probability,
    heterodyne_snr,
    homodyne_snr,
    pc_decision_records,
    pc_snr_analytic,
    pc_snr_records,
    snr_from_stats,
)

__version__ = "0.1.0"
