"""Record sampling, IF synthesis, FFT demodulation and moment estimation.

Records are complex amplitude pairs ``(a_S, a_I)`` drawn from the heterodyne
(Husimi) distribution of a two-mode state: the fluctuation covariance is the
state's moments plus one vacuum unit per mode.

Random numbers come from Philox streams keyed by ``(seed, block index)`` with a
fixed block size, so a batch is bit-identical however its blocks are spread
over workers.  Reductions sum each block with numpy and combine the block
partials with ``math.fsum`` (exactly rounded, hence order insensitive).

Raw record file layout (little endian)::

    offset  size  field
    0       8     magic b"QIRAW01\\n"
    8       4     uint32 n_channels (2: signal, idler)
    12      4     uint32 record_len
    16      8     uint64 M (records per channel)
    24      8     float64 sample_rate [Hz]
    32      8     float64 if_freq [Hz]
    40      8     float64 bandwidth_B [Hz]
    48      8     float64 impedance_R [ohm]
    56      8     float64 omega_s [rad/s]
    64      8     float64 omega_i [rad/s]
    72      8     float64 vac_s (vacuum unit at unit demodulation gain)
    80      8     float64 vac_i
    88      4     int32 hypothesis (-1 unknown, 0 absent, 1 present)
    92      4     uint32 reserved (0)
    96      ...   float32 samples [V], channel-major: [channel][record][sample]
"""

from __future__ import annotations

import csv
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constants import PHYS, BandParams, ConfigError, DomainError, Hypothesis, SecondMoments

__all__ = [
    "BLOCK_SIZE",
    "RecordBatch",
    "RawRecordStream",
    "MomentEstimate",
    "InsufficientDataError",
    "sample_records",
    "synthesize_if",
    "demodulate_records",
    "estimate_moments",
    "quantize",
    "concat_batches",
    "rotate_batch",
    "fsum_mean",
    "write_raw",
    "read_raw",
    "write_batch_csv",
    "read_batch_csv",
]

BLOCK_SIZE = 4096
_DEMOD_CHUNK = 8192
_MAGIC = b"QIRAW01\n"
_HEADER = struct.Struct("<8sIIQddddddddiI")
_UNITS = ("detected", "source")


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RecordBatch:
    """``M`` complex amplitude pairs plus provenance.

    ``vac_s``/``vac_i`` are the heterodyne vacuum units in the batch's units;
    they are subtracted when estimating normally ordered occupations.
    """

    a_s: np.ndarray
    a_i: np.ndarray
    units: str = "detected"
    hypothesis: Hypothesis | None = None
    seed: int | None = None
    vac_s: float = 1.0
    vac_i: float = 1.0

    def __post_init__(self):
        a_s = np.ascontiguousarray(self.a_s, dtype=np.complex128).reshape(-1)
        a_i = np.ascontiguousarray(self.a_i, dtype=np.complex128).reshape(-1)
        if a_s.shape != a_i.shape:
            raise ValueError(f"signal and idler lengths differ: {a_s.size} vs {a_i.size}")
        if a_s.size < 1:
            raise InsufficientDataError("a record batch needs at least one record")
        if not (np.isfinite(a_s).all() and np.isfinite(a_i).all()):
            raise DomainError("record amplitudes must be finite")
        if self.units not in _UNITS:
            raise ValueError(f"units must be one of {_UNITS}, got {self.units!r}")
        object.__setattr__(self, "a_s", a_s)
        object.__setattr__(self, "a_i", a_i)

    @property
    def M(self) -> int:
        return self.a_s.size

    @property
    def amps(self) -> np.ndarray:
        return np.stack([self.a_s, self.a_i], axis=1)

    def scaled(self, factor: float) -> "RecordBatch":
        return RecordBatch(
            self.a_s * factor,
            self.a_i * factor,
            self.units,
            self.hypothesis,
            self.seed,
            self.vac_s * factor**2,
            self.vac_i * factor**2,
        )


@dataclass(frozen=True, eq=False)
class RawRecordStream:
    """Real IF voltage records, ``samples[channel, record, sample]``."""

    samples: np.ndarray
    band: BandParams
    hypothesis: Hypothesis | None = None
    vac: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 3 or samples.shape[0] != 2:
            raise ConfigError(f"expected samples of shape (2, M, record_len), got {samples.shape}")
        if samples.shape[1] < 1:
            raise InsufficientDataError("a raw stream needs at least one record")
        if samples.shape[2] != self.band.record_len:
            raise ConfigError(
                f"records hold {samples.shape[2]} samples, band expects {self.band.record_len}"
            )
        object.__setattr__(self, "samples", samples)

    @property
    def M(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class MomentEstimate:
    """Sample moments of a record batch with standard errors.

    Occupations are normally ordered (heterodyne vacuum removed) and may be
    slightly negative from sampling noise; :attr:`moments` clamps them at 0.
    """

    n_s: float
    n_i: float
    c: complex
    mean_s: complex
    mean_i: complex
    power_s: float
    power_i: float
    stderr_n_s: float
    stderr_n_i: float
    stderr_c_re: float
    stderr_c_im: float
    stderr_mean_s: float
    stderr_mean_i: float
    stderr_power_s: float
    stderr_power_i: float
    M: int
    vac_s: float = 1.0
    vac_i: float = 1.0

    @property
    def moments(self) -> SecondMoments:
        return SecondMoments(
            n_s=max(self.n_s, 0.0),
            n_i=max(self.n_i, 0.0),
            c=self.c,
            mean_s=self.mean_s,
            mean_i=self.mean_i,
            vac_s=self.vac_s,
            vac_i=self.vac_i,
        )


def _block_starts(n: int, block_size: int = BLOCK_SIZE) -> np.ndarray:
    return np.arange(0, n, block_size)


def fsum_mean(x: np.ndarray) -> float | complex:
    """Mean with fixed-block partial sums combined by ``math.fsum``."""
    x = np.asarray(x).reshape(-1)
    starts = _block_starts(x.size)
    if np.iscomplexobj(x):
        re = math.fsum(np.add.reduceat(x.real, starts).tolist())
        im = math.fsum(np.add.reduceat(x.imag, starts).tolist())
        return complex(re, im) / x.size
    return math.fsum(np.add.reduceat(x.astype(np.float64), starts).tolist()) / x.size


def _block_normals(seed: int, block: int, n: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block])))
    return rng.standard_normal((n, 4))


def sample_records(
    m: SecondMoments,
    M: int,
    seed: int,
    *,
    hypothesis: Hypothesis | None = None,
    units: str = "detected",
    workers: int = 1,
) -> RecordBatch:
    """Draw ``M`` i.i.d. heterodyne records of the state ``m``."""
    if int(M) != M or M < 1:
        raise DomainError(f"M must be a positive integer, got {M}")
    if int(seed) != seed or seed < 0:
        raise DomainError(f"seed must be a non-negative integer, got {seed}")
    M, seed = int(M), int(seed)
    var_s = m.n_s + m.vac_s
    var_i = m.n_i + m.vac_i
    c2 = abs(m.c) ** 2
    if m.vac_s == 1.0 and m.vac_i == 1.0 and not m.is_physical():
        raise DomainError(f"moments are not a physical state: {m}")
    if c2 > var_s * var_i * (1 + 1e-12):
        raise DomainError(f"moments have no heterodyne distribution: {m}")
    cond_var = max(var_i - c2 / var_s, 0.0)

    starts = _block_starts(M)
    sizes = [min(BLOCK_SIZE, M - s) for s in starts]
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_block_normals, [seed] * len(starts), range(len(starts)), sizes))
    else:
        parts = [_block_normals(seed, b, n) for b, n in enumerate(sizes)]
    z = np.concatenate(parts) * math.sqrt(0.5)
    x = z[:, 0] + 1j * z[:, 1]
    y = z[:, 2] + 1j * z[:, 3]
    a_s = m.mean_s + math.sqrt(var_s) * x
    a_i = m.mean_i + (m.c / math.sqrt(var_s)) * np.conj(x) + math.sqrt(cond_var) * y
    return RecordBatch(a_s, a_i, units=units, hypothesis=hypothesis, seed=seed, vac_s=m.vac_s, vac_i=m.vac_i)


def _pair(value, name: str) -> tuple[float, float]:
    if np.ndim(value) == 0:
        value = (value, value)
    out = tuple(float(v) for v in value)
    if len(out) != 2 or not all(v > 0 for v in out):
        raise ConfigError(f"{name} must be positive (scalar or signal/idler pair), got {value}")
    return out


def _if_bin(band: BandParams) -> int:
    k = band.if_bin
    k_int = int(round(k))
    if abs(k - k_int) > 1e-9 * max(1.0, k):
        raise ConfigError(
            f"IF frequency {band.if_freq} Hz is not an integer number of {band.bandwidth_B} Hz bins"
        )
    if not 0 < k_int < band.record_len / 2:
        raise ConfigError(f"IF bin {k_int} lies outside (0, Nyquist) for {band.record_len}-sample records")
    return k_int


def _volts_per_amplitude(band: BandParams, omega: float, gain: float) -> float:
    return math.sqrt(2.0 * PHYS.hbar * omega * band.bandwidth_B * band.impedance_R * gain)


def synthesize_if(batch: RecordBatch, band: BandParams, gain=1.0) -> RawRecordStream:
    """Render each amplitude as an IF tone ``Re[V exp(i 2 pi f_IF t)]``.

    ``V = sqrt(2 hbar omega B R G) a``; :func:`demodulate_records` with the same
    gain inverts this exactly.
    """
    k = _if_bin(band)
    gains = _pair(gain, "gain")
    n = np.arange(band.record_len)
    carrier = np.exp(2j * np.pi * k * n / band.record_len)
    samples = np.empty((2, batch.M, band.record_len))
    for ch, (amps, omega, g) in enumerate(
        ((batch.a_s, band.omega_s, gains[0]), (batch.a_i, band.omega_i, gains[1]))
    ):
        volts = _volts_per_amplitude(band, omega, g) * amps
        samples[ch] = np.real(volts[:, None] * carrier[None, :])
    vac = (batch.vac_s * gains[0], batch.vac_i * gains[1])
    return RawRecordStream(samples, band, batch.hypothesis, vac)


def demodulate_records(raw: RawRecordStream, gain=1.0, omega=None, units: str | None = None) -> RecordBatch:
    """FFT each record, read the IF bin and convert to photon-normalized amplitudes.

    ``gain``/``omega`` may be scalars or (signal, idler) pairs; ``omega`` defaults
    to the band's channel frequencies.  With unit gain the result stays in
    detected units, otherwise it is referred to the source.
    """
    band = raw.band
    k = _if_bin(band)
    gains = _pair(gain, "gain")
    omegas = (band.omega_s, band.omega_i) if omega is None else _pair(omega, "omega")
    if units is None:
        units = "detected" if gains == (1.0, 1.0) else "source"
    L = band.record_len
    out = []
    for ch in range(2):
        coeffs = np.empty(raw.M, dtype=np.complex128)
        for start in range(0, raw.M, _DEMOD_CHUNK):
            chunk = raw.samples[ch, start : start + _DEMOD_CHUNK]
            coeffs[start : start + chunk.shape[0]] = np.fft.rfft(chunk, axis=-1)[:, k]
        volts = 2.0 * coeffs / L
        out.append(volts / _volts_per_amplitude(band, omegas[ch], gains[ch]))
    return RecordBatch(
        out[0],
        out[1],
        units=units,
        hypothesis=raw.hypothesis,
        vac_s=raw.vac[0] / gains[0],
        vac_i=raw.vac[1] / gains[1],
    )


def quantize(raw: RawRecordStream, full_scale: float, bits: int = 8) -> RawRecordStream:
    """Uniform mid-tread ADC with ``2**bits`` levels spanning ``[-full_scale, full_scale)``."""
    if full_scale <= 0 or bits < 1:
        raise ConfigError("quantizer needs full_scale > 0 and bits >= 1")
    step = 2.0 * full_scale / 2**bits
    levels = np.clip(np.round(raw.samples / step), -(2 ** (bits - 1)), 2 ** (bits - 1) - 1)
    return RawRecordStream(levels * step, raw.band, raw.hypothesis, raw.vac)


def _mean_and_stderr(x: np.ndarray) -> tuple[float, float]:
    mean = fsum_mean(x)
    dev = x - mean
    var = fsum_mean(dev.real**2 + dev.imag**2) if np.iscomplexobj(dev) else fsum_mean(dev**2)
    return mean, math.sqrt(var / x.size)


def estimate_moments(batch: RecordBatch) -> MomentEstimate:
    if batch.M < 2:
        raise InsufficientDataError(f"need at least 2 records to estimate moments, got {batch.M}")
    mean_s, se_mean_s = _mean_and_stderr(batch.a_s)
    mean_i, se_mean_i = _mean_and_stderr(batch.a_i)
    d_s = batch.a_s - mean_s
    d_i = batch.a_i - mean_i
    occ_s, se_s = _mean_and_stderr(np.abs(d_s) ** 2)
    occ_i, se_i = _mean_and_stderr(np.abs(d_i) ** 2)
    prod = d_s * d_i
    c_re, se_c_re = _mean_and_stderr(prod.real)
    c_im, se_c_im = _mean_and_stderr(prod.imag)
    pow_s, se_pow_s = _mean_and_stderr(np.abs(batch.a_s) ** 2)
    pow_i, se_pow_i = _mean_and_stderr(np.abs(batch.a_i) ** 2)
    return MomentEstimate(
        n_s=occ_s - batch.vac_s,
        n_i=occ_i - batch.vac_i,
        c=complex(c_re, c_im),
        mean_s=complex(mean_s),
        mean_i=complex(mean_i),
        power_s=pow_s,
        power_i=pow_i,
        stderr_n_s=se_s,
        stderr_n_i=se_i,
        stderr_c_re=se_c_re,
        stderr_c_im=se_c_im,
        stderr_mean_s=se_mean_s,
        stderr_mean_i=se_mean_i,
        stderr_power_s=se_pow_s,
        stderr_power_i=se_pow_i,
        M=batch.M,
        vac_s=batch.vac_s,
        vac_i=batch.vac_i,
    )


def concat_batches(*batches: RecordBatch) -> RecordBatch:
    first = batches[0]
    for b in batches[1:]:
        if (b.units, b.hypothesis, b.vac_s, b.vac_i) != (first.units, first.hypothesis, first.vac_s, first.vac_i):
            raise ValueError("cannot pool batches with different units, hypotheses or vacuum units")
    return RecordBatch(
        np.concatenate([b.a_s for b in batches]),
        np.concatenate([b.a_i for b in batches]),
        first.units,
        first.hypothesis,
        first.seed if all(b.seed == first.seed for b in batches) else None,
        first.vac_s,
        first.vac_i,
    )


def rotate_batch(batch: RecordBatch, theta: float) -> RecordBatch:
    """Rotate the idler amplitudes by ``theta`` radians."""
    return RecordBatch(
        batch.a_s,
        batch.a_i * np.exp(1j * theta),
        batch.units,
        batch.hypothesis,
        batch.seed,
        batch.vac_s,
        batch.vac_i,
    )


_HYP_CODE = {None: -1, Hypothesis.ABSENT: 0, Hypothesis.PRESENT: 1}
_CODE_HYP = {v: k for k, v in _HYP_CODE.items()}


def write_raw(path, raw: RawRecordStream) -> None:
    band = raw.band
    header = _HEADER.pack(
        _MAGIC,
        2,
        band.record_len,
        raw.M,
        band.sample_rate,
        band.if_freq,
        band.bandwidth_B,
        band.impedance_R,
        band.omega_s,
        band.omega_i,
        raw.vac[0],
        raw.vac[1],
        _HYP_CODE[raw.hypothesis],
        0,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(raw.samples.astype("<f4").tobytes())


def read_raw(path) -> RawRecordStream:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise ConfigError(f"{path}: truncated header")
    (magic, n_ch, L, M, fs, f_if, bw, R, w_s, w_i, vac_s, vac_i, hyp, _) = _HEADER.unpack(head)
    if magic != _MAGIC:
        raise ConfigError(f"{path}: not a raw record file (bad magic {magic!r})")
    if n_ch != 2:
        raise ConfigError(f"{path}: expected 2 channels, found {n_ch}")
    band = BandParams(
        omega_s=w_s, omega_i=w_i, bandwidth_B=bw, impedance_R=R, sample_rate=fs, if_freq=f_if, record_len=L
    )
    data = np.fromfile(path, dtype="<f4", offset=_HEADER.size)
    if data.size != n_ch * M * L:
        raise ConfigError(f"{path}: expected {n_ch * M * L} samples, found {data.size}")
    return RawRecordStream(data.reshape(n_ch, M, L).astype(np.float64), band, _CODE_HYP.get(hyp), (vac_s, vac_i))


def write_batch_csv(path, batch: RecordBatch) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["idx", "re_aS", "im_aS", "re_aI", "im_aI"])
        for k, (s, i) in enumerate(zip(batch.a_s.tolist(), batch.a_i.tolist())):
            writer.writerow([k, repr(s.real), repr(s.imag), repr(i.real), repr(i.imag)])


def read_batch_csv(path, **meta) -> RecordBatch:
    """Read a batch CSV; ``meta`` supplies units, hypothesis and vacuum units."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    order = np.argsort(data[:, 0], kind="stable")
    data = data[order]
    return RecordBatch(data[:, 1] + 1j * data[:, 2], data[:, 3] + 1j * data[:, 4], **meta)
