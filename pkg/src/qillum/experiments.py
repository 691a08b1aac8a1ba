"""Scenario composition and parameter sweeps.

A sweep point fixes the signal photon number and the round-trip transmissivity,
builds each source's moments, pushes them through the chain under both
hypotheses and evaluates every applicable receiver, both in closed form and
(optionally) from sampled records.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .chain import ChainParams, detect, passive_snr
from .constants import (
    BandParams,
    ConfigError,
    DomainError,
    Hypothesis,
    SecondMoments,
    apply_phase_rotation,
    bose_occupation,
    db,
    duan_delta,
    from_db,
    moments_classical,
    moments_coherent,
    moments_from_tmsv,
    optimal_rotation,
)
from .dsp import RecordBatch, demodulate_records, sample_records, synthesize_if
from .receivers import (
    Receiver,
    SnrReport,
    error_probability,
    heterodyne_snr,
    heterodyne_snr_analytic,
    homodyne_snr,
    homodyne_snr_analytic,
    pc_snr_analytic,
    pc_snr_records,
)

__all__ = [
    "SweepVariable",
    "Source",
    "PurityModel",
    "DistanceModel",
    "SweepConfig",
    "SweepRow",
    "SweepResult",
    "PointError",
    "distance_to_eta",
    "fit_purity_model",
    "run_point",
    "run_sweep",
    "load_config",
    "config_from_mapping",
    "CONFIG_KEYS",
    "CSV_COLUMNS",
    "write_outputs",
    "dump_json",
]

log = logging.getLogger(__name__)


class SweepVariable(str, enum.Enum):
    N_S = "n_s"
    ETA = "eta"
    DISTANCE = "distance"
    TEMPERATURE = "temperature"


class Source(str, enum.Enum):
    TMSV = "tmsv"
    CLASSICAL = "classical"
    COHERENT = "coherent"


SOURCE_RECEIVERS = {
    Source.TMSV: (Receiver.PC_RAW, Receiver.PC_CALIBRATED),
    Source.CLASSICAL: (Receiver.PC_RAW, Receiver.PC_CALIBRATED),
    Source.COHERENT: (Receiver.HOMODYNE, Receiver.HETERODYNE),
}


class PointError(RuntimeError):
    """A sweep point failed; carries the point index and sweep value."""

    def __init__(self, index: int, value: float, cause: BaseException):
        super().__init__(f"point {index} ({value!r}): {type(cause).__name__}: {cause}")
        self.index = index
        self.value = value
        self.cause = cause


# --- purity and distance models ----------------------------------------------


@dataclass(frozen=True)
class PurityModel:
    """Entanglement purity of the TMSV source as a function of ``N_S``.

    ``constant``: fixed ``value``.  ``table``: linear interpolation of
    ``(n_s, purity)`` pairs, held flat outside the table.  ``inverse_linear``:
    ``p0 / (1 + beta N_S)`` clipped to [0, 1].
    """

    kind: str = "constant"
    value: float = 1.0
    table: tuple[tuple[float, float], ...] = ()
    p0: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "table", "inverse_linear"):
            raise ConfigError(f"source.purity must be constant, table, inverse_linear or fit, got {self.kind!r}")
        if self.kind == "constant" and not 0.0 <= self.value <= 1.0:
            raise ConfigError(f"source.purity_value must lie in [0, 1], got {self.value}")
        if self.kind == "table":
            if len(self.table) < 1:
                raise ConfigError("source.purity_table needs at least one (n_s, purity) pair")
            ns = [n for n, _ in self.table]
            if any(b <= a for a, b in zip(ns, ns[1:])):
                raise ConfigError("source.purity_table must be strictly increasing in n_s")
            if not all(0.0 <= p <= 1.0 for _, p in self.table):
                raise ConfigError("source.purity_table purities must lie in [0, 1]")

    def __call__(self, n_s: float) -> float:
        if self.kind == "constant":
            return self.value
        if self.kind == "table":
            ns, ps = zip(*self.table)
            return float(np.interp(n_s, ns, ps))
        return float(min(max(self.p0 / (1.0 + self.beta * n_s), 0.0), 1.0))

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"purity": "constant", "purity_value": self.value}
        if self.kind == "table":
            return {"purity": "table", "purity_table": [list(r) for r in self.table]}
        return {"purity": "inverse_linear", "purity_p0": self.p0, "purity_beta": self.beta}


@dataclass(frozen=True)
class DistanceModel:
    kind: str = "power_law"
    eta_ref: float = 1.0
    d_ref: float = 1.0
    exponent: float = 2.0
    table: tuple[tuple[float, float], ...] = ()  # (distance m, eta linear)

    def __post_init__(self):
        if self.kind not in ("power_law", "table"):
            raise ConfigError(f"distance_model.kind must be power_law or table, got {self.kind!r}")
        if self.kind == "power_law":
            if not 0.0 < self.eta_ref <= 1.0:
                raise ConfigError(f"distance_model.eta_ref must lie in (0, 1], got {self.eta_ref}")
            if not self.d_ref > 0:
                raise ConfigError(f"distance_model.d_ref_m must be positive, got {self.d_ref}")
        else:
            if len(self.table) < 2:
                raise ConfigError("distance_model.table needs at least two (d, eta) pairs")
            ds = [d for d, _ in self.table]
            if ds[0] <= 0 or any(b <= a for a, b in zip(ds, ds[1:])):
                raise ConfigError("distance_model.table distances must be positive and strictly increasing")
            if not all(0.0 < e <= 1.0 for _, e in self.table):
                raise ConfigError("distance_model.table eta values must lie in (0, 1]")


def distance_to_eta(model: DistanceModel, d: float) -> float:
    """Round-trip transmissivity of an object at distance ``d`` metres."""
    if model.kind == "power_law":
        if not d > 0:
            raise DomainError(f"distance must be positive, got {d}")
        return min(model.eta_ref * (model.d_ref / d) ** model.exponent, 1.0)
    ds = [r[0] for r in model.table]
    if not ds[0] <= d <= ds[-1]:
        raise DomainError(f"distance {d} m lies outside the table range [{ds[0]}, {ds[-1]}] m")
    eta_db = np.interp(d, ds, [float(db(r[1])) for r in model.table])
    return from_db(float(eta_db))


def fit_purity_model(
    chain: ChainParams,
    n_boundary: float = 4.5,
    n_ref: float = 0.2,
    advantage_db: float = 1.0,
    eta: float = 1.0,
) -> PurityModel:
    """Two-parameter ``p0 / (1 + beta N)`` purity model.

    Anchored so the Duan quantity equals 1 at ``n_boundary`` and the calibrated
    QI advantage over homodyne is ``advantage_db`` at ``n_ref``.
    """
    p_boundary = math.sqrt(n_boundary / (n_boundary + 1.0))

    def model(p0: float) -> PurityModel:
        return PurityModel("inverse_linear", p0=p0, beta=(p0 / p_boundary - 1.0) / n_boundary)

    hom_db = homodyne_snr_analytic(moments_coherent(n_ref), chain, eta).snr_db

    def gap(p0: float) -> float:
        p = model(p0)(n_ref)
        qi = pc_snr_analytic(moments_from_tmsv(n_ref, p), chain, eta, calibrated=True).snr_db
        return qi - hom_db - advantage_db

    lo, hi = 0.05, 1.0
    if gap(lo) * gap(hi) > 0:
        raise ConfigError(
            f"no purity reaches a {advantage_db} dB advantage at N_S={n_ref}; adjust the fit anchors"
        )
    return model(brentq(gap, lo, hi, xtol=1e-14))


# --- configuration ------------------------------------------------------------


@dataclass(frozen=True)
class SweepConfig:
    variable: SweepVariable
    grid: tuple[float, ...]
    sources: tuple[Source, ...] = (Source.TMSV, Source.CLASSICAL, Source.COHERENT)
    receivers: tuple[Receiver, ...] = tuple(Receiver)
    M: int = 380_000
    M_coherent: int = 192_000
    repetitions: int = 3
    seed: int = 0
    chain: ChainParams = field(default_factory=ChainParams.reference)
    band: BandParams = field(default_factory=BandParams.reference)
    purity: PurityModel = field(default_factory=PurityModel)
    distance: DistanceModel = field(default_factory=DistanceModel)
    n_s: float = 0.5
    eta: float = 1.0
    monte_carlo: bool = True
    pipeline: str = "direct"
    workers: int = 1
    name: str = "sweep"

    def __post_init__(self):
        object.__setattr__(self, "variable", SweepVariable(self.variable))
        object.__setattr__(self, "grid", tuple(float(x) for x in self.grid))
        object.__setattr__(self, "sources", tuple(Source(s) for s in self.sources))
        object.__setattr__(self, "receivers", tuple(Receiver(r) for r in self.receivers))
        if not self.grid:
            raise ConfigError("sweep.grid must not be empty")
        if any(b < a for a, b in zip(self.grid, self.grid[1:])):
            raise ConfigError("sweep.grid must be sorted in increasing order")
        if not self.sources:
            raise ConfigError("sweep.sources must not be empty")
        if self.M < 1000 or self.M_coherent < 1000:
            raise ConfigError(f"sweep.M and sweep.M_coherent must be >= 1000, got {self.M}, {self.M_coherent}")
        if self.repetitions < 1:
            raise ConfigError(f"sweep.repetitions must be >= 1, got {self.repetitions}")
        if self.seed < 0:
            raise ConfigError(f"sweep.seed must be non-negative, got {self.seed}")
        if self.workers < 1:
            raise ConfigError(f"sweep.workers must be >= 1, got {self.workers}")
        if self.pipeline not in ("direct", "if"):
            raise ConfigError(f"sweep.pipeline must be 'direct' or 'if', got {self.pipeline!r}")

    def with_(self, **changes) -> "SweepConfig":
        return replace(self, **changes)

    def point_params(self, x: float) -> tuple[float, float, ChainParams]:
        """``(N_S, eta, chain)`` at sweep value ``x``."""
        if self.variable is SweepVariable.N_S:
            return x, self.eta, self.chain
        if self.variable is SweepVariable.ETA:
            return self.n_s, x, self.chain
        if self.variable is SweepVariable.DISTANCE:
            return self.n_s, distance_to_eta(self.distance, x), self.chain
        if not x > 0:
            raise DomainError(f"environment temperature must be positive, got {x} K")
        return self.n_s, self.eta, self.chain.with_(n_env=bose_occupation(self.band.omega_s, x))


# Documented configuration keys: section -> key -> (type, unit/meaning).
CONFIG_KEYS: dict[str, dict[str, tuple[str, str]]] = {
    "sweep": {
        "variable": ("str", "n_s | eta | distance | temperature (required)"),
        "grid": ("list or table", "sweep values; a table {start, stop, num, spacing=linear|log} is expanded (required)"),
        "grid_units": ("str", "linear | db; db converts eta grids from dB"),
        "sources": ("list[str]", "subset of tmsv, classical, coherent"),
        "receivers": ("list[str]", "subset of pc_raw, pc_calibrated, homodyne, heterodyne, passive"),
        "M": ("int", "records per hypothesis per repetition for tmsv/classical (>= 1000)"),
        "M_coherent": ("int", "records per hypothesis per repetition for coherent (>= 1000)"),
        "repetitions": ("int", "independent Monte Carlo repetitions (>= 1)"),
        "seed": ("int", "master seed"),
        "n_s": ("float", "signal photons per mode when N_S is not swept"),
        "eta": ("float", "round-trip transmissivity (linear) when eta is not swept"),
        "eta_db": ("float", "same as eta, in dB"),
        "monte_carlo": ("bool", "sample records in addition to closed forms"),
        "pipeline": ("str", "direct | if (render and demodulate IF records)"),
        "workers": ("int", "worker processes; output does not depend on it"),
    },
    "source": {
        "purity": ("str", "constant | table | inverse_linear | fit"),
        "purity_value": ("float", "constant purity in [0, 1]"),
        "purity_table": ("list[[float, float]]", "(N_S, purity) pairs"),
        "purity_p0": ("float", "inverse_linear numerator"),
        "purity_beta": ("float", "inverse_linear slope per photon"),
        "fit_n_boundary": ("float", "fit: N_S where the Duan quantity reaches 1 (default 4.5)"),
        "fit_n_ref": ("float", "fit: N_S of the advantage anchor (default 0.2)"),
        "fit_advantage_db": ("float", "fit: calibrated QI over homodyne at fit_n_ref, dB (default 1)"),
    },
    "chain": {
        "g_s_amp_db": ("float", "signal pre-amplifier gain, dB (also g_s_amp_lin / g_s_amp linear)"),
        "g_s_det_db": ("float", "signal post-detection gain, dB"),
        "g_i_total_db": ("float", "idler total gain, dB"),
        "n_amp_s": ("float", "pre-amplifier noise quanta (derived from gain if omitted)"),
        "n_det_s": ("float", "post-detection noise quanta"),
        "n_add_i": ("float", "idler added noise quanta, source referred"),
        "n_env": ("float", "environment noise quanta at the signal frequency"),
        "g_s_db_err": ("float", "1-sigma signal gain uncertainty, dB"),
        "g_i_db_err": ("float", "1-sigma idler gain uncertainty, dB"),
    },
    "band": {
        "signal_freq_ghz": ("float", "signal frequency, GHz"),
        "idler_freq_ghz": ("float", "idler frequency, GHz"),
        "sample_rate_hz": ("float", "digitizer rate, Hz"),
        "record_len": ("int", "samples per record; bandwidth = sample_rate_hz / record_len"),
        "if_freq_hz": ("float", "intermediate frequency, Hz"),
        "impedance_ohm": ("float", "line impedance, ohm"),
    },
    "distance_model": {
        "kind": ("str", "power_law | table"),
        "eta_ref": ("float", "power_law: transmissivity at d_ref_m"),
        "d_ref_m": ("float", "power_law: reference distance, m"),
        "exponent": ("float", "power_law: loss exponent"),
        "table": ("list[[float, float]]", "table: (distance m, eta dB) pairs, dB-linear interpolation"),
    },
}

_REQUIRED = (("sweep", "variable"), ("sweep", "grid"))


def _check_keys(section: str, data: Mapping, allowed) -> None:
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown key {section}.{key}")


def _expand_grid(spec: Any) -> list[float]:
    if isinstance(spec, Mapping):
        try:
            start, stop, num = float(spec["start"]), float(spec["stop"]), int(spec["num"])
        except KeyError as exc:
            raise ConfigError(f"missing required key sweep.grid.{exc.args[0]}") from None
        spacing = spec.get("spacing", "linear")
        if spacing == "log":
            return list(np.geomspace(start, stop, num))
        if spacing == "linear":
            return list(np.linspace(start, stop, num))
        raise ConfigError(f"sweep.grid.spacing must be linear or log, got {spacing!r}")
    if isinstance(spec, (list, tuple)):
        return [float(x) for x in spec]
    return [float(spec)]


def _band_from(data: Mapping) -> BandParams:
    _check_keys("band", data, CONFIG_KEYS["band"])
    base = BandParams.reference()
    fs = float(data.get("sample_rate_hz", base.sample_rate))
    L = int(data.get("record_len", base.record_len))
    return BandParams(
        omega_s=2 * math.pi * 1e9 * float(data.get("signal_freq_ghz", base.omega_s / (2e9 * math.pi))),
        omega_i=2 * math.pi * 1e9 * float(data.get("idler_freq_ghz", base.omega_i / (2e9 * math.pi))),
        bandwidth_B=fs / L,
        impedance_R=float(data.get("impedance_ohm", base.impedance_R)),
        sample_rate=fs,
        if_freq=float(data.get("if_freq_hz", base.if_freq)),
        record_len=L,
    )


def _purity_from(data: Mapping, chain: ChainParams, eta: float) -> PurityModel:
    _check_keys("source", data, CONFIG_KEYS["source"])
    kind = data.get("purity", "constant")
    if kind == "constant":
        return PurityModel("constant", value=float(data.get("purity_value", 1.0)))
    if kind == "table":
        if "purity_table" not in data:
            raise ConfigError("missing required key source.purity_table")
        return PurityModel("table", table=tuple((float(n), float(p)) for n, p in data["purity_table"]))
    if kind == "inverse_linear":
        for key in ("purity_p0", "purity_beta"):
            if key not in data:
                raise ConfigError(f"missing required key source.{key}")
        return PurityModel("inverse_linear", p0=float(data["purity_p0"]), beta=float(data["purity_beta"]))
    if kind == "fit":
        return fit_purity_model(
            chain,
            n_boundary=float(data.get("fit_n_boundary", 4.5)),
            n_ref=float(data.get("fit_n_ref", 0.2)),
            advantage_db=float(data.get("fit_advantage_db", 1.0)),
            eta=eta,
        )
    raise ConfigError(f"source.purity must be constant, table, inverse_linear or fit, got {kind!r}")


def _distance_from(data: Mapping) -> DistanceModel:
    _check_keys("distance_model", data, CONFIG_KEYS["distance_model"])
    kind = data.get("kind", "power_law")
    if kind == "table":
        if "table" not in data:
            raise ConfigError("missing required key distance_model.table")
        return DistanceModel("table", table=tuple((float(d), from_db(float(e))) for d, e in data["table"]))
    return DistanceModel(
        kind,
        eta_ref=float(data.get("eta_ref", 1.0)),
        d_ref=float(data.get("d_ref_m", 1.0)),
        exponent=float(data.get("exponent", 2.0)),
    )


def config_from_mapping(doc: Mapping, name: str = "sweep", **overrides) -> SweepConfig:
    """Build a :class:`SweepConfig` from a parsed config document.

    ``overrides`` (e.g. ``seed``, ``workers``) take precedence over the document.
    """
    _check_keys("config", doc, CONFIG_KEYS)
    for section, key in _REQUIRED:
        if key not in doc.get(section, {}):
            raise ConfigError(f"missing required key {section}.{key}")
    sweep = dict(doc["sweep"])
    _check_keys("sweep", sweep, CONFIG_KEYS["sweep"])
    try:
        chain = ChainParams.from_mapping(doc.get("chain", {}))
        band = _band_from(doc.get("band", {}))
        grid = _expand_grid(sweep["grid"])
        if sweep.get("grid_units", "linear") == "db":
            grid = [from_db(x) for x in grid]
        eta = from_db(float(sweep["eta_db"])) if "eta_db" in sweep else float(sweep.get("eta", 1.0))
        kwargs = dict(
            variable=sweep["variable"],
            grid=grid,
            chain=chain,
            band=band,
            purity=_purity_from(doc.get("source", {}), chain, eta),
            distance=_distance_from(doc.get("distance_model", {})),
            n_s=float(sweep.get("n_s", 0.5)),
            eta=eta,
            name=name,
        )
        for key, cast in (
            ("sources", tuple),
            ("receivers", tuple),
            ("M", int),
            ("M_coherent", int),
            ("repetitions", int),
            ("seed", int),
            ("monte_carlo", bool),
            ("pipeline", str),
            ("workers", int),
        ):
            if key in sweep:
                kwargs[key] = cast(sweep[key])
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return SweepConfig(**kwargs)
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load_config(path, **overrides) -> SweepConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_mapping(doc, name=path.stem, **overrides)


# --- evaluation ---------------------------------------------------------------

CSV_COLUMNS = (
    "point",
    "x",
    "source",
    "receiver",
    "N_S",
    "eta",
    "snr_db",
    "stderr_db",
    "sd_db",
    "snr_db_analytic",
    "delta",
    "error_probability",
    "M",
)


@dataclass(frozen=True)
class SweepRow:
    point: int
    x: float
    source: str
    receiver: str
    n_s: float
    eta: float
    snr_db: float
    stderr_db: float
    sd_db: float
    snr_db_analytic: float
    delta: float
    error_probability: float
    M: int

    def as_tuple(self) -> tuple:
        return (
            self.point,
            self.x,
            self.source,
            self.receiver,
            self.n_s,
            self.eta,
            self.snr_db,
            self.stderr_db,
            self.sd_db,
            self.snr_db_analytic,
            self.delta,
            self.error_probability,
            self.M,
        )


@dataclass
class SweepResult:
    config: SweepConfig
    rows: list[SweepRow]
    complete: bool = True
    error: str | None = None

    def select(self, source: str | None = None, receiver: str | None = None) -> list[SweepRow]:
        return [
            r
            for r in self.rows
            if (source is None or r.source == source) and (receiver is None or r.receiver == receiver)
        ]

    def series(self, source: str, receiver: str, column: str = "snr_db") -> tuple[np.ndarray, np.ndarray]:
        rows = self.select(source, receiver)
        return np.array([r.x for r in rows]), np.array([getattr(r, column) for r in rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            writer.writerow([_fmt(v) for v in row.as_tuple()])
        if not self.complete:
            buf.write(f"# incomplete: {self.error}\n")
        return buf.getvalue()

    def plot_csv(self) -> str:
        """Wide table: sweep value plus one ``snr_db`` column per series."""
        keys = []
        for r in self.rows:
            k = f"{r.source}/{r.receiver}"
            if k not in keys:
                keys.append(k)
        xs = sorted({(r.point, r.x) for r in self.rows})
        table = {(r.point, f"{r.source}/{r.receiver}"): r.snr_db for r in self.rows}
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([self.config.variable.value] + keys)
        for point, x in xs:
            writer.writerow([_fmt(x)] + [_fmt(table.get((point, k), math.nan)) for k in keys])
        return buf.getvalue()

    def summary(self) -> dict:
        return summarize(self)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _seed(master: int, *key: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=key).generate_state(1, dtype=np.uint64)[0] >> 1)


_IF_CHUNK = 4096


def _through_if(batch: RecordBatch, band: BandParams) -> RecordBatch:
    """Render records as IF tones and demodulate them again, in chunks."""
    parts_s, parts_i = [], []
    for start in range(0, batch.M, _IF_CHUNK):
        sl = slice(start, start + _IF_CHUNK)
        chunk = RecordBatch(batch.a_s[sl], batch.a_i[sl], batch.units, batch.hypothesis, batch.seed, batch.vac_s, batch.vac_i)
        out = demodulate_records(synthesize_if(chunk, band), units=batch.units)
        parts_s.append(out.a_s)
        parts_i.append(out.a_i)
    return RecordBatch(
        np.concatenate(parts_s),
        np.concatenate(parts_i),
        batch.units,
        batch.hypothesis,
        batch.seed,
        batch.vac_s,
        batch.vac_i,
    )


def _source_moments(cfg: SweepConfig, source: Source, n_s: float) -> SecondMoments:
    if source is Source.TMSV:
        return moments_from_tmsv(n_s, cfg.purity(n_s))
    if source is Source.CLASSICAL:
        return moments_classical(n_s)
    return moments_coherent(n_s)


def _analytic(receiver: Receiver, m: SecondMoments, chain: ChainParams, eta: float) -> SnrReport:
    if receiver is Receiver.PC_RAW:
        return pc_snr_analytic(m, chain, eta, calibrated=False)
    if receiver is Receiver.PC_CALIBRATED:
        return pc_snr_analytic(m, chain, eta, calibrated=True)
    if receiver is Receiver.HOMODYNE:
        return homodyne_snr_analytic(m, chain, eta)
    return heterodyne_snr_analytic(m, chain, eta)


def _sample_pair(cfg, m, chain, eta, M, seeds) -> tuple[RecordBatch, RecordBatch]:
    out = []
    for hyp, seed in zip((Hypothesis.ABSENT, Hypothesis.PRESENT), seeds):
        batch = sample_records(detect(m, chain, eta, hyp), M, seed, hypothesis=hyp)
        if cfg.pipeline == "if":
            batch = _through_if(batch, cfg.band)
        out.append(batch)
    return out[0], out[1]


def _mc_reports(cfg, source, m, chain, eta, M, index) -> dict[Receiver, list[SnrReport]]:
    receivers = [r for r in SOURCE_RECEIVERS[source] if r in cfg.receivers]
    reports: dict[Receiver, list[SnrReport]] = {r: [] for r in receivers}
    src_idx = list(Source).index(source)
    for rep in range(cfg.repetitions):
        seeds = (_seed(cfg.seed, index, src_idx, rep, 0), _seed(cfg.seed, index, src_idx, rep, 1))
        b0, b1 = _sample_pair(cfg, m, chain, eta, M, seeds)
        for r in receivers:
            if r is Receiver.PC_RAW:
                reports[r].append(pc_snr_records(b0, b1))
            elif r is Receiver.PC_CALIBRATED:
                reports[r].append(pc_snr_records(b0, b1, calibrated=True, chain=chain))
            elif r is Receiver.HOMODYNE:
                reports[r].append(homodyne_snr(b0, b1, phase=float(np.angle(m.mean_s))))
            else:
                reports[r].append(heterodyne_snr(b0, b1))
    return reports


def _combine(reports: Sequence[SnrReport]) -> tuple[float, float, float]:
    """Mean SNR in dB, its standard error in dB, and the spread across repetitions in dB."""
    snrs = np.array([r.snr for r in reports])
    mean = float(np.mean(snrs))
    se = math.sqrt(math.fsum(r.stderr**2 for r in reports)) / len(reports)
    se_db = 10.0 / math.log(10.0) * se / mean if mean > 0 else math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        rep_db = 10.0 * np.log10(snrs)
    sd_db = float(np.std(rep_db, ddof=1)) if len(reports) > 1 else 0.0
    return float(db(mean)), se_db, sd_db


def _point_rows(cfg: SweepConfig, index: int, x: float) -> list[SweepRow]:
    n_s, eta, chain = cfg.point_params(x)
    rows = []
    for source in cfg.sources:
        m = _source_moments(cfg, source, n_s)
        m = apply_phase_rotation(m, optimal_rotation(m).angle)
        M = cfg.M_coherent if source is Source.COHERENT else cfg.M
        delta = duan_delta(m)
        mc = _mc_reports(cfg, source, m, chain, eta, M, index) if cfg.monte_carlo else {}
        for receiver in SOURCE_RECEIVERS[source]:
            if receiver not in cfg.receivers:
                continue
            exact = _analytic(receiver, m, chain, eta)
            if receiver in mc:
                snr_db, se_db, sd_db = _combine(mc[receiver])
                snr = float(np.mean([r.snr for r in mc[receiver]]))
            else:
                snr_db, se_db, sd_db, snr = exact.snr_db, 0.0, 0.0, exact.snr
            rows.append(
                SweepRow(
                    index, x, source.value, receiver.value, n_s, eta, snr_db, se_db, sd_db,
                    exact.snr_db, delta, error_probability(max(snr, 0.0), M), M,
                )
            )
    if Receiver.PASSIVE in cfg.receivers:
        snr = abs(passive_snr(chain, eta))
        rows.append(
            SweepRow(
                index, x, "none", Receiver.PASSIVE.value, n_s, eta, float(db(snr)), 0.0, 0.0,
                float(db(snr)), math.nan, error_probability(snr, cfg.M), cfg.M,
            )
        )
    return rows


def run_point(cfg: SweepConfig, x: float, index: int = 0) -> list[SweepRow]:
    """All rows for one sweep value; errors carry the point context."""
    try:
        return _point_rows(cfg, index, x)
    except (DomainError, ConfigError, ArithmeticError, ValueError) as exc:
        raise PointError(index, x, exc) from exc


def _run_indexed(args) -> list[SweepRow]:
    cfg, index, x = args
    return run_point(cfg, x, index)


def run_sweep(cfg: SweepConfig) -> SweepResult:
    """Evaluate every grid point; rows come back in grid order for any worker count.

    On a failing point the rows of all earlier points are kept and the result
    is marked incomplete.
    """
    tasks = [(cfg, i, x) for i, x in enumerate(cfg.grid)]
    rows: list[SweepRow] = []
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(tasks))) as pool:
            futures = [pool.submit(_run_indexed, t) for t in tasks]
            for fut in futures:
                try:
                    rows.extend(fut.result())
                except PointError as exc:
                    for other in futures:
                        other.cancel()
                    log.error("sweep aborted: %s", exc)
                    return SweepResult(cfg, rows, complete=False, error=str(exc))
    else:
        for t in tasks:
            try:
                rows.extend(_run_indexed(t))
            except PointError as exc:
                log.error("sweep aborted: %s", exc)
                return SweepResult(cfg, rows, complete=False, error=str(exc))
            log.info("point %d/%d done", t[1] + 1, len(tasks))
    return SweepResult(cfg, rows)


# --- summary ------------------------------------------------------------------

_COMPARISONS = (
    ("tmsv/pc_calibrated", "coherent/heterodyne"),
    ("tmsv/pc_calibrated", "coherent/homodyne"),
    ("tmsv/pc_calibrated", "classical/pc_calibrated"),
    ("tmsv/pc_raw", "coherent/homodyne"),
)


def _crossings(x: np.ndarray, y: np.ndarray) -> list[float]:
    """Sweep values where ``y`` changes sign (linear interpolation)."""
    out = []
    for j in range(len(x) - 1):
        a, b = y[j], y[j + 1]
        if not (math.isfinite(a) and math.isfinite(b)):
            continue
        if a == 0.0:
            out.append(float(x[j]))
        elif a * b < 0:
            out.append(float(x[j] + (x[j + 1] - x[j]) * a / (a - b)))
    if len(y) and y[-1] == 0.0:
        out.append(float(x[-1]))
    return out


def summarize(result: SweepResult) -> dict:
    by_key: dict[str, dict[int, SweepRow]] = {}
    for r in result.rows:
        by_key.setdefault(f"{r.source}/{r.receiver}", {})[r.point] = r
    comparisons = []
    for a, b in _COMPARISONS:
        if a not in by_key or b not in by_key:
            continue
        points = sorted(set(by_key[a]) & set(by_key[b]))
        if not points:
            continue
        x = np.array([by_key[a][p].x for p in points])
        entry = {"a": a, "b": b}
        for column in ("snr_db", "snr_db_analytic"):
            gap = np.array([getattr(by_key[a][p], column) - getattr(by_key[b][p], column) for p in points])
            finite = np.isfinite(gap)
            best = int(np.argmax(np.where(finite, gap, -np.inf))) if finite.any() else None
            entry[column] = {
                "crossings": _crossings(x, gap),
                "peak_advantage_db": float(gap[best]) if best is not None else None,
                "peak_at": float(x[best]) if best is not None else None,
            }
        comparisons.append(entry)
    delta_crossings = []
    if "tmsv/pc_calibrated" in by_key or "tmsv/pc_raw" in by_key:
        rows = by_key.get("tmsv/pc_calibrated") or by_key["tmsv/pc_raw"]
        points = sorted(rows)
        delta_crossings = _crossings(
            np.array([rows[p].x for p in points]), np.array([rows[p].delta - 1.0 for p in points])
        )
    return {
        "name": result.config.name,
        "variable": result.config.variable.value,
        "seed": result.config.seed,
        "complete": result.complete,
        "error": result.error,
        "purity": result.config.purity.to_dict(),
        "delta_crossings": delta_crossings,
        "comparisons": comparisons,
    }


def write_outputs(result: SweepResult, out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = result.config.name
    paths = {
        "csv": out_dir / f"{name}.csv",
        "summary": out_dir / f"{name}_summary.json",
        "plot": out_dir / f"{name}_plot.csv",
    }
    paths["csv"].write_text(result.to_csv())
    paths["summary"].write_text(dump_json(summarize(result)))
    paths["plot"].write_text(result.plot_csv())
    return paths


def json_safe(obj):
    """Replace non-finite floats by ``None`` and numpy scalars by Python ones."""
    if isinstance(obj, Mapping):
        return {str(k): json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dump_json(obj) -> str:
    return json.dumps(json_safe(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"
