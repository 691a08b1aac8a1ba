"""``qillum`` command-line interface.

Exit codes: 0 success, 1 selftest failure, 2 configuration error, 3 numerical
failure.  The default output directory is ``$QILLUM_OUT`` (else ``.``).
"""

from __future__ import annotations

import argparse
import importlib.resources
import logging
import math
import os
import sys
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from . import experiments, selftest
from .calibration import FitError, fit_gain_noise, read_points_csv
from .constants import BandParams, ConfigError, DomainError
from .dsp import InsufficientDataError, demodulate_records, estimate_moments, read_raw, write_batch_csv
from .experiments import CONFIG_KEYS, PointError, dump_json

log = logging.getLogger("qillum")

EXIT_OK, EXIT_SELFTEST, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
RECIPES = ("fig2a", "fig2b", "fig3a", "fig3b")


def _keys_help() -> str:
    lines = ["config keys (TOML sections):"]
    for section, keys in CONFIG_KEYS.items():
        lines.append(f"  [{section}]")
        for key, (typ, meaning) in keys.items():
            lines.append(f"    {key} ({typ}): {meaning}")
    return "\n".join(lines)


def _default_out() -> str:
    return os.environ.get("QILLUM_OUT", ".")


def _resolve_config(args) -> Path:
    if args.recipe:
        return Path(str(importlib.resources.files("qillum") / "recipes" / f"{args.recipe}.toml"))
    if not args.config:
        raise ConfigError("missing required key: config file (--config or --recipe)")
    return Path(args.config)


def _overrides(args) -> dict:
    out = {"seed": args.seed, "workers": args.workers, "M": args.M, "repetitions": args.repetitions}
    if args.monte_carlo is not None:
        out["monte_carlo"] = args.monte_carlo
    return out


def cmd_sweep(args) -> int:
    cfg = experiments.load_config(_resolve_config(args), **_overrides(args))
    result = experiments.run_sweep(cfg)
    paths = experiments.write_outputs(result, args.out)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    if not result.complete:
        print(f"error: sweep incomplete: {result.error}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_point(args) -> int:
    cfg = experiments.load_config(_resolve_config(args), **_overrides(args))
    rows = experiments.run_point(cfg, args.value)
    result = experiments.SweepResult(cfg.with_(grid=(args.value,)), rows)
    text = result.to_csv()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{cfg.name}_point.csv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def _band_from_arg(spec: str) -> BandParams:
    if spec == "default":
        return BandParams.reference()
    path = Path(spec)
    if not path.is_file():
        raise ConfigError(f"band file {path} does not exist (use 'default' for the built-in band)")
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return experiments._band_from(doc.get("band", doc))


def cmd_calibrate(args) -> int:
    band = _band_from_arg(args.band)
    omega = 2 * math.pi * 1e9 * args.omega_ghz if args.omega_ghz else band.omega(args.channel[0])
    points = read_points_csv(args.points)
    fit = fit_gain_noise(points, band, omega, weighted=args.weighted)
    report = dump_json({"channel": args.channel, "omega_rad_s": omega, "points": len(points), **fit.to_dict()})
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "calibration.json").write_text(report)
    sys.stdout.write(report)
    return EXIT_OK


def cmd_demod(args) -> int:
    raw = read_raw(args.raw)
    gain = [10 ** (g / 10) for g in args.gain_db]
    omega = [2 * math.pi * 1e9 * w for w in args.omega_ghz] if args.omega_ghz else None
    batch = demodulate_records(
        raw,
        gain=gain[0] if len(gain) == 1 else tuple(gain),
        omega=None if omega is None else (omega[0] if len(omega) == 1 else tuple(omega)),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.raw).stem
    write_batch_csv(out / f"{stem}_records.csv", batch)
    report = {"M": batch.M, "units": batch.units}
    if batch.M >= 2:
        est = estimate_moments(batch)
        report.update(
            n_s=est.n_s, n_s_stderr=est.stderr_n_s, n_i=est.n_i, n_i_stderr=est.stderr_n_i,
            c_re=est.c.real, c_re_stderr=est.stderr_c_re, c_im=est.c.imag, c_im_stderr=est.stderr_c_im,
        )
    text = dump_json(report)
    (out / f"{stem}_moments.json").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_selftest(args) -> int:
    ok = selftest.run(seed=args.seed or 0, fault=args.inject_fault)
    return EXIT_OK if ok else EXIT_SELFTEST


def cmd_keys(args) -> int:
    print(_keys_help())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qillum",
        description="Microwave quantum-illumination simulator.",
        epilog=_keys_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    def sweep_like(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_, epilog=_keys_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
        src = p.add_mutually_exclusive_group()
        src.add_argument("--config", help="TOML config file")
        src.add_argument("--recipe", choices=RECIPES, help="bundled figure recipe")
        p.add_argument("--seed", type=int, help="master seed (overrides sweep.seed)")
        p.add_argument("--workers", type=int, help="worker processes (overrides sweep.workers)")
        p.add_argument("--M", type=int, help="records per hypothesis (overrides sweep.M)")
        p.add_argument("--repetitions", type=int, help="repetitions (overrides sweep.repetitions)")
        mc = p.add_mutually_exclusive_group()
        mc.add_argument("--monte-carlo", dest="monte_carlo", action="store_true", default=None)
        mc.add_argument("--no-monte-carlo", dest="monte_carlo", action="store_false")
        return p

    p = sweep_like("sweep", "run a parameter sweep; writes CSV, JSON summary and plot data")
    p.add_argument("--out", default=_default_out(), help="output directory (default $QILLUM_OUT or .)")
    p.set_defaults(func=cmd_sweep)

    p = sweep_like("point", "evaluate a single sweep value and print its rows")
    p.add_argument("--value", type=float, required=True, help="sweep value in the config's variable units")
    p.add_argument("--out", default=None, help="also write <name>_point.csv here")
    p.set_defaults(func=cmd_point)

    p = sub.add_parser("calibrate", help="fit gain and added noise from load-temperature sweeps")
    p.add_argument("--points", required=True, help="CSV with columns T_K, noise_density_V2Hz, stderr")
    p.add_argument("--band", default="default", help="'default' or a TOML file with a [band] section")
    p.add_argument("--channel", choices=("idler", "signal"), default="idler")
    p.add_argument("--omega-ghz", type=float, help="channel frequency in GHz (overrides --channel)")
    p.add_argument("--weighted", action="store_true", help="weight points by 1/stderr^2")
    p.add_argument("--out", default=None, help="also write calibration.json here")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("demod", help="demodulate a raw IF record file into complex amplitudes")
    p.add_argument("--raw", required=True, help="raw record file")
    p.add_argument("--gain-db", type=float, nargs="+", default=[0.0], metavar="G", help="chain gain in dB (one, or signal and idler)")
    p.add_argument("--omega-ghz", type=float, nargs="+", metavar="W", help="channel frequency in GHz (one, or signal and idler)")
    p.add_argument("--out", default=_default_out(), help="output directory")
    p.set_defaults(func=cmd_demod)

    p = sub.add_parser("selftest", help="run the fast invariant suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", choices=sorted(selftest.FAULTS), help="corrupt one formula (mutation smoke test)")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("keys", help="list every config key with its units")
    p.set_defaults(func=cmd_keys)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FitError, DomainError, PointError, InsufficientDataError, ArithmeticError, ValueError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
