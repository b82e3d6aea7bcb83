"""Command-line entry point: ``biad <command> [options]``.

Commands
--------
gen-data   write a synthetic ground-truth matrix
simulate   simulate one engine and write its feedback log
detect     run the sequential detector on a feedback log
sweep      error rates over a parameter sweep
baseline   error rates of the average-rating test over thresholds

Every command that writes a file also writes ``<file>.manifest.json`` with
the resolved configuration, so the output can be regenerated.

Exit status is 0 on success, 1 on configuration errors and 2 on data or
protocol errors.
"""

import argparse
import dataclasses
import datetime
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .detector import BiasDetector, write_trace_csv
from .engine import FeedbackLog
from .exceptions import ConfigurationError, ParseError, ProtocolError
from .experiments import SWEEP_PARAMS, TrialConfig, run_sweep, select_tau, simulate_trial
from .ratings import SyntheticSpec, generate_synthetic, save_matrix

__all__ = ["main"]

logger = logging.getLogger("biad")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "warning": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

_GEN_KEYS = {"m": "m", "users": "n_users", "target_effective_mean": "target_effective_mean",
             "seed": "seed", "rating_noise_spread": "rating_noise_spread"}
_DETECT_KEYS = ("q_max", "f_tilde", "n_players", "m", "c", "variant")


class _DataError(Exception):
    """Unreadable or malformed input data (exit status 2)."""


def _read_json(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"config {path} must hold a JSON object")
    return data


def _write_manifest(output, command, config, args):
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config": config,
        "master_seed": config.get("master_seed", config.get("seed")),
        "arguments": {k: v for k, v in vars(args).items()
                      if k not in ("func",) and v is not None},
        "outputs": [str(p) for p in output] if isinstance(output, list) else [str(output)],
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    target = Path(output[0] if isinstance(output, list) else output)
    if target.is_dir():
        path = target / "manifest.json"
    else:
        path = target.with_name(target.name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n",
                    encoding="utf-8")
    return path


def _trial_config(args):
    data = _read_json(args.config) if args.config else {}
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "variant", None) is not None:
        overrides["variant"] = args.variant
    if getattr(args, "trials", None) is not None:
        overrides["num_trials"] = args.trials
    data.update(overrides)
    return TrialConfig.from_dict(data)


def _parse_values(text, name):
    values = [v.strip() for v in str(text).split(",") if v.strip()]
    if not values:
        raise ConfigurationError(f"{name} list is empty")
    try:
        [float(v) for v in values]
    except ValueError:
        raise ConfigurationError(f"{name} must be comma-separated numbers, got {text!r}") from None
    return values


def cmd_gen_data(args):
    data = _read_json(args.config)
    unknown = sorted(set(data) - set(_GEN_KEYS))
    if unknown:
        raise ConfigurationError(f"unknown config key {unknown[0]!r}")
    missing = [k for k in ("m", "users", "target_effective_mean") if k not in data]
    if missing:
        raise ConfigurationError(f"missing config key {missing[0]!r}")
    if args.seed is not None:
        data["seed"] = args.seed
    kwargs = {_GEN_KEYS[k]: v for k, v in data.items()}
    try:
        spec = SyntheticSpec(**kwargs).validate()
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None
    out = Path(args.out)
    save_matrix(generate_synthetic(spec), out)
    _write_manifest(out, "gen-data", dataclasses.asdict(spec), args)
    print(f"wrote {spec.n_users}x{spec.m} matrix to {out}")
    return EXIT_OK


def cmd_simulate(args):
    config = _trial_config(args)
    log, _ = simulate_trial(config, args.trial)
    out = Path(args.out)
    log.to_csv(out, with_ratings=args.with_ratings)
    _write_manifest(out, "simulate", config.to_dict(), args)
    print(f"wrote {log.n_rounds} rounds ({len(log)} records) to {out}")
    return EXIT_OK


def _detector_from_config(args, log):
    data = _read_json(args.config) if args.config else {}
    unknown = sorted(set(data) - set(_DETECT_KEYS))
    if unknown:
        raise ConfigurationError(
            f"unknown config key {unknown[0]!r}; valid: {', '.join(_DETECT_KEYS)}"
        )
    if args.variant is not None:
        data["variant"] = args.variant
    for key in ("f_tilde", "m"):
        if key not in data:
            raise ConfigurationError(f"missing config key {key!r}")
    detector = BiasDetector(**data)
    detector._params(log)
    return detector, data


def _first_bad_row(log):
    """File row (header is row 1) of the first record breaking the log protocol."""
    pairs, last_round, in_round = set(), 0, set()
    for k, (r, u, i) in enumerate(zip(log.round.tolist(), log.player.tolist(),
                                      log.item.tolist())):
        if r != last_round:
            if r != last_round + 1:
                return k + 2
            last_round, in_round = r, set()
        if (u, i) in pairs or u in in_round:
            return k + 2
        pairs.add((u, i))
        in_round.add(u)
    return None


def cmd_detect(args):
    try:
        log = FeedbackLog.from_csv(args.log)
    except OSError as exc:
        raise _DataError(f"cannot read log {args.log}: {exc.strerror}") from None
    detector, data = _detector_from_config(args, log)
    try:
        detector.fit(log)
    except ProtocolError as exc:
        row = _first_bad_row(log)
        where = f"row {row}: " if row is not None else ""
        raise ProtocolError(f"{where}{exc}") from None
    print(detector.verdict_)
    if args.out:
        out = Path(args.out)
        write_trace_csv(detector.result(), out)
        _write_manifest(out, "detect", dict(data, log=str(args.log)), args)
    return EXIT_OK


def _svg_plot(result, path, series=("type_i", "type_ii")):
    """Minimal line chart of error rates against the swept values."""
    width, height, pad = 480, 320, 48
    xs = np.asarray(result.values, dtype=float)
    lo, hi = float(xs.min()), float(xs.max())
    span = hi - lo or 1.0

    def px(x):
        return pad + (x - lo) / span * (width - 2 * pad)

    def py(y):
        return height - pad - y * (height - 2 * pad)

    colors = {"type_i": "#1f77b4", "type_ii": "#d62728"}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{py(0)}" x2="{width - pad}" y2="{py(0)}" stroke="black"/>',
        f'<line x1="{pad}" y1="{py(0)}" x2="{pad}" y2="{py(1)}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle">{result.param}</text>',
        f'<text x="{pad - 6}" y="{py(1) + 4}" text-anchor="end">1</text>',
        f'<text x="{pad - 6}" y="{py(0) + 4}" text-anchor="end">0</text>',
    ]
    for x in xs:
        parts.append(f'<text x="{px(x):.1f}" y="{py(0) + 16}" text-anchor="middle">{x:g}</text>')
    for k, name in enumerate(series):
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, result.column(name)))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{colors[name]}" '
                     f'stroke-width="2"/>')
        parts.append(f'<text x="{width - pad}" y="{pad + 16 * k}" text-anchor="end" '
                     f'fill="{colors[name]}">{name}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
    return path


def _run_sweep_command(args, config, param, values):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace_dir = out / "traces" if getattr(args, "traces", False) else None
    result = run_sweep(config, param, values, num_trials=config.num_trials,
                       workers=args.workers, trace_dir=trace_dir)
    csv_path = result.to_csv(out / f"sweep_{param}.csv")
    outputs = [csv_path]
    if args.plot:
        outputs.append(_svg_plot(result, out / f"sweep_{param}.svg"))
    _write_manifest(outputs, args.command, config.to_dict(), args)
    return result, csv_path


def cmd_sweep(args):
    if args.param not in SWEEP_PARAMS:
        raise ConfigurationError(
            f"unsupported sweep parameter {args.param!r}; valid: {', '.join(SWEEP_PARAMS)}"
        )
    config = _trial_config(args)
    values = _parse_values(args.values, "values")
    _, csv_path = _run_sweep_command(args, config, args.param, values)
    print(f"wrote {csv_path}")
    return EXIT_OK


def cmd_baseline(args):
    config = _trial_config(args)
    taus = _parse_values(args.taus, "taus")
    result, csv_path = _run_sweep_command(args, config, "tau", taus)
    best = select_tau(result)
    print(f"wrote {csv_path}")
    print(f"best tau={best:g}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="biad", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON config file")
        p.add_argument("--seed", type=int, help="override the master seed")

    def pool(p):
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                       help="worker processes (default: core count)")
        p.add_argument("--trials", type=int, help="trials per sweep point")
        p.add_argument("--variant", choices=("full", "prime"))
        p.add_argument("--plot", action="store_true", help="also write an SVG chart")
        p.add_argument("--traces", action="store_true", help="dump per-trial traces")

    p = sub.add_parser("gen-data", help="write a synthetic rating matrix")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("simulate", help="simulate one engine and write its feedback log")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--trial", type=int, default=0, help="trial index")
    p.add_argument("--variant", choices=("full", "prime"))
    p.add_argument("--with-ratings", action="store_true",
                   help="add the served items' true ratings as a column")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", help="run the detector on a feedback log")
    p.add_argument("--log", required=True)
    p.add_argument("--config", help="detector JSON: " + ", ".join(_DETECT_KEYS))
    p.add_argument("--out", help="write the round,S,T,triggered trace here")
    p.add_argument("--variant", choices=("full", "prime"))
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("sweep", help="error rates over a parameter sweep")
    common(p)
    p.add_argument("--param", required=True, help="one of " + ", ".join(SWEEP_PARAMS))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", required=True, help="output directory")
    pool(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("baseline", help="average-rating test over thresholds")
    common(p)
    p.add_argument("--taus", required=True, help="comma-separated thresholds")
    p.add_argument("--out", required=True, help="output directory")
    pool(p)
    p.set_defaults(func=cmd_baseline)
    return parser


def _configure_logging():
    name = os.environ.get("BIAD_LOG_LEVEL", "warn").lower()
    level = _LOG_LEVELS.get(name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if name not in _LOG_LEVELS:
        logger.warning("unknown BIAD_LOG_LEVEL %r, using warn", name)


def main(argv=None):
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ProtocolError, _DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
