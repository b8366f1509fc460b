"""Command-line entry point: ``periodcast {train,forecast,hpo,predictability,bench,synth}``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from typing import Sequence

from .config import RunConfig, resolve
from .errors import ConfigError, DataError, NumericError, PeriodcastError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _column(text: str) -> str | int:
    return int(text) if text.isdigit() else text


def _field_type(f: dataclasses.Field):
    if f.name == "split":
        return _float_list
    if f.name == "date_column":
        return _column
    if f.name == "seed" or isinstance(f.default, bool):
        return int
    if isinstance(f.default, int):
        return int
    if isinstance(f.default, float) or f.name == "clip_norm":
        return float
    return str


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON config file; flags override its values")
    group = p.add_argument_group("config overrides")
    for f in dataclasses.fields(RunConfig):
        group.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=_field_type(f), default=None,
                           metavar=f.name.upper())


def _overrides(args: argparse.Namespace) -> dict:
    return {name: getattr(args, name) for name in RunConfig.keys() if getattr(args, name, None) is not None}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="periodcast", description="Periodic long-horizon forecasting toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (("train", "train a model and report test metrics"),
                            ("hpo", "asynchronous Bayesian hyperparameter search"),
                            ("predictability", "score how reproducible validation labels are")):
        p = sub.add_parser(name, help=help_text)
        _add_config_flags(p)
        if name == "hpo":
            p.add_argument("--resume", action="store_true", help="continue from the journal in --out")

    p = sub.add_parser("forecast", help="forecast from the tail of a CSV with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="CSV holding at least input_len rows")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--date-column", type=_column, default=0)

    p = sub.add_parser("bench", help="time Period-Attention against full attention")
    p.add_argument("--lengths", type=_int_list, default=[256, 512, 1024])
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--np", dest="n_periods", type=int, default=4, help="period count held fixed")
    p.add_argument("--reps", type=int, default=9)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--out", default="bench.csv", help="CSV path")

    p = sub.add_parser("synth", help="write a synthetic periodic series as CSV")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--length", type=int, default=4000)
    p.add_argument("--features", type=int, default=3)
    p.add_argument("--period", type=int, default=24)
    p.add_argument("--slope", type=float, default=0.01)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _run(args: argparse.Namespace) -> None:
    from . import pipeline

    if args.command in ("train", "hpo", "predictability"):
        cfg = resolve(args.config, _overrides(args))
        if args.command == "train":
            doc = pipeline.train_job(cfg)
        elif args.command == "hpo":
            doc = pipeline.hpo_job(cfg, resume=args.resume)
        else:
            doc = pipeline.predictability_job(cfg)
        print(json.dumps(doc, indent=2, sort_keys=True))
    elif args.command == "forecast":
        wide, long = pipeline.forecast_job(args.checkpoint, args.input, args.out, args.date_column)
        print(f"wrote {wide} and {long}")
    elif args.command == "bench":
        results = pipeline.bench_job(args.lengths, args.d_model, args.n_periods, args.reps, args.batch, args.out)
        for r in results:
            print(f"{r.kernel:>6} L={r.length:<6} median={r.median_seconds:.6f}s ops={r.op_count}")
        print(f"wrote {args.out}")
    elif args.command == "synth":
        print(f"wrote {pipeline.synth_job(args.out, args.length, args.features, args.period, args.slope, args.noise, args.seed)}")


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, PeriodcastError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
