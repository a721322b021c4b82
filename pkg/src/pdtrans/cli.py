"""Command-line entry point: ``pdtrans {synth,train,eval,forecast}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .data import SyntheticSpec, gen_synthetic, load_csv, load_spec
from .errors import PDTransError
from .evaluation import (
    evaluate,
    format_metrics,
    rolling_forecast,
    write_decomposition_csv,
    write_forecast_csv,
    write_metrics_json,
)
from .training import TrainConfig, fit, load_checkpoint

log = logging.getLogger("pdtrans")

DEFAULT_TIME_BUDGET = 600.0


class CLIError(PDTransError):
    def __init__(self, message: str, **fields):
        super().__init__(message)
        self.fields = fields


def _cmd_synth(args) -> int:
    spec = load_spec(args.spec) if args.spec else SyntheticSpec()
    overrides = {
        k: getattr(args, k)
        for k in ("n_series", "length", "slope", "amplitude", "period", "noise_std", "seed")
        if getattr(args, k) is not None
    }
    spec = replace(spec, **overrides)
    dataset, truth = gen_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset.to_csv(out / "data.csv")
    truth.to_frame(dataset).to_csv(out / "truth.csv", index=False, float_format="%.17g")
    (out / "spec.json").write_text(spec.to_json() + "\n")
    config = TrainConfig()
    config.model = replace(config.model, n_series=spec.n_series)
    config.dump(out / "config.json")
    print(json.dumps({"data": str(out / "data.csv"), "truth": str(out / "truth.csv")}))
    return 0


def _cmd_train(args) -> int:
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise CLIError(f"config not found: {path}", path=str(path))
        config = TrainConfig.load(path)
    else:
        config = TrainConfig()
    if args.max_epochs is not None:
        config.max_epochs = args.max_epochs
    if args.seed is not None:
        config.seed = args.seed
    dataset = _load_data(args.data, config.frequency)
    budget = args.time_budget if args.time_budget and args.time_budget > 0 else None
    best = fit(config, dataset, args.run_dir, time_budget=budget)
    print(json.dumps({"best": str(best), "last": str(Path(args.run_dir) / "last.ckpt")}))
    return 0


def _load_data(path, frequency):
    path = Path(path)
    if not path.is_file():
        raise CLIError(f"data file not found: {path}", path=str(path))
    return load_csv(path, frequency=frequency)


def _forecast(args):
    ckpt = Path(args.ckpt)
    if not ckpt.is_file():
        raise CLIError(f"checkpoint not found: {ckpt}", path=str(ckpt))
    model, config, payload = load_checkpoint(ckpt)
    dataset = _load_data(args.data, config.frequency)
    results = rolling_forecast(
        model,
        dataset,
        n_windows=args.n_windows if args.n_windows is not None else config.n_windows,
        n_samples=args.n_samples if args.n_samples is not None else config.n_samples_infer,
        n_latent=config.n_latent_infer,
        seed=config.seed if args.seed is None else args.seed,
        method=args.quantiles,
        series_ids=payload["series_ids"],
    )
    return results, evaluate(results)


def _cmd_eval(args) -> int:
    _, metrics = _forecast(args)
    if args.out:
        write_metrics_json(metrics, args.out)
    print(json.dumps(format_metrics(metrics)))
    return 0


def _cmd_forecast(args) -> int:
    results, metrics = _forecast(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_forecast_csv(results, out / "forecast.csv")
    write_decomposition_csv(results, out / "decomposition.csv")
    write_metrics_json(metrics, out / "metrics.json")
    print(json.dumps(format_metrics(metrics)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdtrans", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset with its true decomposition")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--spec", help="JSON file with SyntheticSpec fields")
    p.add_argument("--n-series", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--slope", type=float)
    p.add_argument("--amplitude", type=float)
    p.add_argument("--period", type=int)
    p.add_argument("--noise-std", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="fit a model and write checkpoints")
    p.add_argument("--config", help="JSON run config (defaults when omitted)")
    p.add_argument("--data", required=True, help="long-format CSV")
    p.add_argument("--run-dir", default="run")
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument(
        "--time-budget",
        type=float,
        default=DEFAULT_TIME_BUDGET,
        help="stop after the epoch exceeding this many seconds (0 = no limit)",
    )
    p.set_defaults(func=_cmd_train)

    for name, func, helptext in (
        ("eval", _cmd_eval, "score the held-out rolling windows"),
        ("forecast", _cmd_forecast, "write forecasts, decomposition traces and metrics"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--ckpt", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=(name == "forecast"))
        p.add_argument("--n-samples", type=int)
        p.add_argument("--n-windows", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--quantiles", choices=("empirical", "analytic"), default="empirical")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except (PDTransError, OSError, KeyError, ValueError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        record.update(getattr(exc, "fields", {}))
        if isinstance(exc, OSError) and exc.filename:
            record.setdefault("path", str(exc.filename))
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
