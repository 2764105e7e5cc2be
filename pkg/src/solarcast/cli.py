"""Command line entry point.

Exit codes: 0 success, 2 data error, 3 config error, 4 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .data import ausgrid_wide_to_long, load_long_csv, make_windows, select_subset, split, values, write_long_csv
from .errors import ConfigError, ContractError, DataError, NotFoundError, TrainingDivergence
from .models import ModelConfig, build_model
from .pipeline import emit_plot_data, forecast_with_pis, run_comparison, score_forecast
from .serialize import load_model, save_model
from .tensor import RngState
from .training import TrainConfig, grid_search

logger = logging.getLogger("solarcast")

EXIT_OK, EXIT_DATA, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3, 4

TRAIN_FIELDS = {f.name for f in fields(TrainConfig)}
RUN_KEYS = {"model", "models", "data", "ratio", "subset", "mc_samples", "out", "grid", "model_file"}
# CLI flag -> config key where the names differ
FLAG_KEYS = {"batch": "batch_size", "latent": "latent_dims"}
DEFAULT_GRID = {"lr": [0.001, 0.01], "neurons": [16, 48]}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with training/run options; flags override it")
    common.add_argument("--data", help="long CSV (timestamp,kwh)")
    common.add_argument("--model", type=str.upper, nargs="+", metavar="{m1..m8}")
    common.add_argument("--ratio", type=float)
    common.add_argument("--lags", type=int)
    common.add_argument("--latent", type=int)
    common.add_argument("--neurons", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--patience", type=int)
    common.add_argument("--mc-samples", type=int, dest="mc_samples")
    common.add_argument("--seed", type=int)
    common.add_argument("--stochastic-z", dest="stochastic_z", action="store_true", default=None,
                        help="feed sampled latents (not the encoder mean) to the forecaster")
    common.add_argument("--subset", choices=["full", "six-months", "intraday"])
    common.add_argument("--out", help="output directory")
    common.add_argument("--model-file", dest="model_file", help="model stem for forecast/evaluate")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="solarcast", description="Probabilistic solar generation forecasting")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("train", "fit one model and save it"),
                       ("forecast", "write predictive mean and intervals for the test split"),
                       ("evaluate", "score a saved model on the test split"),
                       ("compare", "train and score several models"),
                       ("gridsearch", "search lr/neurons/... by validation loss")):
        sub.add_parser(name, parents=[common], help=text)
    conv = sub.add_parser("convert-ausgrid", help="Ausgrid wide CSV to long CSV")
    conv.add_argument("--input", required=True)
    conv.add_argument("--customer", required=True)
    conv.add_argument("--channel", default="GG")
    conv.add_argument("--out", required=True, help="output CSV path")
    return p


def resolve_options(args: argparse.Namespace) -> dict:
    """Merge the JSON config (if any) with explicitly given flags."""
    opts: dict = {}
    if getattr(args, "config", None):
        try:
            opts = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(opts, dict):
            raise ConfigError("config file must hold a JSON object")
        opts = {FLAG_KEYS.get(k, k): v for k, v in opts.items()}
        unknown = set(opts) - TRAIN_FIELDS - RUN_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key, value in vars(args).items():
        if key in ("command", "config", "verbose") or value is None:
            continue
        opts[FLAG_KEYS.get(key, key)] = value
    if "models" in opts and "model" not in opts:
        opts["model"] = opts.pop("models")
    if isinstance(opts.get("model"), str):
        opts["model"] = [opts["model"]]
    opts.setdefault("ratio", 0.8)
    opts.setdefault("subset", "full")
    opts.setdefault("mc_samples", 100)
    opts.setdefault("out", ".")
    if not 0 < opts["ratio"] < 1:
        raise ConfigError(f"--ratio must lie in (0, 1), got {opts['ratio']}")
    if opts["mc_samples"] < 2:
        raise ConfigError("--mc-samples must be at least 2")
    return opts


def train_config(opts: dict) -> TrainConfig:
    try:
        return TrainConfig(**{k: v for k, v in opts.items() if k in TRAIN_FIELDS})
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _records(opts):
    if not opts.get("data"):
        raise ConfigError("--data is required")
    path = Path(opts["data"])
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    return select_subset(load_long_csv(path), opts["subset"])


def _model_ids(opts, single=True):
    ids = [m.upper() for m in opts.get("model") or ["M1"]]
    if single and len(ids) != 1:
        raise ConfigError("this command takes exactly one --model")
    return ids


def _test_windows(opts, scaler, lags):
    recs = _records(opts)
    ds = make_windows(values(recs), lags, [r.timestamp for r in recs])
    _, test = split(ds, opts["ratio"])
    if len(test) == 0:
        raise DataError("test split is empty")
    return scaler.apply(test.X), test.y, test.timestamps


def cmd_train(opts) -> None:
    from .data import prepare_datasets

    cfg = train_config(opts)
    (mid,) = _model_ids(opts)
    recs = _records(opts)
    train, _, scaler = prepare_datasets(values(recs), cfg.lags, opts["ratio"], [r.timestamp for r in recs])
    mc = ModelConfig.from_id(mid, neurons=cfg.neurons, lags=cfg.lags, latent=cfg.latent_dims)
    model = build_model(mc, cfg)
    model.fit(train.X, train.y, rng=RngState(cfg.seed))
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model", scaler)
    model.history_.to_csv(out / "history.csv")
    if getattr(model, "vae_history_", None) is not None:
        model.vae_history_.to_csv(out / "vae_history.csv")
    total, trainable = model.count_params()
    print(f"{mid}: best epoch {model.history_.best_epoch}, val loss {model.history_.best_val_loss:.6f}, "
          f"weights {trainable} trainable / {total} total -> {out}")


def _load(opts):
    stem = Path(opts.get("model_file") or Path(opts["out"]) / "model")
    if not stem.with_suffix(".json").exists():
        raise DataError(f"no saved model at {stem}")
    model, scaler = load_model(stem)
    if scaler is None:
        raise DataError(f"{stem} was saved without a scaler")
    return model, scaler


def _forecast(opts):
    model, scaler = _load(opts)
    X, y_true, stamps = _test_windows(opts, scaler, model.n_features_in_)
    result = forecast_with_pis(model, X, opts["mc_samples"], RngState(opts.get("seed", 0)), scaler=scaler)
    return result, y_true, stamps


def cmd_forecast(opts) -> None:
    result, y_true, stamps = _forecast(opts)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    emit_plot_data(result, y_true, out / "plot_data.csv", stamps)
    print(f"wrote {len(result)} steps to {out / 'plot_data.csv'}")


def cmd_evaluate(opts) -> None:
    from .pipeline import ComparisonReport, ComparisonRow

    model, _ = _load(opts)
    result, y_true, _ = _forecast(opts)
    metrics = score_forecast(result, y_true)
    metrics["weight_count"] = float(model.count_params()[1])
    label = (opts.get("model") or ["model"])[0]
    report = ComparisonReport(opts["subset"], [ComparisonRow(label, opts["subset"], metrics)])
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "metrics.csv")
    print(report.table())


def cmd_compare(opts) -> None:
    cfg = train_config(opts)
    ids = opts.get("model") or [f"M{i}" for i in range(1, 9)]
    recs = _records(opts)
    report = run_comparison(ids, recs, cfg, subset="full", ratio=opts["ratio"],
                            mc_samples=opts["mc_samples"], seed=cfg.seed, dataset_name=opts["subset"])
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "metrics.csv")
    report.timing_to_csv(out / "timing.csv")
    print(report.table())


def cmd_gridsearch(opts) -> None:
    from .data import prepare_datasets

    cfg = train_config(opts)
    (mid,) = _model_ids(opts)
    space = opts.get("grid") or DEFAULT_GRID
    if not isinstance(space, dict) or set(space) - TRAIN_FIELDS:
        raise ConfigError(f"grid keys must be training options, got {space}")
    recs = _records(opts)
    train, _, _ = prepare_datasets(values(recs), cfg.lags, opts["ratio"])

    def factory(c: TrainConfig):
        return build_model(ModelConfig.from_id(mid, neurons=c.neurons, lags=c.lags, latent=c.latent_dims), c)

    result = grid_search(space, (train.X, train.y), cfg, factory)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    keys = list(space)
    with open(out / "gridsearch.csv", "w") as fh:
        fh.write(",".join([*keys, "val_loss", "weight_count"]) + "\n")
        for row in result.table:
            fh.write(",".join([*(str(row[k]) for k in keys), f"{row['score']:.6f}", str(row["params"])]) + "\n")
    best = {k: getattr(result.best_config, k) for k in keys}
    (out / "best_config.json").write_text(json.dumps(result.best_config.to_dict(), indent=2) + "\n")
    print(f"best {best}")


def cmd_convert(args) -> None:
    records = ausgrid_wide_to_long(args.input, args.customer, args.channel)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_long_csv(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")


COMMANDS = {"train": cmd_train, "forecast": cmd_forecast, "evaluate": cmd_evaluate,
            "compare": cmd_compare, "gridsearch": cmd_gridsearch}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "convert-ausgrid":
            cmd_convert(args)
        else:
            COMMANDS[args.command](resolve_options(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, NotFoundError, ContractError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
