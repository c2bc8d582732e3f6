"""Command-line entry point: ``debiasbench {ingest,train,evaluate,bench,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness, ingestion
from .data import DataError, make_split
from .harness import ConfigError, DatasetSpec, ExperimentConfig
from .metrics import MetricError, evaluate
from .models import HyperParams, TrainingError, load_checkpoint, save_checkpoint
from .models.propensity import PropensityError

logger = logging.getLogger("debiasbench")

EXPECTED_ERRORS = (ConfigError, DataError, TrainingError, MetricError, PropensityError, ValueError, OSError)


def _parse_ratios(text: str) -> tuple[float, float, float]:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("ratios need three comma-separated numbers")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="debiasbench", description="Debiased recommendation benchmark harness.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{ingest,train,evaluate,bench,report}")

    dataset_help = "coat:DIR | yahoo:TRAIN,TEST | synthetic:PRESET | canonical CSV path"

    p = sub.add_parser("ingest", help="load, convert or generate a dataset into canonical CSV")
    p.add_argument("--dataset", required=True, help=dataset_help)
    p.add_argument("--seed", type=int, help="generator seed override (synthetic only)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--ground-truth", help="also write the true purchase probabilities as user,item,probability CSV (synthetic only)")

    p = sub.add_parser("train", help="train one model with one seed and write a checkpoint")
    p.add_argument("--config", help="experiment config (dataset, hyperparameters, ratios)")
    p.add_argument("--dataset", help=dataset_help)
    p.add_argument("--model", required=True, choices=harness.MODEL_TAGS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratios", type=_parse_ratios, help="randomized split ratios, default 0.05,0.05,0.90")
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")

    p = sub.add_parser("evaluate", help="score a checkpoint on its test split")
    p.add_argument("checkpoint", help="checkpoint written by 'train'")
    p.add_argument("--dataset", help="dataset override; default is the one recorded in the checkpoint")
    p.add_argument("--out", help="also write the metrics as JSON here")
    p.add_argument("--format", choices=("json", "text"), default="json")

    p = sub.add_parser("bench", help="run a full experiment config and write reports")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", help="dataset override: " + dataset_help)
    p.add_argument("--model", action="append", choices=harness.MODEL_TAGS, help="restrict to these models (repeatable)")
    p.add_argument("--seed", type=int, help="base seed override")
    p.add_argument("--repeats", type=int, help="repeat count override (1..10)")
    p.add_argument("--out", help="output directory override")
    p.add_argument("--format", choices=("csv", "markdown", "both"), default="both")

    p = sub.add_parser("report", help="re-aggregate a stored runs.csv")
    p.add_argument("runs", help="runs.csv written by 'bench' (run_timings.csv next to it is picked up)")
    p.add_argument("--out", help="output directory (default: next to runs.csv)")
    p.add_argument("--format", choices=("csv", "markdown", "both"), default="both")
    return parser


def _load_config(args) -> ExperimentConfig | None:
    return ExperimentConfig.from_file(args.config) if getattr(args, "config", None) else None


def cmd_ingest(args) -> int:
    spec = DatasetSpec.parse(args.dataset)
    truth = None
    if spec.type == "synthetic":
        cfg = spec.synthetic if args.seed is None else ingestion.SyntheticConfig(**{**ingestion.config_dict(spec.synthetic), "seed": args.seed})
        biased, randomized, truth = ingestion.generate_synthetic(cfg)
    else:
        if args.ground_truth:
            raise ConfigError("--ground-truth only applies to synthetic datasets")
        biased, randomized = spec.load()
    merged = ingestion.merge_sources(biased, randomized)
    ingestion.write_canonical(merged, args.out)
    if args.ground_truth:
        ingestion.write_ground_truth(truth, args.ground_truth)
    print(f"wrote {len(merged.interactions)} interactions ({merged.num_users} users, {merged.num_items} items) to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.dataset:
        spec = DatasetSpec.parse(args.dataset)
    elif cfg is not None:
        spec = cfg.dataset
    else:
        raise ConfigError("train needs --dataset or --config")
    ratios = args.ratios or (cfg.ratios if cfg else (0.05, 0.05, 0.90))
    hp = cfg.hp_for(args.model) if cfg else HyperParams()
    propensity = cfg.propensity.get(args.model) if cfg else None

    biased, randomized = spec.load()
    split = make_split(biased, randomized, ratios, args.seed)
    model, extras, report = harness.train_model(args.model, split, hp, args.seed, propensity)
    info = {"dataset": spec.describe(), "ratios": list(ratios), "epochs_run": report.epochs_run}
    if spec.type == "synthetic":
        info["synthetic"] = ingestion.config_dict(spec.synthetic)
    save_checkpoint(args.out, model, hp, args.seed, args.model, {**extras, "info": info})
    print(f"trained {args.model} seed={args.seed} epochs={report.epochs_run} "
          f"best_val_auc={report.best_validation_auc:.4f} -> {args.out}")
    return 0


def _spec_from_info(info: dict) -> DatasetSpec:
    if "synthetic" in info:
        return DatasetSpec("synthetic", synthetic=ingestion.SyntheticConfig(**info["synthetic"]))
    return DatasetSpec.parse(info["dataset"])


def cmd_evaluate(args) -> int:
    model, hp, seed, method, extra = load_checkpoint(args.checkpoint)
    info = extra.get("info", {})
    if args.dataset:
        spec = DatasetSpec.parse(args.dataset)
    elif "dataset" in info:
        spec = _spec_from_info(info)
    else:
        raise ConfigError("checkpoint does not record its dataset; pass --dataset")
    biased, randomized = spec.load()
    split = make_split(biased, randomized, tuple(info.get("ratios", (0.05, 0.05, 0.90))), seed)
    if (split.num_users, split.num_items) != (model.num_users, model.num_items):
        raise ConfigError(
            f"checkpoint shape {model.num_users}x{model.num_items} does not match dataset "
            f"{split.num_users}x{split.num_items}"
        )
    values = evaluate(model, split).as_dict()
    values.pop("training_time_seconds", None)
    payload = {"model": method, "seed": seed, **values}
    text = json.dumps(payload, indent=2) if args.format == "json" else "\n".join(f"{k}: {v}" for k, v in payload.items())
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    if args.dataset:
        cfg.dataset = DatasetSpec.parse(args.dataset)
        cfg.name = None
    if args.model:
        cfg.models = list(dict.fromkeys(args.model))
    if args.seed is not None:
        cfg.base_seed = args.seed
    if args.repeats is not None:
        cfg.repeats = args.repeats
    if args.out:
        cfg.out_dir = args.out
    cfg.__post_init__()
    report, written = harness.bench(cfg, args.format)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    for tag, reason in report.skipped.items():
        print(f"skipped {tag}: {reason}", file=sys.stderr)
    for path in written:
        print(path)
    return 0


def cmd_report(args) -> int:
    runs = Path(args.runs)
    if not runs.is_file():
        raise ConfigError(f"runs file not found: {runs}")
    dataset, results = harness.read_runs(runs, runs.parent / "run_timings.csv")
    report = harness.aggregate(results, dataset=dataset)
    timed = all(np.isfinite(r.metrics.training_time_seconds) for r in results if r.ok)
    if not timed:
        for summary in report.models.values():
            summary.pop(harness.TIME_METRIC, None)
        metrics = harness.QUALITY_METRICS
    else:
        metrics = harness.ALL_METRICS
    out_dir = Path(args.out) if args.out else runs.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if args.format in ("csv", "both"):
        written.append(harness.emit_report(report, "csv", out_dir / "report.csv", harness.QUALITY_METRICS))
        if timed:
            written.append(harness.emit_report(report, "csv", out_dir / "timing.csv", (harness.TIME_METRIC,)))
    if args.format in ("markdown", "both"):
        written.append(harness.emit_report(report, "markdown", out_dir / "report.md", metrics))
    for path in written:
        print(path)
    return 0


COMMANDS = {"ingest": cmd_ingest, "train": cmd_train, "evaluate": cmd_evaluate, "bench": cmd_bench, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except EXPECTED_ERRORS as exc:
        print(f"debiasbench {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
