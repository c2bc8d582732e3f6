"""Seeded experiment runner, aggregation with confidence intervals, and report files."""

from __future__ import annotations

import configparser
import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ingestion
from .data import DataError, Dataset, FeedbackKind, make_split
from .metrics import MetricValues, evaluate
from .models import (
    HyperParams,
    TrainingError,
    estimate_propensities,
    train_autodebias,
    train_dr,
    train_ips,
    train_mf,
)
from .models.propensity import ITEM_POPULARITY, NAIVE_BAYES

logger = logging.getLogger(__name__)

MODEL_TAGS = ("mf-uniform", "mf-biased", "ips", "dr", "autodebias")
NEEDS_RANDOMIZED = {"mf-uniform": "MF(uniform)", "dr": "DR", "autodebias": "AutoDebias"}
BASELINE = "mf-biased"
DISPLAY = {"mf-uniform": "MF (uniform)", "mf-biased": "MF (biased)", "ips": "IPS", "dr": "DR", "autodebias": "AutoDebias"}

# deterministic metrics vs wall-clock timing, kept in separate files
QUALITY_METRICS = ("rmse", "auc", "ndcg_at_5", "gini", "entropy")
TIME_METRIC = "training_time_seconds"
ALL_METRICS = QUALITY_METRICS + (TIME_METRIC,)
LOWER_IS_BETTER = {"rmse", "gini", TIME_METRIC}
METRIC_HEADERS = {"rmse": "RMSE", "auc": "AUC", "ndcg_at_5": "NDCG@5", "gini": "Gini", "entropy": "Entropy",
                  TIME_METRIC: "Training time (sec)"}
CI_Z = 1.96


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSpec:
    """Where a dataset comes from: ``coat``, ``yahoo``, ``canonical`` or ``synthetic``."""

    type: str
    path: str | None = None
    train: str | None = None
    test: str | None = None
    synthetic: ingestion.SyntheticConfig | None = None

    @classmethod
    def parse(cls, text: str) -> "DatasetSpec":
        """``coat:DIR``, ``yahoo:TRAIN,TEST``, ``synthetic:PRESET``, ``canonical:FILE`` or a bare file path."""
        kind, sep, rest = text.partition(":")
        if not sep:
            return cls("canonical", path=text)
        if kind == "coat":
            return cls("coat", path=rest)
        if kind == "yahoo":
            train, _, test = rest.partition(",")
            if not test:
                raise ConfigError("yahoo dataset needs 'yahoo:TRAIN,TEST'")
            return cls("yahoo", train=train, test=test)
        if kind == "synthetic":
            if rest not in ingestion.SYNTHETIC_PRESETS:
                raise ConfigError(f"unknown synthetic preset {rest!r}; known: {sorted(ingestion.SYNTHETIC_PRESETS)}")
            return cls("synthetic", synthetic=ingestion.SYNTHETIC_PRESETS[rest])
        if kind == "canonical":
            return cls("canonical", path=rest)
        return cls("canonical", path=text)

    @classmethod
    def from_section(cls, section, base_dir: Path) -> "DatasetSpec":
        kind = section.get("type")
        if kind is None:
            raise ConfigError("[dataset] needs a 'type'")

        def resolve(key):
            value = section.get(key)
            if value is None:
                return None
            p = Path(value)
            return str(p if p.is_absolute() else base_dir / p)

        if kind == "coat":
            return cls("coat", path=resolve("path"))
        if kind == "yahoo":
            return cls("yahoo", train=resolve("train"), test=resolve("test"))
        if kind == "canonical":
            return cls("canonical", path=resolve("path"))
        if kind == "synthetic":
            base = ingestion.SYNTHETIC_PRESETS.get(section.get("preset", "small"))
            if base is None:
                raise ConfigError(f"unknown synthetic preset {section.get('preset')!r}")
            overrides = {}
            for key, value in section.items():
                if key in ("type", "preset"):
                    continue
                if key not in ingestion.SyntheticConfig.__dataclass_fields__:
                    raise ConfigError(f"unknown synthetic setting {key!r}")
                current = getattr(base, key)
                overrides[key] = type(current)(value) if not isinstance(current, int) else int(value)
            return cls("synthetic", synthetic=replace(base, **overrides))
        raise ConfigError(f"unknown dataset type {kind!r}")

    def describe(self) -> str:
        if self.type == "synthetic":
            return f"synthetic:{self.synthetic.name}"
        if self.type == "yahoo":
            return f"yahoo:{self.train},{self.test}"
        return f"{self.type}:{self.path}"

    def load(self) -> tuple[Dataset, Dataset | None]:
        if self.type == "coat":
            return ingestion.load_coat(self.path)
        if self.type == "yahoo":
            return ingestion.load_yahoo(self.train, self.test)
        if self.type == "canonical":
            return ingestion.split_sources(ingestion.read_canonical(self.path))
        if self.type == "synthetic":
            biased, randomized, _ = ingestion.generate_synthetic(self.synthetic)
            return biased, randomized
        raise ConfigError(f"unknown dataset type {self.type!r}")


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec
    models: list[str]
    hyperparams: dict[str, HyperParams] = field(default_factory=dict)
    propensity: dict[str, str] = field(default_factory=dict)
    repeats: int = 10
    base_seed: int = 0
    ratios: tuple[float, float, float] = (0.05, 0.05, 0.90)
    out_dir: str = "runs"
    name: str | None = None

    def __post_init__(self):
        if not self.models:
            raise ConfigError("no models requested")
        unknown = [m for m in self.models if m not in MODEL_TAGS]
        if unknown:
            raise ConfigError(f"unknown model tags {unknown}; known: {list(MODEL_TAGS)}")
        if not 1 <= self.repeats <= 10:
            raise ConfigError("repeats must lie in 1..10")

    @property
    def dataset_name(self) -> str:
        if self.name:
            return self.name
        if self.dataset.type == "synthetic":
            return self.dataset.synthetic.name
        if self.dataset.type in ("coat", "yahoo"):
            return self.dataset.type
        return Path(self.dataset.path).stem

    def hp_for(self, model: str) -> HyperParams:
        return self.hyperparams.get(model, HyperParams())

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_string(path.read_text(encoding="utf-8"), base_dir=path.parent)

    @classmethod
    def from_string(cls, text: str, base_dir: Path | str = ".") -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.read_string(text)
        base_dir = Path(base_dir)
        if not parser.has_section("dataset"):
            raise ConfigError("config needs a [dataset] section")
        dataset = DatasetSpec.from_section(parser["dataset"], base_dir)
        run = parser["run"] if parser.has_section("run") else {}
        models = [m.strip() for m in run.get("models", "mf-biased, ips, dr, autodebias").split(",") if m.strip()]

        shared = dict(parser["hyperparams"]) if parser.has_section("hyperparams") else {}
        shared_prop = shared.pop("propensity", None)
        hps, props = {}, {}
        for tag in MODEL_TAGS:
            values = dict(shared)
            section = f"model:{tag}"
            if parser.has_section(section):
                values.update(parser[section])
            prop = values.pop("propensity", shared_prop)
            if prop:
                props[tag] = prop
            try:
                hps[tag] = HyperParams.from_mapping(values)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{section}]: {exc}") from None
        for section in parser.sections():
            if section.startswith("model:") and section[len("model:"):] not in MODEL_TAGS:
                raise ConfigError(f"unknown model section [{section}]")

        ratios = tuple(float(x) for x in run.get("ratios", "0.05, 0.05, 0.90").split(","))
        out_dir = run.get("out", "runs")
        if not Path(out_dir).is_absolute():
            out_dir = str(base_dir / out_dir)
        return cls(
            dataset=dataset,
            models=models,
            hyperparams=hps,
            propensity=props,
            repeats=int(run.get("repeats", 10)),
            base_seed=int(run.get("base_seed", 0)),
            ratios=ratios,
            out_dir=out_dir,
            name=run.get("name"),
        )


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------


@dataclass
class RunResult:
    model: str
    seed: int
    metrics: MetricValues | None = None
    epochs_run: int = 0
    skipped: str | None = None

    @property
    def ok(self) -> bool:
        return self.skipped is None


def default_propensity_method(split) -> str:
    if split.kind is FeedbackKind.EXPLICIT and split.has_randomized:
        return NAIVE_BAYES
    return ITEM_POPULARITY


def train_model(tag: str, split, hp: HyperParams, seed: int, propensity: str | None = None):
    """Train one tagged model; returns ``(model, extras, report)``.

    ``extras`` maps names to arrays worth checkpointing next to the MF blocks.
    """
    if tag in NEEDS_RANDOMIZED and not split.has_randomized:
        raise TrainingError(f"{NEEDS_RANDOMIZED[tag]} requires randomized data, and this dataset has none")
    if tag == "mf-biased":
        model, report = train_mf(split, hp, seed, "biased")
        return model, {}, report
    if tag == "mf-uniform":
        model, report = train_mf(split, hp, seed, "uniform")
        return model, {}, report
    method = propensity or default_propensity_method(split)
    if tag in ("ips", "dr"):
        props = estimate_propensities(split.d_t, split.num_items, method, hp, d_u=split.d_u, num_users=split.num_users)
        if tag == "ips":
            model, report = train_ips(split, hp, seed, props)
            return model, {}, report
        model, imp, report = train_dr(split, hp, seed, props)
        return model, {"imputation_global": np.array(imp.global_value), "imputation_offset": imp.item_offset}, report
    if tag == "autodebias":
        model, meta, report = train_autodebias(split, hp, seed)
        return model, {"meta_phi1": meta.phi1, "meta_phi2": meta.phi2, "meta_m": meta.m}, report
    raise ConfigError(f"unknown model tag {tag!r}")


def run_experiment(cfg: ExperimentConfig, data: tuple[Dataset, Dataset | None] | None = None) -> list[RunResult]:
    """Train and evaluate every requested model for seeds ``base_seed .. base_seed + repeats - 1``."""
    biased, randomized = data if data is not None else cfg.dataset.load()
    results: list[RunResult] = []
    for j in range(cfg.repeats):
        seed = cfg.base_seed + j
        split = make_split(biased, randomized, cfg.ratios, seed)
        for tag in cfg.models:
            if tag in NEEDS_RANDOMIZED and not split.has_randomized:
                reason = f"{NEEDS_RANDOMIZED[tag]} requires randomized data"
                logger.info("skip %s seed=%d: %s", tag, seed, reason)
                results.append(RunResult(tag, seed, skipped=reason))
                continue
            start = time.perf_counter()
            model, _, report = train_model(tag, split, cfg.hp_for(tag), seed, cfg.propensity.get(tag))
            elapsed = time.perf_counter() - start
            values = evaluate(model, split, training_time_seconds=elapsed)
            logger.info("%s seed=%d epochs=%d rmse=%.4f auc=%.4f", tag, seed, report.epochs_run, values.rmse, values.auc)
            results.append(RunResult(tag, seed, values, report.epochs_run))
    return results


# --------------------------------------------------------------------------
# aggregation
# --------------------------------------------------------------------------


@dataclass
class MetricSummary:
    mean: float
    ci95: float
    improvement_pct: float | None = None


@dataclass
class AggregateReport:
    dataset: str
    models: dict[str, dict[str, MetricSummary]]
    runs: dict[str, int] = field(default_factory=dict)
    skipped: dict[str, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


def mean_ci(values) -> tuple[float, float]:
    """Mean and normal-approximation 95% half-width ``1.96 * sd / sqrt(n)``."""
    values = [float(v) for v in values]
    n = len(values)
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    sd = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (n - 1))
    return mean, CI_Z * sd / math.sqrt(n)


def improvement(method_mean: float, baseline_mean: float) -> float | None:
    if baseline_mean == 0 or not math.isfinite(baseline_mean):
        return None
    return (method_mean - baseline_mean) / baseline_mean * 100.0


def aggregate(results, baseline: str = BASELINE, dataset: str = "", metrics=ALL_METRICS) -> AggregateReport:
    """Per-model means, 95% CIs, and percentage change against ``baseline``."""
    by_model: dict[str, list[RunResult]] = {}
    skipped: dict[str, str] = {}
    for r in results:
        if r.ok:
            by_model.setdefault(r.model, []).append(r)
        else:
            skipped.setdefault(r.model, r.skipped)
    if baseline not in by_model:
        raise ConfigError(f"baseline {baseline!r} has no completed runs")
    report = AggregateReport(dataset=dataset, models={}, skipped={m: s for m, s in skipped.items() if m not in by_model})
    for tag in sorted(by_model, key=_model_order):
        runs = by_model[tag]
        report.runs[tag] = len(runs)
        if len(runs) == 1:
            report.warnings.append(f"{tag}: single run, confidence interval reported as 0")
        report.models[tag] = {}
        for metric in metrics:
            mean, ci = mean_ci([getattr(r.metrics, metric) for r in runs])
            report.models[tag][metric] = MetricSummary(mean, ci)
    base = report.models[baseline]
    for tag, summary in report.models.items():
        if tag == baseline:
            continue
        for metric, s in summary.items():
            s.improvement_pct = improvement(s.mean, base[metric].mean)
    return report


def _model_order(tag: str) -> int:
    return MODEL_TAGS.index(tag) if tag in MODEL_TAGS else len(MODEL_TAGS)


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------

REPORT_COLUMNS = ["dataset", "model", "metric", "mean", "ci95", "improvement_pct"]
RUN_COLUMNS = ["dataset", "model", "seed", "status", "reason", *QUALITY_METRICS, "epochs_run"]
TIMING_COLUMNS = ["dataset", "model", "seed", TIME_METRIC]


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def write_report_csv(report: AggregateReport, path, metrics=ALL_METRICS) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for tag, summary in report.models.items():
            for metric in metrics:
                if metric not in summary:
                    continue
                s = summary[metric]
                w.writerow([report.dataset, tag, metric, _fmt(s.mean), _fmt(s.ci95), _fmt(s.improvement_pct)])


def read_report_csv(path) -> AggregateReport:
    report = AggregateReport(dataset="", models={})
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != REPORT_COLUMNS:
            raise ConfigError(f"{path}: unexpected columns {reader.fieldnames}")
        for row in reader:
            report.dataset = row["dataset"]
            imp = row["improvement_pct"]
            report.models.setdefault(row["model"], {})[row["metric"]] = MetricSummary(
                float(row["mean"]), float(row["ci95"]), float(imp) if imp else None
            )
    return report


def _best(values: dict[str, float], metric: str, improvement_table: bool) -> str | None:
    finite = {k: v for k, v in values.items() if v is not None and math.isfinite(v)}
    if not finite:
        return None
    lower = metric in LOWER_IS_BETTER
    pick = min if lower else max
    return pick(finite, key=finite.get)


def markdown_report(report: AggregateReport, metrics=ALL_METRICS, digits: int = 2) -> str:
    """Absolute table (mean ± CI) and improvement table; best value per column in bold."""
    lines = [f"## {report.dataset}: absolute results (mean ± 95% CI)", ""]
    lines.append("| Model | " + " | ".join(METRIC_HEADERS[m] for m in metrics) + " |")
    lines.append("|---|" + "---|" * len(metrics))
    best = {m: _best({t: s[m].mean for t, s in report.models.items()}, m, False) for m in metrics}
    for tag, summary in report.models.items():
        cells = []
        for m in metrics:
            text = f"{summary[m].mean:.{digits}f} ± {summary[m].ci95:.{digits}f}"
            cells.append(f"**{text}**" if best[m] == tag and len(report.models) > 1 else text)
        lines.append(f"| {DISPLAY.get(tag, tag)} | " + " | ".join(cells) + " |")

    others = [t for t in report.models if t != BASELINE]
    if others:
        lines += ["", f"## {report.dataset}: change vs {DISPLAY[BASELINE]}", ""]
        lines.append("| Model | " + " | ".join(METRIC_HEADERS[m] for m in metrics) + " |")
        lines.append("|---|" + "---|" * len(metrics))
        best = {m: _best({t: report.models[t][m].improvement_pct for t in others}, m, True) for m in metrics}
        for tag in others:
            cells = []
            for m in metrics:
                pct = report.models[tag][m].improvement_pct
                text = "n/a" if pct is None else f"{pct:.2f}%"
                cells.append(f"**{text}**" if best[m] == tag and len(others) > 1 else text)
            lines.append(f"| {DISPLAY.get(tag, tag)} | " + " | ".join(cells) + " |")
    if report.skipped:
        lines += [""] + [f"- {DISPLAY.get(t, t)} skipped: {reason}" for t, reason in report.skipped.items()]
    if report.warnings:
        lines += [""] + [f"- warning: {w}" for w in report.warnings]
    return "\n".join(lines) + "\n"


def emit_report(report: AggregateReport, fmt: str, path, metrics=ALL_METRICS) -> Path:
    if not report.models:
        raise ConfigError("empty report")
    path = Path(path)
    if fmt == "csv":
        write_report_csv(report, path, metrics)
    elif fmt == "markdown":
        path.write_text(markdown_report(report, metrics), encoding="utf-8")
    else:
        raise ConfigError(f"unknown report format {fmt!r}")
    return path


def write_runs(results, dataset: str, runs_path, timings_path=None) -> None:
    """Per-run quality metrics (deterministic) and, separately, wall-clock times."""
    with open(runs_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_COLUMNS)
        for r in results:
            if r.ok:
                w.writerow([dataset, r.model, r.seed, "ok", "", *(_fmt(getattr(r.metrics, m)) for m in QUALITY_METRICS), r.epochs_run])
            else:
                w.writerow([dataset, r.model, r.seed, "skipped", r.skipped, *([""] * len(QUALITY_METRICS)), ""])
    if timings_path is not None:
        with open(timings_path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TIMING_COLUMNS)
            for r in results:
                if r.ok:
                    w.writerow([dataset, r.model, r.seed, _fmt(r.metrics.training_time_seconds)])


def read_runs(runs_path, timings_path=None) -> tuple[str, list[RunResult]]:
    times = {}
    if timings_path is not None and Path(timings_path).is_file():
        with open(timings_path, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                times[(row["model"], int(row["seed"]))] = float(row[TIME_METRIC])
    results, dataset = [], ""
    with open(runs_path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RUN_COLUMNS:
            raise ConfigError(f"{runs_path}: unexpected columns {reader.fieldnames}")
        for row in reader:
            dataset = row["dataset"]
            seed = int(row["seed"])
            if row["status"] == "skipped":
                results.append(RunResult(row["model"], seed, skipped=row["reason"]))
                continue
            values = MetricValues(**{m: float(row[m]) for m in QUALITY_METRICS},
                                  training_time_seconds=times.get((row["model"], seed), math.nan))
            results.append(RunResult(row["model"], seed, values, int(row["epochs_run"])))
    return dataset, results


def write_outputs(report: AggregateReport, out_dir, fmt: str = "both") -> list[Path]:
    """``report.csv`` (quality metrics), ``timing.csv`` (training time) and ``report.md``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt in ("csv", "both"):
        written.append(emit_report(report, "csv", out_dir / "report.csv", QUALITY_METRICS))
        written.append(emit_report(report, "csv", out_dir / "timing.csv", (TIME_METRIC,)))
    if fmt in ("markdown", "both"):
        written.append(emit_report(report, "markdown", out_dir / "report.md"))
    return written


def bench(cfg: ExperimentConfig, fmt: str = "both") -> tuple[AggregateReport, list[Path]]:
    results = run_experiment(cfg)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_runs(results, cfg.dataset_name, out_dir / "runs.csv", out_dir / "run_timings.csv")
    report = aggregate(results, dataset=cfg.dataset_name)
    return report, [out_dir / "runs.csv", out_dir / "run_timings.csv", *write_outputs(report, out_dir, fmt)]
