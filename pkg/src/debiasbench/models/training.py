"""Shared SGD loop, early stopping, and the MF / IPS trainers."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import metrics
from ..data import DataSplit, Interactions
from .mf import HyperParams, MfModel, weighted_squared_loss
from .propensity import Propensities

logger = logging.getLogger(__name__)


class TrainingError(ValueError):
    pass


@dataclass
class TrainReport:
    epochs_run: int = 0
    best_validation_auc: float = math.nan
    wall_time_seconds: float = 0.0
    loss_curve: list[tuple[int, float, float]] = field(default_factory=list)


def run_streams(seed: int, n: int = 4) -> list[np.random.Generator]:
    """Independent generators for init, batch order, pair sampling, meta batches."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def batch_indices(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[s : s + batch_size] for s in range(0, n, batch_size)]


def validation_auc(model: MfModel, split: DataSplit) -> float:
    val = split.d_v
    if len(val) == 0:
        return math.nan
    labels = split.labels(val.ratings)
    if labels.min() == labels.max():
        return math.nan
    return metrics.auc(scores=model.score_pairs(val.users, val.items), labels=labels)


def fit_loop(
    model: MfModel,
    split: DataSplit,
    hp: HyperParams,
    epoch_fn: Callable[[int], float],
    snapshot: Callable[[], object],
    restore: Callable[[object], None],
) -> TrainReport:
    """Run epochs until ``max_epochs`` or ``patience`` epochs without a better validation AUC.

    When validation AUC is undefined (no or one-class ``d_v``) training runs
    the full ``max_epochs`` and keeps the final parameters.
    """
    report = TrainReport()
    start = time.perf_counter()
    best_auc, best_state, since_best = -math.inf, None, 0
    for epoch in range(1, hp.max_epochs + 1):
        loss = epoch_fn(epoch)
        if not model.is_finite():
            raise TrainingError(f"non-finite parameters after epoch {epoch}")
        val = validation_auc(model, split)
        report.loss_curve.append((epoch, float(loss), float(val)))
        report.epochs_run = epoch
        if math.isnan(val):
            continue
        if val > best_auc:
            best_auc, best_state, since_best = val, snapshot(), 0
        else:
            since_best += 1
            if since_best >= hp.patience:
                break
    if best_state is not None:
        restore(best_state)
        report.best_validation_auc = best_auc
    report.wall_time_seconds = time.perf_counter() - start
    return report


def init_model(split: DataSplit, hp: HyperParams, rng, train_rows: Interactions) -> MfModel:
    return MfModel.init(
        split.num_users, split.num_items, hp.latent_dim, split.rating_min, split.rating_max,
        global_bias=float(np.mean(train_rows.ratings)), rng=rng, scale=hp.init_scale,
    )


def model_snapshot(model: MfModel):
    return model.copy()


def model_restore(model: MfModel, state: MfModel) -> None:
    for block in MfModel.BLOCKS:
        setattr(model, block, getattr(state, block))


def _fit_weighted(split: DataSplit, rows: Interactions, weights: np.ndarray, hp: HyperParams, seed: int):
    rng_init, rng_batch, _, _ = run_streams(seed)
    model = init_model(split, hp, rng_init, rows)

    def epoch_fn(epoch):
        total = 0.0
        for idx in batch_indices(len(rows), hp.batch_size, rng_batch):
            loss, grad = weighted_squared_loss(
                model, rows.users[idx], rows.items[idx], rows.ratings[idx], weights[idx], hp.l2_reg
            )
            model.apply(grad, hp.learning_rate)
            total += loss * len(idx)
        return total / len(rows)

    report = fit_loop(model, split, hp, epoch_fn, lambda: model_snapshot(model), lambda s: model_restore(model, s))
    return model, report


def train_mf(split: DataSplit, hp: HyperParams, seed: int = 0, training_source: str = "biased"):
    """Plain MF on ``d_t`` (``biased``) or on ``d_u`` alone (``uniform``)."""
    if training_source == "biased":
        rows = split.d_t
    elif training_source == "uniform":
        rows = split.d_u
    else:
        raise TrainingError(f"unknown training source {training_source!r}")
    if len(rows) == 0:
        raise TrainingError(f"empty training source: {training_source}")
    return _fit_weighted(split, rows, np.ones(len(rows)), hp, seed)


def ips_weights(props: Propensities, rows: Interactions) -> np.ndarray:
    """Inverse propensities rescaled to mean 1 over ``rows``.

    The rescaling is a constant factor on the objective, so the minimiser is
    unchanged while the step size stays comparable to plain MF.
    """
    inv = 1.0 / props.for_pairs(rows.items, rows.ratings)
    return inv / np.mean(inv)


def train_ips(split: DataSplit, hp: HyperParams, seed: int, props: Propensities):
    """MF on ``d_t`` with every squared error divided by its propensity."""
    rows = split.d_t
    if len(rows) == 0:
        raise TrainingError("empty training source: biased")
    if props.method == "item-popularity" and len(props.item_values) < split.num_items:
        raise TrainingError("propensities do not cover every item")
    return _fit_weighted(split, rows, ips_weights(props, rows), hp, seed)
