"""Bi-level meta-weighting (AutoDebias-style) for MF.

The training loss on the biased log carries learnable per-example weights and
pseudo-labels for uniformly sampled pairs. A one-step lookahead of the model
is scored on the randomized sample, and that loss is differentiated back to
the weighting parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import DataSplit, Interactions
from .dr import sample_pairs
from .mf import Grad, HyperParams, MfModel, accumulate, weighted_squared_loss
from .training import TrainingError, batch_indices, fit_loop, init_model, run_streams

NUM_BUCKETS = 5


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def quantile_buckets(counts: np.ndarray, n_buckets: int = NUM_BUCKETS) -> np.ndarray:
    """Bucket index per entry from the count quantiles; equal counts share a bucket."""
    edges = np.quantile(counts, np.linspace(0, 1, n_buckets + 1)[1:-1])
    return np.searchsorted(edges, counts, side="right").astype(np.int64)


@dataclass
class MetaFeatures:
    """One-hot meta-features: user-activity quintile, item-popularity quintile, rating level."""

    user_bucket: np.ndarray
    item_bucket: np.ndarray
    levels: np.ndarray

    @classmethod
    def from_log(cls, rows: Interactions, num_users: int, num_items: int, levels) -> "MetaFeatures":
        return cls(
            quantile_buckets(np.bincount(rows.users, minlength=num_users)),
            quantile_buckets(np.bincount(rows.items, minlength=num_items)),
            np.asarray(levels, dtype=np.float64),
        )

    @property
    def pair_dim(self) -> int:
        return 2 * NUM_BUCKETS

    @property
    def obs_dim(self) -> int:
        return 2 * NUM_BUCKETS + len(self.levels)

    def pair(self, users, items) -> np.ndarray:
        x = np.zeros((len(users), self.pair_dim))
        rows = np.arange(len(users))
        x[rows, self.user_bucket[users]] = 1.0
        x[rows, NUM_BUCKETS + self.item_bucket[items]] = 1.0
        return x

    def observed(self, users, items, ratings) -> np.ndarray:
        x = np.zeros((len(users), self.obs_dim))
        x[:, : self.pair_dim] = self.pair(users, items)
        level = np.abs(np.asarray(ratings)[:, None] - self.levels[None, :]).argmin(axis=1)
        x[np.arange(len(users)), self.pair_dim + level] = 1.0
        return x


@dataclass
class MetaWeights:
    phi1: np.ndarray
    phi2: np.ndarray
    m: np.ndarray
    features: MetaFeatures
    rating_min: float
    rating_max: float

    @classmethod
    def zeros(cls, features: MetaFeatures, rating_min: float, rating_max: float) -> "MetaWeights":
        return cls(np.zeros(features.obs_dim), np.zeros(features.pair_dim), np.zeros(features.pair_dim),
                   features, rating_min, rating_max)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.phi1, self.phi2, self.m])

    def with_flat(self, vec) -> "MetaWeights":
        a, b = len(self.phi1), len(self.phi2)
        vec = np.asarray(vec, dtype=np.float64)
        return MetaWeights(vec[:a].copy(), vec[a : a + b].copy(), vec[a + b :].copy(),
                           self.features, self.rating_min, self.rating_max)

    def copy(self) -> "MetaWeights":
        return self.with_flat(self.flat())

    def obs_weights(self, x_obs) -> np.ndarray:
        return np.exp(x_obs @ self.phi1)

    def pair_weights(self, x_pair) -> np.ndarray:
        return np.exp(x_pair @ self.phi2)

    def pseudo_labels(self, x_pair) -> np.ndarray:
        return self.rating_min + (self.rating_max - self.rating_min) * _sigmoid(x_pair @ self.m)


@dataclass
class MetaBatch:
    """Everything one meta-iteration needs, with meta-features precomputed."""

    obs_users: np.ndarray
    obs_items: np.ndarray
    obs_ratings: np.ndarray
    x_obs: np.ndarray
    pair_users: np.ndarray
    pair_items: np.ndarray
    x_pair: np.ndarray
    uni_users: np.ndarray
    uni_items: np.ndarray
    uni_ratings: np.ndarray


def train_loss(model: MfModel, meta: MetaWeights, batch: MetaBatch, imputation_weight: float, l2: float):
    """Weighted biased-log loss plus weighted pseudo-label loss; value and gradient in theta."""
    w1 = meta.obs_weights(batch.x_obs)
    value, grad = weighted_squared_loss(model, batch.obs_users, batch.obs_items, batch.obs_ratings, w1, l2)
    if len(batch.pair_users) and imputation_weight > 0:
        n = len(batch.pair_users)
        w2 = meta.pair_weights(batch.x_pair)
        m = meta.pseudo_labels(batch.x_pair)
        resid = model.score_pairs(batch.pair_users, batch.pair_items) - m
        value += imputation_weight * float(np.sum(w2 * resid * resid)) / n
        accumulate(grad, model, batch.pair_users, batch.pair_items, imputation_weight * 2.0 * w2 * resid / n)
    return value, grad


def uniform_loss(model: MfModel, batch: MetaBatch):
    """Mean squared error on the randomized batch; value and gradient in theta."""
    n = len(batch.uni_users)
    resid = model.score_pairs(batch.uni_users, batch.uni_items) - batch.uni_ratings
    grad = Grad.zeros_like(model)
    accumulate(grad, model, batch.uni_users, batch.uni_items, 2.0 * resid / n)
    return float(np.sum(resid * resid)) / n, grad


def _score_directional(model: MfModel, g: Grad, users, items) -> np.ndarray:
    """``<g, d score_ui / d theta>`` for each pair."""
    return (
        np.einsum("ij,ij->i", g.user_factors[users], model.item_factors[items])
        + np.einsum("ij,ij->i", model.user_factors[users], g.item_factors[items])
        + g.user_bias[users]
        + g.item_bias[items]
        + g.global_bias
    )


def lookahead_loss(model: MfModel, meta: MetaWeights, batch: MetaBatch, hp: HyperParams) -> float:
    """Uniform loss after one tentative SGD step under ``meta``."""
    _, grad = train_loss(model, meta, batch, hp.imputation_weight, hp.l2_reg)
    return uniform_loss(model.stepped(grad, hp.learning_rate), batch)[0]


def meta_gradient(model: MfModel, meta: MetaWeights, batch: MetaBatch, hp: HyperParams):
    """Gradient of the lookahead uniform loss with respect to ``(phi1, phi2, m)``.

    Returns ``(loss, flat_gradient, tentative_model)``.
    """
    lr, iw = hp.learning_rate, hp.imputation_weight
    _, grad = train_loss(model, meta, batch, iw, hp.l2_reg)
    tentative = model.stepped(grad, lr)
    loss_u, g_u = uniform_loss(tentative, batch)

    # d theta'/d phi = -lr * d(grad_theta L_T)/d phi; L_T is linear in the weights
    n_obs = len(batch.obs_users)
    a_obs = _score_directional(model, g_u, batch.obs_users, batch.obs_items)
    resid_obs = model.score_pairs(batch.obs_users, batch.obs_items) - batch.obs_ratings
    w1 = meta.obs_weights(batch.x_obs)
    d_phi1 = batch.x_obs.T @ (2.0 * resid_obs * a_obs * w1 / n_obs)

    d_phi2 = np.zeros_like(meta.phi2)
    d_m = np.zeros_like(meta.m)
    n_pair = len(batch.pair_users)
    if n_pair and iw > 0:
        a_pair = _score_directional(model, g_u, batch.pair_users, batch.pair_items)
        w2 = meta.pair_weights(batch.x_pair)
        sig = _sigmoid(batch.x_pair @ meta.m)
        m = meta.rating_min + (meta.rating_max - meta.rating_min) * sig
        resid_pair = model.score_pairs(batch.pair_users, batch.pair_items) - m
        d_phi2 = batch.x_pair.T @ (iw * 2.0 * resid_pair * a_pair * w2 / n_pair)
        dm_dz = (meta.rating_max - meta.rating_min) * sig * (1.0 - sig)
        d_m = batch.x_pair.T @ (iw * -2.0 * w2 * a_pair * dm_dz / n_pair)

    flat = -lr * np.concatenate([d_phi1, d_phi2, d_m])
    return loss_u, flat, tentative


def train_autodebias(split: DataSplit, hp: HyperParams, seed: int = 0, meta_updates: bool = True):
    """Three phases per mini-batch: tentative step, meta step on the weights, committed step.

    ``meta_updates=False`` skips the first two phases (weights stay at
    their initial values). Returns ``(model, meta_weights, report)``.
    """
    if len(split.d_u) == 0:
        raise TrainingError("AutoDebias requires randomized data")
    rows, uni = split.d_t, split.d_u
    rng_init, rng_batch, rng_pairs, rng_uni = run_streams(seed)
    model = init_model(split, hp, rng_init, rows)
    levels = np.unique(np.concatenate([rows.ratings, uni.ratings]))
    features = MetaFeatures.from_log(rows, split.num_users, split.num_items, levels)
    meta = MetaWeights.zeros(features, split.rating_min, split.rating_max)
    x_obs_all = features.observed(rows.users, rows.items, rows.ratings)

    def epoch_fn(epoch):
        nonlocal meta
        batches = batch_indices(len(rows), hp.batch_size, rng_batch)
        pu, pi = sample_pairs(rng_pairs, split.num_users, split.num_items, hp.all_pairs_sample_rate)
        pair_chunks = np.array_split(np.arange(len(pu)), len(batches))
        uni_size = min(len(uni), hp.batch_size)
        total = 0.0
        for idx, pidx in zip(batches, pair_chunks):
            uidx = rng_uni.choice(len(uni), size=uni_size, replace=False)
            batch = MetaBatch(
                rows.users[idx], rows.items[idx], rows.ratings[idx], x_obs_all[idx],
                pu[pidx], pi[pidx], features.pair(pu[pidx], pi[pidx]),
                uni.users[uidx], uni.items[uidx], uni.ratings[uidx],
            )
            if meta_updates:
                _, g_meta, _ = meta_gradient(model, meta, batch, hp)
                meta = meta.with_flat(meta.flat() - hp.meta_learning_rate * g_meta)
            loss, grad = train_loss(model, meta, batch, hp.imputation_weight, hp.l2_reg)
            model.apply(grad, hp.learning_rate)
            total += loss * len(idx)
        return total / len(rows)

    def snapshot():
        return model.copy(), meta.copy()

    def restore(state):
        nonlocal meta
        m, mw = state
        for block in MfModel.BLOCKS:
            setattr(model, block, getattr(m, block))
        meta = mw

    report = fit_loop(model, split, hp, epoch_fn, snapshot, restore)
    return model, meta, report
