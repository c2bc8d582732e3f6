"""Doubly Robust joint learning of a rating model and an error-imputation model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import DataSplit
from .mf import HyperParams, MfModel, accumulate, l2_penalty
from .propensity import Propensities
from .training import TrainingError, batch_indices, fit_loop, init_model, run_streams


@dataclass
class ImputationModel:
    """Imputed rating ``clip(global_value + item_offset[i])``.

    Training keeps every imputed value inside the rating range by projecting
    the parameters after each step, so the clip never binds in practice.
    """

    global_value: float
    item_offset: np.ndarray
    rating_min: float
    rating_max: float

    @classmethod
    def init(cls, num_items, global_value, rating_min, rating_max):
        g = float(np.clip(global_value, rating_min, rating_max))
        return cls(g, np.zeros(num_items), rating_min, rating_max)

    def impute(self, items) -> np.ndarray:
        return np.clip(self.global_value + self.item_offset[np.asarray(items)], self.rating_min, self.rating_max)

    def raw(self, items) -> np.ndarray:
        return self.global_value + self.item_offset[np.asarray(items)]

    def project(self) -> None:
        self.global_value = float(np.clip(self.global_value, self.rating_min, self.rating_max))
        np.clip(self.item_offset, self.rating_min - self.global_value, self.rating_max - self.global_value,
                out=self.item_offset)

    def copy(self) -> "ImputationModel":
        return ImputationModel(self.global_value, self.item_offset.copy(), self.rating_min, self.rating_max)


def dr_risk(pred, imputed, observed, truth, propensity) -> float:
    """Doubly robust estimate of the mean squared error over all pairs.

    All arguments are arrays over the same set of pairs; ``truth`` is only
    read where ``observed`` is true.
    """
    pred = np.asarray(pred, dtype=np.float64)
    observed = np.asarray(observed, dtype=bool)
    e_hat = (pred - np.asarray(imputed, dtype=np.float64)) ** 2
    e = np.where(observed, (pred - np.where(observed, truth, 0.0)) ** 2, 0.0)
    correction = np.where(observed, (e - e_hat) / np.asarray(propensity, dtype=np.float64), 0.0)
    return float(np.mean(e_hat + correction))


def prediction_loss(model: MfModel, imp: ImputationModel, obs, obs_props, pairs, pair_scale: float, l2: float,
                    imputation_weight: float = 1.0, norm: float | None = None):
    """DR objective for one batch and its gradient with respect to the rating model.

    The all-pairs imputed-error sum is split into its observed part, computed
    exactly on ``obs`` (``(users, items, ratings)`` from the biased log), and
    its unobserved part, estimated from ``pairs`` sampled among unobserved
    pairs, each counted ``pair_scale`` times. Per observed pair the objective
    is ``w * e_hat + (e - e_hat) / p``; per sampled pair ``w * e_hat``, where
    ``w`` is the imputation weight. Divided by ``norm`` (default: observed
    batch size).
    """
    u, i, r = obs
    n = len(u) if norm is None else norm
    w = imputation_weight
    s = model.score_pairs(u, i)
    r_tilde = imp.impute(i)
    e = (s - r) ** 2
    e_hat = (s - r_tilde) ** 2
    value = float(np.sum(w * e_hat + (e - e_hat) / obs_props)) / n
    reg, grad = l2_penalty(model, u, i, l2 / len(u))
    accumulate(grad, model, u, i, (2.0 * w * (s - r_tilde) + 2.0 * (r_tilde - r) / obs_props) / n)
    pu, pi = pairs
    if len(pu):
        sp = model.score_pairs(pu, pi)
        rt = imp.impute(pi)
        value += w * pair_scale * float(np.sum((sp - rt) ** 2)) / n
        accumulate(grad, model, pu, pi, w * pair_scale * 2.0 * (sp - rt) / n)
    return value + reg, grad


def imputation_loss(model: MfModel, imp: ImputationModel, obs, obs_props, uniform, l2: float):
    """Error-imputation objective and gradient ``(d_global, d_offsets)``.

    Squared gap between true and imputed error on the biased batch,
    inverse-propensity weighted, plus squared error of the imputed rating on
    the randomized batch.
    """
    u, i, r = obs
    n = len(u)
    s = model.score_pairs(u, i)
    r_tilde = imp.raw(i)
    gap = (s - r) ** 2 - (s - r_tilde) ** 2
    value = float(np.sum(gap**2 / obs_props)) / n
    d_rt = 2.0 * gap * 2.0 * (s - r_tilde) / obs_props / n
    d_offset = np.zeros_like(imp.item_offset)
    np.add.at(d_offset, i, d_rt)
    d_global = float(d_rt.sum())

    uu, ui, ur = uniform
    if len(uu):
        m = len(uu)
        rt_u = imp.raw(ui)
        value += float(np.sum((rt_u - ur) ** 2)) / m
        d_u = 2.0 * (rt_u - ur) / m
        np.add.at(d_offset, ui, d_u)
        d_global += float(d_u.sum())

    value += l2 * float(np.sum(imp.item_offset**2))
    d_offset += 2.0 * l2 * imp.item_offset
    return value, d_global, d_offset


def calibrated(propensities: np.ndarray, num_pairs: int) -> np.ndarray:
    """Rescale so that the inverse propensities of the observed pairs sum to ``num_pairs``.

    Popularity-based estimates are only known up to a constant; this fixes
    the constant so the correction term and the all-pairs term are on the
    same scale.
    """
    propensities = np.asarray(propensities, dtype=np.float64)
    return propensities * (np.sum(1.0 / propensities) / num_pairs)


def sample_pairs(rng, num_users: int, num_items: int, rate: float):
    n = max(1, int(round(rate * num_users * num_items)))
    return rng.integers(0, num_users, size=n), rng.integers(0, num_items, size=n)


def sample_unobserved(rng, num_users: int, num_items: int, rate: float, observed_keys: np.ndarray):
    """Uniform pairs (with replacement) not in ``observed_keys`` (sorted ``user * num_items + item``)."""
    pu, pi = sample_pairs(rng, num_users, num_items, rate)
    keys = pu * num_items + pi
    pos = np.clip(np.searchsorted(observed_keys, keys), 0, len(observed_keys) - 1)
    keep = observed_keys[pos] != keys
    return pu[keep], pi[keep]


def train_dr(split: DataSplit, hp: HyperParams, seed: int, props: Propensities):
    """Alternate an imputation pass and a DR prediction pass each epoch.

    Returns ``(model, imputation_model, report)``.
    """
    if len(split.d_u) == 0:
        raise TrainingError("DR requires randomized data")
    rows, uni = split.d_t, split.d_u
    rng_init, rng_batch, rng_pairs, rng_uni = run_streams(seed)
    model = init_model(split, hp, rng_init, rows)
    imp = ImputationModel.init(split.num_items, float(np.mean(uni.ratings)), split.rating_min, split.rating_max)
    n_all = split.num_users * split.num_items
    obs_props = calibrated(props.for_pairs(rows.items, rows.ratings), n_all)
    obs_keys = np.unique(rows.users * split.num_items + rows.items)
    n_unobserved = n_all - len(obs_keys)

    def epoch_fn(epoch):
        batches = batch_indices(len(rows), hp.batch_size, rng_batch)
        uni_batches = np.array_split(rng_uni.permutation(len(uni)), len(batches))
        for idx, uidx in zip(batches, uni_batches):
            _, d_g, d_o = imputation_loss(
                model, imp, (rows.users[idx], rows.items[idx], rows.ratings[idx]), obs_props[idx],
                (uni.users[uidx], uni.items[uidx], uni.ratings[uidx]), hp.l2_reg,
            )
            imp.global_value -= hp.imputation_learning_rate * d_g
            imp.item_offset -= hp.imputation_learning_rate * d_o
            imp.project()

        pu, pi = sample_unobserved(rng_pairs, split.num_users, split.num_items, hp.all_pairs_sample_rate, obs_keys)
        pair_scale = n_unobserved / max(len(pu), 1)
        # total weight of one batch relative to plain MF
        weight_ratio = 1.0 + hp.imputation_weight * n_all / len(rows)
        pair_chunks = np.array_split(np.arange(len(pu)), len(batches))
        total = 0.0
        for idx, pidx in zip(batches, pair_chunks):
            loss, grad = prediction_loss(
                model, imp, (rows.users[idx], rows.items[idx], rows.ratings[idx]), obs_props[idx],
                (pu[pidx], pi[pidx]), pair_scale, hp.l2_reg, hp.imputation_weight, norm=len(idx) * weight_ratio,
            )
            model.apply(grad, hp.learning_rate)
            total += loss * len(idx)
        return total / len(rows)

    def snapshot():
        return model.copy(), imp.copy()

    def restore(state):
        m, im = state
        for block in MfModel.BLOCKS:
            setattr(model, block, getattr(m, block))
        imp.global_value, imp.item_offset = im.global_value, im.item_offset

    report = fit_loop(model, split, hp, epoch_fn, snapshot, restore)
    return model, imp, report
