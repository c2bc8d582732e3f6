"""Observation-propensity estimates used by IPS and DR."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import Interactions
from .mf import HyperParams

ITEM_POPULARITY = "item-popularity"
NAIVE_BAYES = "naive-bayes"


class PropensityError(ValueError):
    pass


@dataclass(frozen=True)
class Propensities:
    """Clipped observation probabilities.

    ``item-popularity`` stores one value per item; ``naive-bayes`` stores one
    value per rating level (``levels``/``values``).
    """

    method: str
    floor: float
    item_values: np.ndarray | None = None
    levels: np.ndarray | None = None
    values: np.ndarray | None = None

    def for_pairs(self, items, ratings) -> np.ndarray:
        if self.method == ITEM_POPULARITY:
            out = self.item_values[np.asarray(items, dtype=np.int64)]
        else:
            ratings = np.asarray(ratings, dtype=np.float64)
            pos = np.searchsorted(self.levels, ratings)
            pos = np.clip(pos, 0, len(self.levels) - 1)
            if not np.all(self.levels[pos] == ratings):
                raise PropensityError("rating level without a propensity estimate")
            out = self.values[pos]
        if np.any(out < self.floor) or np.any(out > 1.0):
            raise PropensityError("propensity outside [floor, 1]")
        return out


def item_popularity(item_counts, floor: float, power: float) -> np.ndarray:
    counts = np.asarray(item_counts, dtype=np.float64)
    rel = counts / counts.max()
    return np.clip(rel**power, floor, 1.0)


def estimate_propensities(
    d_t: Interactions,
    num_items: int,
    method: str = ITEM_POPULARITY,
    hp: HyperParams | None = None,
    d_u: Interactions | None = None,
    num_users: int | None = None,
) -> Propensities:
    """Estimate ``p(observed | user, item)`` from the biased log.

    Item popularity: ``max(floor, (count_i / max count) ** power)``.
    Naive Bayes: ``P(r | o=1) P(o=1) / P(r)`` with ``P(r)`` taken from the
    randomized sample ``d_u`` and ``P(o=1) = |d_t| / (users * items)``.
    """
    hp = hp or HyperParams()
    if len(d_t) == 0:
        raise PropensityError("empty biased log")
    if method == ITEM_POPULARITY:
        counts = np.bincount(d_t.items, minlength=num_items)
        return Propensities(method, hp.propensity_floor,
                            item_values=item_popularity(counts, hp.propensity_floor, hp.propensity_power))
    if method == NAIVE_BAYES:
        if d_u is None or len(d_u) == 0:
            raise PropensityError("naive-bayes propensities need randomized data")
        if num_users is None:
            raise PropensityError("naive-bayes propensities need num_users")
        levels = np.unique(np.concatenate([d_t.ratings, d_u.ratings]))
        p_r_obs = np.array([np.mean(d_t.ratings == r) for r in levels])
        p_r = np.array([np.mean(d_u.ratings == r) for r in levels])
        p_obs = len(d_t) / (num_users * num_items)
        with np.errstate(divide="ignore", invalid="ignore"):
            raw = np.where(p_r > 0, p_r_obs * p_obs / p_r, 1.0)
        return Propensities(method, hp.propensity_floor, levels=levels,
                            values=np.clip(raw, hp.propensity_floor, 1.0))
    raise PropensityError(f"unknown propensity method {method!r}")
