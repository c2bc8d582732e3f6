"""Accuracy, ranking and diversity metrics for debiased recommenders.

All functions are pure. Ranking metrics (AUC, NDCG, top-k lists) use the
model's raw score; RMSE uses the clamped rating prediction.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


METRIC_NAMES = ("rmse", "auc", "ndcg_at_5", "gini", "entropy", "training_time_seconds")


def rmse(pairs=None, *, predicted=None, true=None) -> float:
    """Root mean squared error over ``(predicted, true)`` pairs.

    Either pass a sequence of pairs or the two columns as keywords.
    """
    if pairs is not None:
        arr = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
        predicted, true = arr[:, 0], arr[:, 1]
    predicted = np.asarray(predicted, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if predicted.size == 0:
        raise MetricError("rmse of an empty set")
    return float(np.sqrt(np.mean((predicted - true) ** 2)))


def auc(scored=None, *, scores=None, labels=None) -> float:
    """Pooled rank-sum AUC; tied scores share their average rank."""
    if scored is not None:
        arr = np.asarray(scored, dtype=np.float64).reshape(-1, 2)
        scores, labels = arr[:, 0], arr[:, 1]
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC is undefined without both positive and negative labels")
    ranks = rankdata(scores, method="average")
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def dcg_at_k(relevances, k: int) -> float:
    rel = np.asarray(relevances, dtype=np.float64)[:k]
    discounts = np.log2(np.arange(2, len(rel) + 2))
    return float(np.sum((2.0**rel - 1.0) / discounts))


def ndcg_at_k(ranked, ideal=None, k: int = 5) -> float:
    """NDCG@k of relevances in model order.

    ``ideal`` is the relevance multiset to normalise against; by default the
    same values as ``ranked``. Returns 0 when the ideal DCG is 0.
    """
    if k < 1:
        raise MetricError("k must be >= 1")
    ideal = ranked if ideal is None else ideal
    idcg = dcg_at_k(np.sort(np.asarray(ideal, dtype=np.float64))[::-1], k)
    if idcg == 0.0:
        return 0.0
    return dcg_at_k(ranked, k) / idcg


def gini(popularity) -> float:
    phi = np.sort(np.asarray(popularity, dtype=np.float64))
    n = len(phi)
    if n == 0:
        raise MetricError("gini of an empty vector")
    if np.any(phi < 0):
        raise MetricError("popularity scores must be non-negative")
    total = phi.sum()
    if total <= 0:
        raise MetricError("gini of an all-zero vector")
    coef = 2.0 * np.arange(1, n + 1) - n - 1
    return float(np.dot(coef, phi) / (n * total))


def entropy(probabilities) -> float:
    """Shannon entropy in nats; zero-probability terms contribute nothing."""
    p = np.asarray(probabilities, dtype=np.float64)
    if p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise MetricError("entropy needs a probability vector summing to 1")
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


# --------------------------------------------------------------------------
# recommendation lists
# --------------------------------------------------------------------------


def topk_order(scores: np.ndarray, k: int) -> np.ndarray:
    """Column order of the top ``k`` per row: score descending, index ascending."""
    scores = np.atleast_2d(scores)
    order = np.argsort(-scores, axis=1, kind="stable")
    return order[:, : min(k, scores.shape[1])]


@dataclass(frozen=True)
class RecDistribution:
    items: np.ndarray
    counts: np.ndarray
    k: int

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    def gini(self) -> float:
        return gini(self.counts)

    def entropy(self) -> float:
        return entropy(self.probabilities)


def rec_distribution(model, users, candidates=None, k: int = 5, chunk: int = 2048) -> RecDistribution:
    """Count how often each candidate appears in the users' top-k lists.

    ``model`` needs ``score_matrix(users, items)``; candidates default to all
    items of the model.
    """
    users = np.unique(np.asarray(list(users) if not isinstance(users, np.ndarray) else users, dtype=np.int64))
    if users.size == 0:
        raise MetricError("empty user set")
    if k < 1:
        raise MetricError("k must be >= 1")
    if candidates is None:
        candidates = np.arange(model.num_items)
    candidates = np.unique(np.asarray(list(candidates) if not isinstance(candidates, np.ndarray) else candidates, dtype=np.int64))
    counts = np.zeros(len(candidates), dtype=np.int64)
    for start in range(0, len(users), chunk):
        block = model.score_matrix(users[start : start + chunk], candidates)
        top = topk_order(block, k)
        counts += np.bincount(top.ravel(), minlength=len(candidates))
    return RecDistribution(items=candidates, counts=counts, k=k)


def per_user_ndcg(users, items, scores, relevance, k: int = 5) -> float:
    """Mean NDCG@k over users with at least one relevant item.

    Each user's held-out items are ranked by score (ties by item index).
    """
    users = np.asarray(users)
    items = np.asarray(items)
    scores = np.asarray(scores, dtype=np.float64)
    relevance = np.asarray(relevance, dtype=np.float64)
    order = np.lexsort((items, -scores, users))
    u_sorted = users[order]
    rel_sorted = relevance[order]
    bounds = np.flatnonzero(np.diff(u_sorted)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [len(u_sorted)]])
    values = []
    for s, e in zip(starts, ends):
        rel = rel_sorted[s:e]
        if not np.any(rel > 0):
            continue
        values.append(ndcg_at_k(rel, rel, k))
    if not values:
        raise MetricError("no user with a relevant held-out item")
    return float(np.mean(values))


@dataclass
class MetricValues:
    rmse: float
    auc: float
    ndcg_at_5: float
    gini: float
    entropy: float
    training_time_seconds: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate(model, split, k: int = 5, training_time_seconds: float = 0.0) -> MetricValues:
    """Score ``model`` on ``split.d_te``.

    Gini and entropy come from the top-k distribution over all test users
    with every item as a candidate.
    """
    test = split.d_te
    if len(test) == 0:
        raise MetricError("empty test set")
    scores = model.score_pairs(test.users, test.items)
    preds = model.predict_pairs(test.users, test.items)
    labels = split.labels(test.ratings)
    try:
        auc_value = auc(scores=scores, labels=labels)
    except MetricError:
        auc_value = math.nan
    dist = rec_distribution(model, test.users, np.arange(split.num_items), k)
    return MetricValues(
        rmse=rmse(predicted=preds, true=test.ratings),
        auc=auc_value,
        ndcg_at_5=per_user_ndcg(test.users, test.items, scores, test.ratings, k),
        gini=dist.gini(),
        entropy=dist.entropy(),
        training_time_seconds=training_time_seconds,
    )
