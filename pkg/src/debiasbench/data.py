"""Interaction tables, datasets and the biased/randomized split protocol."""

from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np


class FeedbackKind(str, enum.Enum):
    EXPLICIT = "explicit"
    IMPLICIT = "implicit"


class Source(str, enum.Enum):
    BIASED = "biased-log"
    RANDOMIZED = "randomized"


# integer codes used in the columnar store
_SOURCE_CODES = {Source.BIASED: 0, Source.RANDOMIZED: 1}
_SOURCE_FROM_CODE = {v: k for k, v in _SOURCE_CODES.items()}


class DataError(ValueError):
    """Raised when input data cannot form a valid dataset or split."""


@dataclass(frozen=True)
class Interaction:
    user: int
    item: int
    rating: float
    source: Source = Source.BIASED


class Interactions:
    """Columnar, immutable table of interactions.

    Rows can be iterated as :class:`Interaction` objects, but training and
    evaluation code works on the ``users``/``items``/``ratings`` arrays.
    """

    __slots__ = ("users", "items", "ratings", "_source_codes")

    def __init__(self, users, items, ratings, sources=None):
        users = np.asarray(users, dtype=np.int64).reshape(-1)
        items = np.asarray(items, dtype=np.int64).reshape(-1)
        ratings = np.asarray(ratings, dtype=np.float64).reshape(-1)
        n = len(users)
        if len(items) != n or len(ratings) != n:
            raise DataError("column lengths differ")
        if sources is None:
            codes = np.zeros(n, dtype=np.int8)
        elif isinstance(sources, (Source, str)):
            codes = np.full(n, _SOURCE_CODES[Source(sources)], dtype=np.int8)
        else:
            arr = sources if isinstance(sources, np.ndarray) else list(sources)
            if isinstance(arr, np.ndarray) and arr.dtype.kind in "iub":
                codes = arr.astype(np.int8)
            else:
                codes = np.array(
                    [int(s) if isinstance(s, (int, np.integer)) else _SOURCE_CODES[Source(s)] for s in arr],
                    dtype=np.int8,
                )
            if len(codes) != n:
                raise DataError("column lengths differ")
        for arr in (users, items, ratings, codes):
            arr.setflags(write=False)
        self.users = users
        self.items = items
        self.ratings = ratings
        self._source_codes = codes

    @classmethod
    def from_rows(cls, rows: Sequence[Interaction]) -> "Interactions":
        rows = list(rows)
        return cls(
            [r.user for r in rows],
            [r.item for r in rows],
            [r.rating for r in rows],
            np.array([_SOURCE_CODES[Source(r.source)] for r in rows], dtype=np.int8),
        )

    @classmethod
    def empty(cls) -> "Interactions":
        return cls([], [], [])

    @classmethod
    def concat(cls, parts: Sequence["Interactions"]) -> "Interactions":
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(
            np.concatenate([p.users for p in parts]),
            np.concatenate([p.items for p in parts]),
            np.concatenate([p.ratings for p in parts]),
            np.concatenate([p.source_codes for p in parts]),
        )

    @property
    def source_codes(self) -> np.ndarray:
        return self._source_codes

    @property
    def is_randomized(self) -> np.ndarray:
        return self._source_codes == _SOURCE_CODES[Source.RANDOMIZED]

    def sources(self) -> list[Source]:
        return [_SOURCE_FROM_CODE[int(c)] for c in self._source_codes]

    def with_source(self, source: Source) -> "Interactions":
        return Interactions(self.users, self.items, self.ratings, source)

    def select(self, index) -> "Interactions":
        index = np.asarray(index)
        return Interactions(
            self.users[index], self.items[index], self.ratings[index], self._source_codes[index]
        )

    def __len__(self) -> int:
        return len(self.users)

    def __getitem__(self, k: int) -> Interaction:
        return Interaction(
            int(self.users[k]),
            int(self.items[k]),
            float(self.ratings[k]),
            _SOURCE_FROM_CODE[int(self._source_codes[k])],
        )

    def __iter__(self) -> Iterator[Interaction]:
        for k in range(len(self)):
            yield self[k]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Interactions):
            return NotImplemented
        return (
            np.array_equal(self.users, other.users)
            and np.array_equal(self.items, other.items)
            and np.array_equal(self.ratings, other.ratings)
            and np.array_equal(self._source_codes, other._source_codes)
        )

    def __repr__(self) -> str:
        return f"Interactions(n={len(self)})"


def _as_interactions(rows) -> Interactions:
    if isinstance(rows, Interactions):
        return rows
    return Interactions.from_rows(rows)


@dataclass(frozen=True, eq=False)
class Dataset:
    """A named interaction log over dense 0-based user and item ids.

    ``user_ids``/``item_ids`` optionally hold the raw ids of the source
    release, indexed by dense id.
    """

    name: str
    num_users: int
    num_items: int
    kind: FeedbackKind
    rating_min: float
    rating_max: float
    interactions: Interactions
    user_ids: np.ndarray | None = None
    item_ids: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", FeedbackKind(self.kind))
        object.__setattr__(self, "interactions", _as_interactions(self.interactions))

    def __len__(self) -> int:
        return len(self.interactions)

    def by_source(self, source: Source) -> Interactions:
        mask = self.interactions.source_codes == _SOURCE_CODES[Source(source)]
        return self.interactions.select(np.flatnonzero(mask))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.name == other.name
            and self.num_users == other.num_users
            and self.num_items == other.num_items
            and self.kind == other.kind
            and self.rating_min == other.rating_min
            and self.rating_max == other.rating_max
            and self.interactions == other.interactions
        )


@dataclass(frozen=True)
class Violation:
    row: int | None
    kind: str
    message: str


def validate_dataset(ds: Dataset) -> list[Violation]:
    """Return every invariant violation in ``ds``; an empty list means valid."""
    out: list[Violation] = []
    if ds.num_users < 1:
        out.append(Violation(None, "dimension", f"num_users={ds.num_users} < 1"))
    if ds.num_items < 1:
        out.append(Violation(None, "dimension", f"num_items={ds.num_items} < 1"))
    inter = ds.interactions
    if len(inter) == 0:
        out.append(Violation(None, "empty", "dataset has no interactions"))
        return out

    bad_user = (inter.users < 0) | (inter.users >= ds.num_users)
    bad_item = (inter.items < 0) | (inter.items >= ds.num_items)
    for k in np.flatnonzero(bad_user):
        out.append(Violation(int(k), "out-of-range", f"user {inter.users[k]} not in [0, {ds.num_users})"))
    for k in np.flatnonzero(bad_item):
        out.append(Violation(int(k), "out-of-range", f"item {inter.items[k]} not in [0, {ds.num_items})"))

    r = inter.ratings
    if ds.kind is FeedbackKind.IMPLICIT:
        bad_rating = ~np.isin(r, (0.0, 1.0))
        scale = "{0, 1}"
    else:
        bad_rating = ~np.isfinite(r) | (r < ds.rating_min) | (r > ds.rating_max)
        scale = f"[{ds.rating_min}, {ds.rating_max}]"
    for k in np.flatnonzero(bad_rating):
        out.append(Violation(int(k), "out-of-scale", f"rating {r[k]} not in {scale}"))

    seen: set[tuple[int, int, int]] = set()
    for k, key in enumerate(zip(inter.users.tolist(), inter.items.tolist(), inter.source_codes.tolist())):
        if key in seen:
            out.append(Violation(k, "duplicate", f"duplicate triple (user={key[0]}, item={key[1]}, source={_SOURCE_FROM_CODE[key[2]].value})"))
        seen.add(key)
    return out


@dataclass(frozen=True, eq=False)
class DataSplit:
    """Four-way partition: biased training, randomized aid, validation, test.

    Carries the dataset metadata the trainers and metrics need.
    """

    d_t: Interactions
    d_u: Interactions
    d_v: Interactions
    d_te: Interactions
    num_users: int
    num_items: int
    kind: FeedbackKind = FeedbackKind.EXPLICIT
    rating_min: float = 1.0
    rating_max: float = 5.0
    positive_threshold: float = 4.0
    name: str = ""

    @property
    def has_randomized(self) -> bool:
        return len(self.d_u) > 0

    def labels(self, ratings: np.ndarray) -> np.ndarray:
        """Binary relevance labels used by AUC."""
        return (np.asarray(ratings) >= self.positive_threshold).astype(np.int8)


def split_sizes(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    """Round-half-up sizes for the first two parts; the remainder goes to the third."""
    r1, r2, _ = ratios
    n_u = int(math.floor(r1 * n + 0.5))
    n_v = int(math.floor(r2 * n + 0.5))
    if n_u + n_v > n:
        raise DataError(f"ratios {ratios} overflow {n} rows")
    return n_u, n_v, n - n_u - n_v


def _check_ratios(ratios) -> tuple[float, float, float]:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise DataError(f"ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"ratios must sum to 1, got {sum(ratios)}")
    return ratios


def fisher_yates(n: int, seed: int) -> np.ndarray:
    """Permutation of ``range(n)`` by Fisher-Yates over an MT19937 stream."""
    rng = random.Random(seed)
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = int(rng.random() * (i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return np.asarray(perm, dtype=np.int64)


def split_randomized(
    randomized, ratios=(0.05, 0.05, 0.90), seed: int = 0
) -> tuple[Interactions, Interactions, Interactions]:
    """Shuffle the randomized log and cut it into (d_u, d_v, d_te)."""
    randomized = _as_interactions(randomized)
    ratios = _check_ratios(ratios)
    if len(randomized) == 0:
        raise DataError("no randomized data")
    if not np.all(randomized.is_randomized):
        raise DataError("split_randomized expects only randomized-source interactions")
    n = len(randomized)
    n_u, n_v, _ = split_sizes(n, ratios)
    perm = fisher_yates(n, seed)
    return (
        randomized.select(perm[:n_u]),
        randomized.select(perm[n_u : n_u + n_v]),
        randomized.select(perm[n_u + n_v :]),
    )


def attach_biased(d_t, parts, **meta) -> DataSplit:
    """Assemble a :class:`DataSplit` from the biased log and randomized parts.

    ``meta`` is forwarded to :class:`DataSplit` (dimensions, scale, ...).
    """
    d_t = _as_interactions(d_t)
    d_u, d_v, d_te = (_as_interactions(p) for p in parts)
    if len(d_t) == 0:
        raise DataError("biased training set is empty")
    if np.any(d_t.is_randomized):
        raise DataError("d_t contains randomized-source interactions")
    for name, part in (("d_u", d_u), ("d_v", d_v), ("d_te", d_te)):
        if len(part) and not np.all(part.is_randomized):
            raise DataError(f"{name} contains biased-source interactions")
    if "num_users" not in meta or "num_items" not in meta:
        all_rows = Interactions.concat([d_t, d_u, d_v, d_te])
        meta.setdefault("num_users", int(all_rows.users.max()) + 1)
        meta.setdefault("num_items", int(all_rows.items.max()) + 1)
    return DataSplit(d_t=d_t, d_u=d_u, d_v=d_v, d_te=d_te, **meta)


def positive_threshold_for(kind: FeedbackKind, rating_max: float) -> float:
    # explicit 1..5 data: ratings >= 4 count as positive feedback
    if FeedbackKind(kind) is FeedbackKind.IMPLICIT:
        return 1.0
    return max(rating_max - 1.0, 1.0)


def make_split(
    biased: Dataset,
    randomized: Dataset | None,
    ratios=(0.05, 0.05, 0.90),
    seed: int = 0,
    holdout=(0.1, 0.2),
) -> DataSplit:
    """Build the experiment split for a (biased, randomized) dataset pair.

    Without randomized data, validation and test are held out of the biased
    log (fractions ``holdout``) and ``d_u`` stays empty, so only the methods
    that need no randomized sample can run.
    """
    meta = dict(
        num_users=max(biased.num_users, randomized.num_users if randomized else 0),
        num_items=max(biased.num_items, randomized.num_items if randomized else 0),
        kind=biased.kind,
        rating_min=biased.rating_min,
        rating_max=biased.rating_max,
        positive_threshold=positive_threshold_for(biased.kind, biased.rating_max),
        name=biased.name,
    )
    d_t = biased.interactions.with_source(Source.BIASED)
    if randomized is not None and len(randomized) > 0:
        parts = split_randomized(randomized.interactions.with_source(Source.RANDOMIZED), ratios, seed)
        return attach_biased(d_t, parts, **meta)

    n = len(d_t)
    n_v = int(math.floor(holdout[0] * n + 0.5))
    n_te = int(math.floor(holdout[1] * n + 0.5))
    if n - n_v - n_te < 1 or n_v < 1 or n_te < 1:
        raise DataError("biased log too small for a validation/test holdout")
    perm = fisher_yates(n, seed)
    return DataSplit(
        d_t=d_t.select(np.sort(perm[n_v + n_te :])),
        d_u=Interactions.empty(),
        d_v=d_t.select(perm[:n_v]),
        d_te=d_t.select(perm[n_v : n_v + n_te]),
        **meta,
    )
