"""Dataset loaders, the synthetic biased-logging generator and canonical CSV I/O."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import DataError, Dataset, FeedbackKind, Interactions, Source

logger = logging.getLogger(__name__)

COAT_BIASED_FILE = "train.ascii"
COAT_RANDOMIZED_FILE = "test.ascii"
CANONICAL_HEADER = ["user", "item", "rating", "source"]


# --------------------------------------------------------------------------
# COAT
# --------------------------------------------------------------------------


def _read_dense_matrix(path: Path) -> np.ndarray:
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    rows = []
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.split()
            if not fields:
                continue
            try:
                row = [int(f) for f in fields]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer entry") from None
            if rows and len(row) != len(rows[0]):
                raise DataError(f"{path}:{lineno}: ragged row ({len(row)} entries, expected {len(rows[0])})")
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: empty dataset")
    mat = np.asarray(rows, dtype=np.int64)
    if mat.min() < 0 or mat.max() > 5:
        raise DataError(f"{path}: entry outside 0..5")
    return mat


def _matrix_to_dataset(mat: np.ndarray, name: str, source: Source, shape) -> Dataset:
    users, items = np.nonzero(mat)
    if len(users) == 0:
        raise DataError(f"{name}: empty dataset")
    return Dataset(
        name=name,
        num_users=shape[0],
        num_items=shape[1],
        kind=FeedbackKind.EXPLICIT,
        rating_min=1.0,
        rating_max=5.0,
        interactions=Interactions(users, items, mat[users, items].astype(np.float64), source),
    )


def load_coat(directory, biased_file: str = COAT_BIASED_FILE, randomized_file: str = COAT_RANDOMIZED_FILE):
    """Load the COAT release as ``(biased, randomized)`` explicit datasets.

    The directory holds two dense users x items ASCII matrices where 0 means
    unobserved: ``train.ascii`` (self-selected) and ``test.ascii`` (uniform).
    """
    directory = Path(directory)
    biased = _read_dense_matrix(directory / biased_file)
    randomized = _read_dense_matrix(directory / randomized_file)
    if biased.shape != randomized.shape:
        raise DataError(f"COAT matrices disagree in shape: {biased.shape} vs {randomized.shape}")
    return (
        _matrix_to_dataset(biased, "coat", Source.BIASED, biased.shape),
        _matrix_to_dataset(randomized, "coat", Source.RANDOMIZED, biased.shape),
    )


def load_coat_matrix(path) -> Dataset:
    """Single dense matrix -> biased explicit dataset."""
    mat = _read_dense_matrix(Path(path))
    return _matrix_to_dataset(mat, Path(path).stem, Source.BIASED, mat.shape)


# --------------------------------------------------------------------------
# Yahoo!R3
# --------------------------------------------------------------------------


def _read_triples(path: Path) -> np.ndarray:
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            fields = line.split("\t") if "\t" in line else line.split()
            if len(fields) != 3:
                raise DataError(f"{path}:{lineno}: malformed line {line.rstrip()!r}")
            try:
                u, i, r = (int(f) for f in fields)
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed line {line.rstrip()!r}") from None
            if not 1 <= r <= 5:
                raise DataError(f"{path}:{lineno}: rating {r} outside 1..5")
            rows.append((u, i, r))
    if not rows:
        raise DataError(f"{path}: empty dataset")
    arr = np.asarray(rows, dtype=np.int64)
    pairs = arr[:, 0] * (arr[:, 1].max() + 1) + arr[:, 1]
    uniq, counts = np.unique(pairs, return_counts=True)
    if np.any(counts > 1):
        dup = uniq[counts > 1][0]
        first = arr[np.flatnonzero(pairs == dup)[0]]
        raise DataError(f"{path}: duplicate triple (user={first[0]}, item={first[1]})")
    return arr


def load_yahoo(train_path, test_path):
    """Load Yahoo!R3 as ``(biased, randomized)`` explicit datasets.

    Raw 1-based ids are densified over the union of both files, so ids keep
    their relative order; the raw ids are kept on the datasets.
    """
    train = _read_triples(Path(train_path))
    test = _read_triples(Path(test_path))
    user_ids = np.unique(np.concatenate([train[:, 0], test[:, 0]]))
    item_ids = np.unique(np.concatenate([train[:, 1], test[:, 1]]))

    def build(arr, source):
        return Dataset(
            name="yahoo",
            num_users=len(user_ids),
            num_items=len(item_ids),
            kind=FeedbackKind.EXPLICIT,
            rating_min=1.0,
            rating_max=5.0,
            interactions=Interactions(
                np.searchsorted(user_ids, arr[:, 0]),
                np.searchsorted(item_ids, arr[:, 1]),
                arr[:, 2].astype(np.float64),
                source,
            ),
            user_ids=user_ids,
            item_ids=item_ids,
        )

    return build(train, Source.BIASED), build(test, Source.RANDOMIZED)


# --------------------------------------------------------------------------
# synthetic generator
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs of the simulated shop.

    ``popularity_skew`` controls selection bias (Zipf weight of the logging
    policy), ``slots`` exposure bias (shelf size) and ``position_decay``
    position bias (probability that slot ``s`` is examined is
    ``position_decay ** s``; an unexamined slot is logged as a non-purchase).
    """

    num_users: int = 1000
    num_items: int = 100
    latent_dim: int = 8
    slots: int = 5
    position_decay: float = 0.7
    popularity_skew: float = 1.0
    biased_impressions: int = 20_000
    randomized_impressions: int = 20_000
    purchase_noise: float = 0.05
    seed: int = 0
    preference_scale: float = 2.0
    name: str = "synthetic"

    def validate(self) -> None:
        for field_name in ("num_users", "num_items", "latent_dim", "slots", "biased_impressions"):
            if getattr(self, field_name) < 1:
                raise DataError(f"{field_name} must be >= 1")
        if self.randomized_impressions < 0:
            raise DataError("randomized_impressions must be >= 0")
        if self.slots > self.num_items:
            raise DataError("slots must not exceed num_items")
        if not 0.0 < self.position_decay <= 1.0:
            raise DataError("position_decay must lie in (0, 1]")
        if self.popularity_skew < 0:
            raise DataError("popularity_skew must be >= 0")
        if not 0.0 <= self.purchase_noise < 0.5:
            raise DataError("purchase_noise must lie in [0, 0.5)")
        pairs = self.num_users * self.num_items
        if self.biased_impressions > pairs or self.randomized_impressions > pairs:
            raise DataError("more impressions requested than distinct (user, item) pairs")


# interaction counts of the three private shop logs; user and item counts are our choice
SYNTHETIC_PRESETS = {
    "set-a": SyntheticConfig(num_users=20_000, num_items=60, slots=4, biased_impressions=47_600,
                             randomized_impressions=0, popularity_skew=1.5, name="set-a"),
    "set-b": SyntheticConfig(num_users=30_000, num_items=80, slots=4, biased_impressions=100_000,
                             randomized_impressions=218_000, popularity_skew=1.5, name="set-b"),
    "set-c": SyntheticConfig(num_users=200_000, num_items=120, slots=6, biased_impressions=980_000,
                             randomized_impressions=1_200_000, popularity_skew=1.5, name="set-c"),
    "small": SyntheticConfig(num_users=500, num_items=60, slots=5, biased_impressions=8_000,
                             randomized_impressions=8_000, name="small"),
}


def popularity_weights(num_items: int, skew: float) -> np.ndarray:
    """Zipf-like logging weight ``rank ** -skew``; item 0 is the most pushed."""
    return np.arange(1, num_items + 1, dtype=np.float64) ** (-skew)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _draw_purchases(rng, prob: np.ndarray, noise: float) -> np.ndarray:
    bought = rng.random(len(prob)) < prob
    flip = rng.random(len(prob)) < noise
    return (bought ^ flip).astype(np.float64)


def _collect_unique(chunks_fn, target: int, num_items: int, max_rounds: int = 10_000):
    """Pull (users, items, aux) chunks, keep first sighting of each pair, stop at ``target``."""
    seen = np.zeros(0, dtype=np.int64)
    kept_u, kept_i, kept_aux = [], [], []
    total = 0
    for _ in range(max_rounds):
        if total >= target:
            break
        users, items, aux = chunks_fn(target - total)
        keys = users * num_items + items
        _, first = np.unique(keys, return_index=True)
        first.sort()
        keys, users, items, aux = keys[first], users[first], items[first], aux[first]
        fresh = ~np.isin(keys, seen, assume_unique=True)
        keys, users, items, aux = keys[fresh], users[fresh], items[fresh], aux[fresh]
        take = min(len(keys), target - total)
        kept_u.append(users[:take])
        kept_i.append(items[:take])
        kept_aux.append(aux[:take])
        seen = np.union1d(seen, keys[:take])
        total += take
    else:
        raise DataError("generator could not reach the requested number of distinct pairs")
    return np.concatenate(kept_u), np.concatenate(kept_i), np.concatenate(kept_aux)


def generate_synthetic(cfg: SyntheticConfig):
    """Simulate a biased shop log and a uniformly-random log.

    Returns ``(biased, randomized, ground_truth)`` where ``ground_truth`` is
    the users x items matrix of purchase probabilities. ``randomized`` is
    ``None`` when ``cfg.randomized_impressions == 0``.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    user_f = rng.normal(size=(cfg.num_users, cfg.latent_dim))
    item_f = rng.normal(size=(cfg.num_items, cfg.latent_dim))
    # coordinate 0 of every user is 1, so item coordinate 0 acts as item-level appeal
    user_f[:, 0] = 1.0
    truth = _sigmoid(cfg.preference_scale * (user_f @ item_f.T) / math.sqrt(cfg.latent_dim))

    log_w = np.log(popularity_weights(cfg.num_items, cfg.popularity_skew))
    slot_seen = cfg.position_decay ** np.arange(cfg.slots)

    def biased_chunk(remaining):
        n_shelves = int(math.ceil(remaining / cfg.slots * 1.2)) + 16
        n_shelves = min(n_shelves, max(64, 4_000_000 // cfg.num_items))
        users = rng.integers(0, cfg.num_users, size=n_shelves)
        # Gumbel top-k: ordered sample without replacement proportional to weight
        keys = log_w[None, :] + rng.gumbel(size=(n_shelves, cfg.num_items))
        if cfg.slots < cfg.num_items:
            top = np.argpartition(-keys, cfg.slots - 1, axis=1)[:, : cfg.slots]
        else:
            top = np.broadcast_to(np.arange(cfg.num_items), keys.shape)
        order = np.argsort(-np.take_along_axis(keys, top, axis=1), axis=1, kind="stable")
        shelf = np.take_along_axis(top, order, axis=1)
        # every shelf slot is a logged impression; a purchase needs the slot examined
        examined = (rng.random(shelf.shape) < slot_seen[None, :]).ravel()
        u = np.repeat(users, cfg.slots)
        i = shelf.ravel()
        bought = rng.random(len(u)) < truth[u, i]
        flip = rng.random(len(u)) < cfg.purchase_noise
        return u, i, ((bought & examined) ^ flip).astype(np.float64)

    def uniform_chunk(remaining):
        n = min(int(remaining * 1.1) + 16, 4_000_000)
        u = rng.integers(0, cfg.num_users, size=n)
        i = rng.integers(0, cfg.num_items, size=n)
        return u, i, _draw_purchases(rng, truth[u, i], cfg.purchase_noise)

    bu, bi, br = _collect_unique(biased_chunk, cfg.biased_impressions, cfg.num_items)
    biased = Dataset(cfg.name, cfg.num_users, cfg.num_items, FeedbackKind.IMPLICIT, 0.0, 1.0,
                     Interactions(bu, bi, br, Source.BIASED))
    randomized = None
    if cfg.randomized_impressions > 0:
        ru, ri, rr = _collect_unique(uniform_chunk, cfg.randomized_impressions, cfg.num_items)
        randomized = Dataset(cfg.name, cfg.num_users, cfg.num_items, FeedbackKind.IMPLICIT, 0.0, 1.0,
                             Interactions(ru, ri, rr, Source.RANDOMIZED))
    return biased, randomized, truth


def write_ground_truth(truth: np.ndarray, path) -> None:
    """Write ``user,item,probability`` rows for the full preference matrix."""
    users, items = np.indices(truth.shape)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "item", "probability"])
        for u, i, p in zip(users.ravel(), items.ravel(), truth.ravel()):
            w.writerow([int(u), int(i), repr(float(p))])


# --------------------------------------------------------------------------
# canonical CSV
# --------------------------------------------------------------------------


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def _format_rating(r: float) -> str:
    return str(int(r)) if float(r).is_integer() else repr(float(r))


def write_canonical(ds: Dataset, path) -> None:
    """Write ``ds`` as canonical CSV plus a ``.meta.json`` sidecar.

    Raw-id maps, when present, go to ``<path>.users.csv``/``<path>.items.csv``.
    """
    path = Path(path)
    inter = ds.interactions
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CANONICAL_HEADER)
        for u, i, r, s in zip(inter.users.tolist(), inter.items.tolist(), inter.ratings.tolist(), inter.sources()):
            w.writerow([u, i, _format_rating(r), s.value])
    meta = {
        "name": ds.name,
        "num_users": ds.num_users,
        "num_items": ds.num_items,
        "kind": ds.kind.value,
        "rating_min": ds.rating_min,
        "rating_max": ds.rating_max,
    }
    _meta_path(path).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    for suffix, ids in ((".users.csv", ds.user_ids), (".items.csv", ds.item_ids)):
        if ids is not None:
            with open(path.with_name(path.name + suffix), "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["dense_id", "raw_id"])
                w.writerows(enumerate(np.asarray(ids).tolist()))


def read_canonical(path) -> Dataset:
    """Read a canonical CSV; metadata comes from the sidecar or is inferred."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    users, items, ratings, sources = [], [], [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CANONICAL_HEADER:
            raise DataError(f"{path}: expected header {','.join(CANONICAL_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                users.append(int(row[0]))
                items.append(int(row[1]))
                ratings.append(float(row[2]))
                sources.append(Source(row[3]))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    if not users:
        raise DataError(f"{path}: empty dataset")

    meta_file = _meta_path(path)
    if meta_file.is_file():
        meta = json.loads(meta_file.read_text(encoding="utf-8"))
    else:
        r = np.asarray(ratings)
        implicit = bool(np.all(np.isin(r, (0.0, 1.0))))
        meta = {
            "name": path.stem,
            "num_users": max(users) + 1,
            "num_items": max(items) + 1,
            "kind": "implicit" if implicit else "explicit",
            "rating_min": 0.0 if implicit else float(r.min()),
            "rating_max": 1.0 if implicit else float(r.max()),
        }

    def read_ids(suffix):
        p = path.with_name(path.name + suffix)
        if not p.is_file():
            return None
        with open(p, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        return np.asarray([int(raw) for _, raw in rows], dtype=np.int64)

    return Dataset(
        name=meta["name"],
        num_users=int(meta["num_users"]),
        num_items=int(meta["num_items"]),
        kind=FeedbackKind(meta["kind"]),
        rating_min=float(meta["rating_min"]),
        rating_max=float(meta["rating_max"]),
        interactions=Interactions(users, items, ratings, np.array([s.value for s in sources])),
        user_ids=read_ids(".users.csv"),
        item_ids=read_ids(".items.csv"),
    )


def merge_sources(biased: Dataset, randomized: Dataset | None) -> Dataset:
    """One dataset holding both logs, tagged by source (canonical file layout)."""
    parts = [biased.interactions.with_source(Source.BIASED)]
    if randomized is not None:
        parts.append(randomized.interactions.with_source(Source.RANDOMIZED))
    return Dataset(
        name=biased.name,
        num_users=max(biased.num_users, randomized.num_users if randomized else 0),
        num_items=max(biased.num_items, randomized.num_items if randomized else 0),
        kind=biased.kind,
        rating_min=biased.rating_min,
        rating_max=biased.rating_max,
        interactions=Interactions.concat(parts),
        user_ids=biased.user_ids,
        item_ids=biased.item_ids,
    )


def split_sources(ds: Dataset) -> tuple[Dataset, Dataset | None]:
    """Inverse of :func:`merge_sources`."""
    out = []
    for source in (Source.BIASED, Source.RANDOMIZED):
        rows = ds.by_source(source)
        out.append(
            Dataset(ds.name, ds.num_users, ds.num_items, ds.kind, ds.rating_min, ds.rating_max,
                    rows, ds.user_ids, ds.item_ids)
            if len(rows) else None
        )
    if out[0] is None:
        raise DataError(f"{ds.name}: no biased-log interactions")
    return out[0], out[1]


def config_dict(cfg: SyntheticConfig) -> dict:
    return asdict(cfg)
