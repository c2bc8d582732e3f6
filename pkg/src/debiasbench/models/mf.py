"""Biased matrix factorization: parameters, prediction, gradients, checkpoints."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..metrics import topk_order

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class HyperParams:
    latent_dim: int = 16
    learning_rate: float = 0.5
    l2_reg: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    propensity_floor: float = 0.05
    propensity_power: float = 1.0
    imputation_learning_rate: float = 0.05
    meta_learning_rate: float = 0.01
    imputation_weight: float = 1.0
    all_pairs_sample_rate: float = 0.05
    init_scale: float = 0.1

    def __post_init__(self):
        checks = [
            (self.latent_dim >= 1, "latent_dim >= 1"),
            (self.learning_rate > 0, "learning_rate > 0"),
            (self.l2_reg >= 0, "l2_reg >= 0"),
            (self.batch_size >= 1, "batch_size >= 1"),
            (self.max_epochs >= 1, "max_epochs >= 1"),
            (self.patience >= 1, "patience >= 1"),
            (0 < self.propensity_floor <= 1, "propensity_floor in (0, 1]"),
            (self.propensity_power >= 0, "propensity_power >= 0"),
            (self.imputation_learning_rate > 0, "imputation_learning_rate > 0"),
            (self.meta_learning_rate >= 0, "meta_learning_rate >= 0"),
            (self.imputation_weight >= 0, "imputation_weight >= 0"),
            (0 < self.all_pairs_sample_rate <= 1, "all_pairs_sample_rate in (0, 1]"),
            (self.init_scale >= 0, "init_scale >= 0"),
        ]
        for ok, what in checks:
            if not ok:
                raise ValueError(f"invalid hyperparameter: {what}")

    @classmethod
    def from_mapping(cls, values: dict) -> "HyperParams":
        types = {f.name: f.type for f in fields(cls)}
        out = {}
        for key, value in values.items():
            key = key.replace("-", "_")
            if key not in types:
                raise ValueError(f"unknown hyperparameter {key!r}")
            out[key] = int(value) if types[key] in (int, "int") else float(value)
        return cls(**out)

    def as_dict(self) -> dict:
        return asdict(self)


class MfModel:
    """``score = global + b_u + b_i + p_u . q_i``; predictions clamp the score."""

    BLOCKS = ("user_factors", "item_factors", "user_bias", "item_bias", "global_bias")

    def __init__(self, user_factors, item_factors, user_bias, item_bias, global_bias, rating_min, rating_max):
        self.user_factors = np.asarray(user_factors, dtype=np.float64)
        self.item_factors = np.asarray(item_factors, dtype=np.float64)
        self.user_bias = np.asarray(user_bias, dtype=np.float64)
        self.item_bias = np.asarray(item_bias, dtype=np.float64)
        self.global_bias = np.asarray(global_bias, dtype=np.float64).reshape(())
        self.rating_min = float(rating_min)
        self.rating_max = float(rating_max)

    @classmethod
    def init(cls, num_users, num_items, latent_dim, rating_min, rating_max, global_bias=0.0, rng=None, scale=0.01):
        rng = np.random.default_rng(rng)
        return cls(
            rng.uniform(-scale, scale, size=(num_users, latent_dim)),
            rng.uniform(-scale, scale, size=(num_items, latent_dim)),
            np.zeros(num_users),
            np.zeros(num_items),
            global_bias,
            rating_min,
            rating_max,
        )

    @property
    def num_users(self) -> int:
        return self.user_factors.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_factors.shape[0]

    def copy(self) -> "MfModel":
        return MfModel(*(np.copy(getattr(self, b)) for b in self.BLOCKS), self.rating_min, self.rating_max)

    def params(self) -> dict[str, np.ndarray]:
        return {b: getattr(self, b) for b in self.BLOCKS}

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, b))) for b in self.BLOCKS)

    def _check(self, users, items):
        if np.any((users < 0) | (users >= self.num_users)):
            raise IndexError("user index out of range")
        if np.any((items < 0) | (items >= self.num_items)):
            raise IndexError("item index out of range")

    def score_pairs(self, users, items) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        self._check(users, items)
        dot = np.einsum("ij,ij->i", self.user_factors[users], self.item_factors[items])
        return self.global_bias + self.user_bias[users] + self.item_bias[items] + dot

    def predict_pairs(self, users, items) -> np.ndarray:
        return np.clip(self.score_pairs(users, items), self.rating_min, self.rating_max)

    def score_matrix(self, users, items) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        self._check(users, items)
        return (
            self.global_bias
            + self.user_bias[users][:, None]
            + self.item_bias[items][None, :]
            + self.user_factors[users] @ self.item_factors[items].T
        )

    def apply(self, grad: "Grad", step: float) -> None:
        """In-place ``theta -= step * grad``."""
        self.user_factors -= step * grad.user_factors
        self.item_factors -= step * grad.item_factors
        self.user_bias -= step * grad.user_bias
        self.item_bias -= step * grad.item_bias
        self.global_bias = self.global_bias - step * grad.global_bias

    def stepped(self, grad: "Grad", step: float) -> "MfModel":
        out = self.copy()
        out.apply(grad, step)
        return out

    # flat views for finite-difference checks
    def flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(getattr(self, b)) for b in self.BLOCKS])

    def with_flat(self, vec) -> "MfModel":
        vec = np.asarray(vec, dtype=np.float64)
        out, pos = [], 0
        for b in self.BLOCKS:
            ref = getattr(self, b)
            out.append(vec[pos : pos + ref.size].reshape(ref.shape))
            pos += ref.size
        return MfModel(*out, self.rating_min, self.rating_max)


def predict(model: MfModel, u: int, i: int) -> float:
    return float(model.predict_pairs(np.array([u]), np.array([i]))[0])


def recommend_topk(model: MfModel, user: int, k: int, candidates=None) -> list[int]:
    """Top-``k`` candidates by score; ties go to the smaller item index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0 <= user < model.num_users:
        raise IndexError("user index out of range")
    cand = np.arange(model.num_items) if candidates is None else np.unique(np.asarray(list(candidates), dtype=np.int64))
    if cand.size == 0:
        raise ValueError("no candidate items")
    scores = model.score_matrix(np.array([user]), cand)
    return cand[topk_order(scores, k)[0]].tolist()


@dataclass
class Grad:
    user_factors: np.ndarray
    item_factors: np.ndarray
    user_bias: np.ndarray
    item_bias: np.ndarray
    global_bias: float

    @classmethod
    def zeros_like(cls, model: MfModel) -> "Grad":
        return cls(
            np.zeros_like(model.user_factors),
            np.zeros_like(model.item_factors),
            np.zeros_like(model.user_bias),
            np.zeros_like(model.item_bias),
            0.0,
        )

    def __add__(self, other: "Grad") -> "Grad":
        return Grad(
            self.user_factors + other.user_factors,
            self.item_factors + other.item_factors,
            self.user_bias + other.user_bias,
            self.item_bias + other.item_bias,
            self.global_bias + other.global_bias,
        )

    def flat(self) -> np.ndarray:
        return np.concatenate(
            [self.user_factors.ravel(), self.item_factors.ravel(), self.user_bias, self.item_bias, [self.global_bias]]
        )


def accumulate(grad: Grad, model: MfModel, users, items, dscore) -> Grad:
    """Chain ``dL/dscore`` per pair into parameter gradients (in place)."""
    dscore = np.asarray(dscore, dtype=np.float64)
    np.add.at(grad.user_factors, users, dscore[:, None] * model.item_factors[items])
    np.add.at(grad.item_factors, items, dscore[:, None] * model.user_factors[users])
    np.add.at(grad.user_bias, users, dscore)
    np.add.at(grad.item_bias, items, dscore)
    grad.global_bias += float(dscore.sum())
    return grad


def l2_penalty(model: MfModel, users, items, coef: float) -> tuple[float, Grad]:
    """``coef * sum over rows of (|p_u|^2 + |q_i|^2 + b_u^2 + b_i^2)`` and its gradient."""
    grad = Grad.zeros_like(model)
    if coef == 0.0 or len(users) == 0:
        return 0.0, grad
    pu = model.user_factors[users]
    qi = model.item_factors[items]
    bu = model.user_bias[users]
    bi = model.item_bias[items]
    value = coef * float(np.sum(pu * pu) + np.sum(qi * qi) + np.sum(bu * bu) + np.sum(bi * bi))
    np.add.at(grad.user_factors, users, 2.0 * coef * pu)
    np.add.at(grad.item_factors, items, 2.0 * coef * qi)
    np.add.at(grad.user_bias, users, 2.0 * coef * bu)
    np.add.at(grad.item_bias, items, 2.0 * coef * bi)
    return value, grad


def weighted_squared_loss(model: MfModel, users, items, targets, weights, l2: float) -> tuple[float, Grad]:
    """Batch mean of ``w * (score - r)^2`` plus row-wise L2; value and gradient."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    n = len(users)
    resid = model.score_pairs(users, items) - targets
    value = float(np.sum(weights * resid * resid)) / n
    reg_value, grad = l2_penalty(model, users, items, l2 / n)
    accumulate(grad, model, users, items, 2.0 * weights * resid / n)
    return value + reg_value, grad


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------


def save_checkpoint(path, model: MfModel, hp: HyperParams, seed: int, method: str, extra: dict | None = None) -> None:
    """Write every parameter block plus hyperparameters and seed to ``.npz``.

    ``extra`` holds method-specific arrays (imputation or meta parameters) and
    a JSON-serialisable ``info`` entry for run metadata.
    """
    extra = dict(extra or {})
    info = extra.pop("info", {})
    header = {
        "version": CHECKPOINT_VERSION,
        "method": method,
        "seed": int(seed),
        "hyperparams": hp.as_dict(),
        "rating_min": model.rating_min,
        "rating_max": model.rating_max,
        "info": info,
    }
    arrays = {b: getattr(model, b) for b in MfModel.BLOCKS}
    arrays.update({f"extra__{k}": np.asarray(v) for k, v in extra.items()})
    with open(path, "wb") as fh:
        np.savez(fh, header=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path):
    """Return ``(model, hyperparams, seed, method, extra)`` from a checkpoint."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        model = MfModel(*(data[b] for b in MfModel.BLOCKS), header["rating_min"], header["rating_max"])
        extra = {k[len("extra__"):]: data[k] for k in data.files if k.startswith("extra__")}
    extra["info"] = header.get("info", {})
    return model, HyperParams(**header["hyperparams"]), header["seed"], header["method"], extra
