"""Matrix factorization and its debiasing trainers."""

from .autodebias import MetaWeights, train_autodebias
from .dr import ImputationModel, dr_risk, train_dr
from .mf import HyperParams, MfModel, load_checkpoint, predict, recommend_topk, save_checkpoint
from .propensity import ITEM_POPULARITY, NAIVE_BAYES, Propensities, estimate_propensities
from .training import TrainingError, TrainReport, train_ips, train_mf

__all__ = [
    "HyperParams",
    "ITEM_POPULARITY",
    "ImputationModel",
    "MetaWeights",
    "MfModel",
    "NAIVE_BAYES",
    "Propensities",
    "TrainReport",
    "TrainingError",
    "dr_risk",
    "estimate_propensities",
    "load_checkpoint",
    "predict",
    "recommend_topk",
    "save_checkpoint",
    "train_autodebias",
    "train_dr",
    "train_ips",
    "train_mf",
]
