"""单应估计：LK 对齐、角点位移回归器与训练损失。"""

from ..config import LKConfig
from .base import EstimatorBase, IdentityEstimator
from .estimator_wrapper import ESTIMATOR_KINDS, CompositeEstimator, Estimator
from .lk import LKEstimator, lk_align, photometric_residual, solve_step
from .losses import backward_target, offsets_l1, sup_loss, total_loss
from .regressor import (
    RegressorEstimator,
    init_regressor,
    load_regressor,
    loss_and_grads,
    predict_homography,
    preprocess_pair,
    regressor_forward,
    save_regressor,
    sup_loss_dataset,
    train_regressor,
)

__all__ = [
    "ESTIMATOR_KINDS",
    "CompositeEstimator",
    "Estimator",
    "EstimatorBase",
    "IdentityEstimator",
    "LKConfig",
    "LKEstimator",
    "RegressorEstimator",
    "backward_target",
    "init_regressor",
    "lk_align",
    "load_regressor",
    "loss_and_grads",
    "offsets_l1",
    "photometric_residual",
    "predict_homography",
    "preprocess_pair",
    "regressor_forward",
    "save_regressor",
    "solve_step",
    "sup_loss",
    "sup_loss_dataset",
    "total_loss",
    "train_regressor",
]
