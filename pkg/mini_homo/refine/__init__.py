"""T 阶段的数据精炼：CCM 伪影去除与 QAM 质量过滤。"""

from .ccm import artifact_map, ccl_loss, ccm_reconstruct, reference_image
from .qam import (
    FEATURE_NAMES,
    FEATURE_VERSION,
    bce,
    fit_logistic,
    fit_quality_model,
    load_quality_model,
    logistic_loss_and_grad,
    make_score,
    negative_example,
    positive_example,
    predict_proba,
    qal_loss,
    qam_features,
    qam_score,
    qam_train,
    save_quality_model,
)

__all__ = [
    "FEATURE_NAMES",
    "FEATURE_VERSION",
    "artifact_map",
    "bce",
    "ccl_loss",
    "ccm_reconstruct",
    "fit_logistic",
    "fit_quality_model",
    "load_quality_model",
    "logistic_loss_and_grad",
    "make_score",
    "negative_example",
    "positive_example",
    "predict_proba",
    "qal_loss",
    "qam_features",
    "qam_score",
    "qam_train",
    "reference_image",
    "save_quality_model",
]
