"""mini-homo 的模式定义。"""

from .schema import (
    DET_FLOOR,
    Category,
    CategoryPME,
    CornerOffsets,
    CorrespondenceSet,
    EvalResult,
    FeatureMap,
    Homography,
    ImageBuf,
    IterationReport,
    LKResult,
    PerturbationRanges,
    PlaneMask,
    Provenance,
    QualityModel,
    QualityScore,
    RegressorHyperParams,
    RegressorModel,
    RobustnessCurve,
    SceneObject,
    ScenePair,
    Strategy,
    TrainingSample,
    normalize_matrix,
)

__all__ = [
    "DET_FLOOR",
    "Category",
    "CategoryPME",
    "CornerOffsets",
    "CorrespondenceSet",
    "EvalResult",
    "FeatureMap",
    "Homography",
    "ImageBuf",
    "IterationReport",
    "LKResult",
    "PerturbationRanges",
    "PlaneMask",
    "Provenance",
    "QualityModel",
    "QualityScore",
    "RegressorHyperParams",
    "RegressorModel",
    "RobustnessCurve",
    "SceneObject",
    "ScenePair",
    "Strategy",
    "TrainingSample",
    "normalize_matrix",
]
