"""mini-homo - 迭代式真实单应数据集生成、估计器训练与评估。"""

from .config import GenConfig
from .estimator import Estimator
from .eval import evaluate_model, pme
from .pipeline import run, run_iteration, synth_corpus, synth_test_set
from .schema import Homography, ImageBuf, PlaneMask, ScenePair, TrainingSample

__version__ = "0.1.0"

__all__ = [
    "Estimator",
    "GenConfig",
    "Homography",
    "ImageBuf",
    "PlaneMask",
    "ScenePair",
    "TrainingSample",
    "evaluate_model",
    "pme",
    "run",
    "run_iteration",
    "synth_corpus",
    "synth_test_set",
]
