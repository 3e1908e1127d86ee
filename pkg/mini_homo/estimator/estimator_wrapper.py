"""统一的单应估计入口。

G 阶段与评估都通过 Estimator 获取 H_ts，具体实现由 kind 决定：
- identity: 单位阵基线
- lk: 单位阵初始化的逆组合 LK（第 0 轮使用）
- regressor: 回归器的直接预测
- composite: 回归器预测作为 LK 初值，与单位阵初始化的 LK 比较光度残差后取较优者
"""

import logging
from pathlib import Path

from ..config import LKConfig
from ..exceptions import HomographyError
from ..homography import identity
from ..schema import Homography, ImageBuf, LKResult, RegressorModel
from .base import EstimatorBase, IdentityEstimator
from .lk import LKEstimator, lk_align
from .regressor import RegressorEstimator, load_regressor, predict_homography

logger = logging.getLogger(__name__)

ESTIMATOR_KINDS = ("identity", "lk", "regressor", "composite")


class CompositeEstimator(EstimatorBase):
    """回归器初始化的 LK 与单位阵初始化的 LK 中残差较小的一个。"""

    name = "composite"

    def __init__(self, model: RegressorModel, cfg: LKConfig | None = None):
        self.model = model
        self.cfg = cfg or LKConfig()

    def align(self, i_s: ImageBuf, i_t: ImageBuf) -> LKResult:
        try:
            init = predict_homography(self.model, i_t, i_s)
        except HomographyError as e:
            logger.warning("regressor prediction unusable, falling back to identity init: %s", e)
            init = identity()
        from_regressor = lk_align(i_s, i_t, self.cfg, init=init)
        from_identity = lk_align(i_s, i_t, self.cfg)
        if from_regressor.final_error <= from_identity.final_error:
            return from_regressor
        return from_identity

    def estimate_ts(self, i_s: ImageBuf, i_t: ImageBuf) -> Homography:
        return self.align(i_s, i_t).homography


class Estimator:
    """单应估计包装器，根据 kind 实例化底层估计器。"""

    def __init__(
        self,
        kind: str = "lk",
        model: RegressorModel | None = None,
        lk_config: LKConfig | None = None,
    ):
        """初始化估计器。

        Args:
            kind: identity / lk / regressor / composite
            model: regressor 与 composite 需要的回归器模型
            lk_config: LK 配置

        Raises:
            ValueError: kind 未知，或需要模型却没有提供
        """
        if kind not in ESTIMATOR_KINDS:
            raise ValueError(f"未知的估计器类型: {kind}，可选 {ESTIMATOR_KINDS}")
        if kind in ("regressor", "composite") and model is None:
            raise ValueError(f"估计器 {kind} 需要回归器模型")

        self.kind = kind
        self.model = model
        self.lk_config = lk_config or LKConfig()

        if kind == "identity":
            self._impl: EstimatorBase = IdentityEstimator()
        elif kind == "lk":
            self._impl = LKEstimator(self.lk_config)
        elif kind == "regressor":
            self._impl = RegressorEstimator(model)
        else:
            self._impl = CompositeEstimator(model, self.lk_config)

    @classmethod
    def for_iteration(cls, iteration: int, model: RegressorModel | None, lk_config: LKConfig | None = None) -> "Estimator":
        """第 0 轮（或没有模型时）用 LK，之后用 composite。"""
        if iteration == 0 or model is None:
            return cls("lk", lk_config=lk_config)
        return cls("composite", model=model, lk_config=lk_config)

    @classmethod
    def from_name(cls, name: str, lk_config: LKConfig | None = None, kind: str = "composite") -> "Estimator":
        """"identity"、"lk" 或回归器模型文件路径。"""
        if name in ("identity", "lk"):
            return cls(name, lk_config=lk_config)
        return cls(kind, model=load_regressor(Path(name)), lk_config=lk_config)

    @property
    def name(self) -> str:
        return self._impl.name

    def estimate(self, i_s: ImageBuf, i_t: ImageBuf) -> Homography:
        """Θ_H：估计 H_ts。"""
        return self._impl.estimate_ts(i_s, i_t)

    def estimate_ts(self, i_s: ImageBuf, i_t: ImageBuf) -> Homography:
        return self._impl.estimate_ts(i_s, i_t)

    def estimate_st(self, i_s: ImageBuf, i_t: ImageBuf) -> Homography:
        return self._impl.estimate_st(i_s, i_t)
