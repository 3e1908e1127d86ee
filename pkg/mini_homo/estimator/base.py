"""单应估计器基类。"""

from abc import ABC, abstractmethod

from ..homography import identity, invert
from ..schema import Homography, ImageBuf


class EstimatorBase(ABC):
    """单应估计器抽象基类。

    所有估计器都返回 H_ts（目标图坐标 -> 源图坐标），
    即 W(I_t, H_ts) 在主平面上与 I_s 对齐。
    """

    name: str = "base"

    @abstractmethod
    def estimate_ts(self, i_s: ImageBuf, i_t: ImageBuf) -> Homography:
        """估计 H_ts。

        Args:
            i_s: 源图
            i_t: 目标图

        Returns:
            H_ts
        """
        pass

    def estimate_st(self, i_s: ImageBuf, i_t: ImageBuf) -> Homography:
        """估计 H_st（源图坐标 -> 目标图坐标），评估 PME 时使用。"""
        return invert(self.estimate_ts(i_s, i_t))


class IdentityEstimator(EstimatorBase):
    """“不扭曲”基线：始终返回单位阵。"""

    name = "identity"

    def estimate_ts(self, i_s: ImageBuf, i_t: ImageBuf) -> Homography:
        return identity()
