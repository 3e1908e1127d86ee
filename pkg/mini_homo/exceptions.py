"""异常定义

所有异常都直接继承 Exception 而不是 ValueError，
这样在 pydantic 校验器里抛出时不会被包装成 ValidationError。
"""


class MiniHomoError(Exception):
    """mini-homo 所有异常的基类"""


# ---- 单应矩阵代数 ----


class HomographyError(MiniHomoError):
    """单应矩阵相关错误"""


class SingularMatrixError(HomographyError):
    """矩阵行列式低于下限，不可逆"""


class DegenerateConfigurationError(HomographyError):
    """点对构型退化（共线、重复点或线性系统秩亏）"""


class PointAtInfinityError(HomographyError):
    """点被映射到无穷远（齐次坐标 w≈0）"""


class NonFiniteError(HomographyError):
    """矩阵含有 NaN 或 Inf"""


# ---- 图像 ----


class ImagingError(MiniHomoError):
    """图像处理错误"""


class EmptyBandError(ImagingError):
    """接缝带权重之和为 0"""


# ---- 数据 ----


class DataError(MiniHomoError):
    """输入数据错误（属于用户错误）"""


class EmptyDatasetError(DataError):
    """数据集为空"""


class InsufficientDataError(DataError):
    """样本数量不足"""


# ---- 训练与对齐 ----


class TrainingError(MiniHomoError):
    """训练错误"""


class NonFiniteLossError(TrainingError):
    """损失出现 NaN 或 Inf"""

    def __init__(self, message: str, step: int | None = None, diagnostics: dict | None = None):
        self.step = step
        self.diagnostics = diagnostics or {}
        super().__init__(message if step is None else f"{message}（第 {step} 步）")


class AlignmentError(MiniHomoError):
    """直接图像对齐错误"""


class SingularHessianError(AlignmentError):
    """Lucas-Kanade 的 Hessian 奇异"""
