from enum import Enum
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

from ..exceptions import NonFiniteError, SingularMatrixError

# 行列式下限，低于该值视为不可逆
DET_FLOOR = 1e-12


def _as_float_array(value: Any) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def normalize_matrix(m: np.ndarray) -> np.ndarray:
    """将 3x3 矩阵归一化为右下角为 1（右下角为 0 时退化为单位 Frobenius 范数 + 符号约定）。"""
    m = _as_float_array(m).reshape(3, 3)
    scale = np.linalg.norm(m)
    if scale == 0.0:
        return m.copy()
    if abs(m[2, 2]) > 1e-15 * scale:
        return m / m[2, 2]
    out = m / scale
    flat = out.reshape(-1)
    pivot = flat[np.argmax(np.abs(flat))]
    return out if pivot > 0 else -out


class Homography(BaseModel):
    """3x3 射影变换，行主序存储，构造时自动归一化。"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    m: np.ndarray

    @field_validator("m", mode="before")
    @classmethod
    def _check_matrix(cls, value: Any) -> np.ndarray:
        arr = _as_float_array(value)
        if arr.size != 9:
            raise ValueError(f"单应矩阵需要 9 个元素，实际为 {arr.size}")
        arr = arr.reshape(3, 3)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("单应矩阵含有非有限值")
        arr = normalize_matrix(arr)
        det = np.linalg.det(arr)
        if not np.isfinite(det) or abs(det) <= DET_FLOOR:
            raise SingularMatrixError(f"单应矩阵不可逆: |det|={abs(det):.3e}")
        arr.setflags(write=False)
        return arr

    @field_serializer("m")
    def _dump_matrix(self, m: np.ndarray) -> list[float]:
        return [float(v) for v in m.reshape(-1)]

    def to_list(self) -> list[float]:
        """9 个行主序浮点数。"""
        return self._dump_matrix(self.m)


class CornerOffsets(BaseModel):
    """四角点位移 (dx0, dy0, ..., dx3, dy3)，单位为像素。"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    d: np.ndarray
    width: float
    height: float

    @field_validator("d", mode="before")
    @classmethod
    def _check_offsets(cls, value: Any) -> np.ndarray:
        arr = _as_float_array(value).reshape(-1)
        if arr.size != 8:
            raise ValueError(f"角点位移需要 8 个值，实际为 {arr.size}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("角点位移含有非有限值")
        return arr

    @field_validator("width", "height")
    @classmethod
    def _check_frame(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("patch 尺寸必须为正")
        return value

    @field_serializer("d")
    def _dump_offsets(self, d: np.ndarray) -> list[float]:
        return [float(v) for v in d]

    @property
    def frame(self) -> tuple[float, float]:
        return (self.width, self.height)

    def corners(self) -> np.ndarray:
        """位移按角点排列为 (4, 2)。"""
        return self.d.reshape(4, 2)


class PerturbationRanges(BaseModel):
    """H_gt 的小基线扰动范围（每个因子一个闭区间）。"""

    scaling: tuple[float, float] = (0.9, 1.1)
    shearing: tuple[float, float] = (-0.1, 0.1)
    rotation: tuple[float, float] = (-0.1, 0.1)  # 弧度
    translation: tuple[float, float] = (-16.0, 16.0)  # 像素
    perspective: tuple[float, float] = (-1e-4, 1e-4)  # 1/像素

    @field_validator("scaling", "shearing", "rotation", "translation", "perspective")
    @classmethod
    def _check_interval(cls, value: tuple[float, float]) -> tuple[float, float]:
        low, high = value
        if not (np.isfinite(low) and np.isfinite(high)) or low > high:
            raise ValueError(f"无效区间: {value}")
        return (float(low), float(high))

    @model_validator(mode="after")
    def _check_invertible(self) -> "PerturbationRanges":
        if self.scaling[0] <= 0:
            raise ValueError("缩放区间必须为正")
        if max(abs(self.shearing[0]), abs(self.shearing[1])) >= 1.0:
            raise ValueError("剪切区间必须在 (-1, 1) 内")
        return self

    @classmethod
    def neutral(cls) -> "PerturbationRanges":
        """所有因子都退化为中性值（采样结果为单位阵）。"""
        return cls(
            scaling=(1.0, 1.0),
            shearing=(0.0, 0.0),
            rotation=(0.0, 0.0),
            translation=(0.0, 0.0),
            perspective=(0.0, 0.0),
        )


class ImageBuf(BaseModel):
    """稠密浮点图像，形状 (H, W, C)，C 为 1 或 3。

    normalized=True 表示经过零均值/单位方差归一化，此时不要求取值在 [0, 1]。
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray
    normalized: bool = False

    @field_validator("data", mode="before")
    @classmethod
    def _check_data(cls, value: Any) -> np.ndarray:
        arr = _as_float_array(value)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"图像形状必须为 (H, W) 或 (H, W, 1|3)，实际为 {arr.shape}")
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValueError("图像尺寸不能为 0")
        if not np.all(np.isfinite(arr)):
            raise ValueError("图像含有非有限值")
        return arr

    @model_validator(mode="after")
    def _check_range(self) -> "ImageBuf":
        if not self.normalized and (self.data.min() < -1e-6 or self.data.max() > 1.0 + 1e-6):
            raise ValueError("未归一化图像的取值必须在 [0, 1]")
        return self

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def gray(self) -> np.ndarray:
        """二维灰度数组（三通道时按 0.299/0.587/0.114 加权）。"""
        if self.channels == 1:
            return self.data[:, :, 0]
        return self.data @ np.array([0.299, 0.587, 0.114])


class PlaneMask(BaseModel):
    """主平面软掩码，1 表示主平面。"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    weights: np.ndarray

    @field_validator("weights", mode="before")
    @classmethod
    def _check_weights(cls, value: Any) -> np.ndarray:
        arr = _as_float_array(value)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim != 2:
            raise ValueError(f"掩码必须是二维数组，实际为 {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("掩码含有非有限值")
        if arr.size and (arr.min() < -1e-6 or arr.max() > 1.0 + 1e-6):
            raise ValueError("掩码权重必须在 [0, 1]")
        return np.clip(arr, 0.0, 1.0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape

    @classmethod
    def ones(cls, height: int, width: int) -> "PlaneMask":
        return cls(weights=np.ones((height, width)))

    @classmethod
    def zeros(cls, height: int, width: int) -> "PlaneMask":
        return cls(weights=np.zeros((height, width)))


class FeatureMap(BaseModel):
    """特征图，形状 (H, W, C)。"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray

    @field_validator("data", mode="before")
    @classmethod
    def _check_data(cls, value: Any) -> np.ndarray:
        arr = _as_float_array(value)
        if arr.ndim != 3 or arr.shape[2] < 1:
            raise ValueError(f"特征图形状必须为 (H, W, C)，实际为 {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("特征图含有非有限值")
        return arr

    @property
    def channels(self) -> int:
        return self.data.shape[2]


class Provenance(BaseModel):
    """训练样本的来源信息。"""

    pair_id: str
    iteration: int
    seed: int
    h_ts: Homography
    strategy: str = "realistic"
    quality_score: float | None = None
    accepted: bool | None = None
    flags: list[str] = Field(default_factory=list)


class TrainingSample(BaseModel):
    """训练样本 (I_s, I'_t, H_gt) 及其来源。"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    i_s: ImageBuf
    i_t_prime: ImageBuf
    h_gt: Homography
    provenance: Provenance

    @model_validator(mode="after")
    def _check_dims(self) -> "TrainingSample":
        if self.i_s.shape != self.i_t_prime.shape:
            raise ValueError(f"图像尺寸不一致: {self.i_s.shape} vs {self.i_t_prime.shape}")
        return self


class QualityScore(BaseModel):
    """QAM 打分结果；score > tau 时接受。"""

    value: float
    tau: float
    accepted: bool


class QualityModel(BaseModel):
    """QAM 的逻辑回归模型（在标准化后的手工特征上）。"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    weights: np.ndarray
    bias: float = 0.0
    feature_mean: np.ndarray
    feature_std: np.ndarray
    trained: bool = False
    feature_version: str = "qam-v1"
    tau: float = 0.5
    final_loss: float | None = None
    train_accuracy: float | None = None

    @field_validator("weights", "feature_mean", "feature_std", mode="before")
    @classmethod
    def _check_vector(cls, value: Any) -> np.ndarray:
        arr = _as_float_array(value).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise ValueError("QAM 参数含有非有限值")
        return arr

    @field_serializer("weights", "feature_mean", "feature_std")
    def _dump_vector(self, v: np.ndarray) -> list[float]:
        return [float(x) for x in v]


class RegressorHyperParams(BaseModel):
    """回归器训练超参数。"""

    lr: float = 1e-2
    epochs: int = 30
    batch_size: int = 16
    weight_decay: float = 0.0
    seed: int = 0


class RegressorModel(BaseModel):
    """角点位移回归 MLP。

    输入为两张 input_side x input_side 的灰度 patch 拼接展平后的向量，
    输出为 patch 坐标系下的 8 个角点位移（像素）。
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_side: int = 32
    frame: tuple[int, int] = (128, 128)  # (width, height)
    hyperparams: RegressorHyperParams = Field(default_factory=RegressorHyperParams)

    @model_validator(mode="before")
    @classmethod
    def _reshape_params(cls, data: Any) -> Any:
        if not isinstance(data, dict) or "layer_sizes" not in data:
            return data
        sizes = list(data["layer_sizes"])
        data = dict(data)
        data["weights"] = [
            _as_float_array(w).reshape(sizes[i + 1], sizes[i]) for i, w in enumerate(data.get("weights", []))
        ]
        data["biases"] = [_as_float_array(b).reshape(sizes[i + 1]) for i, b in enumerate(data.get("biases", []))]
        return data

    @model_validator(mode="after")
    def _check_shapes(self) -> "RegressorModel":
        if len(self.layer_sizes) < 2 or self.layer_sizes[-1] != 8:
            raise ValueError("网络至少两层且输出维度必须为 8")
        if self.layer_sizes[0] != 2 * self.input_side * self.input_side:
            raise ValueError("输入维度必须等于 2 * input_side^2")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("权重层数与 layer_sizes 不匹配")
        for w, b in zip(self.weights, self.biases):
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("网络参数含有非有限值")
        return self

    @field_serializer("weights", "biases")
    def _dump_params(self, params: list[np.ndarray]) -> list[list[float]]:
        return [[float(x) for x in p.reshape(-1)] for p in params]


class LKResult(BaseModel):
    """Lucas-Kanade 对齐结果。"""

    homography: Homography
    converged: bool
    iterations: int
    final_error: float
    flags: list[str] = Field(default_factory=list)


class CorrespondenceSet(BaseModel):
    """人工标注风格的点对：src 在源图，dst 在目标图。"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    src: np.ndarray
    dst: np.ndarray

    @field_validator("src", "dst", mode="before")
    @classmethod
    def _check_points(cls, value: Any) -> np.ndarray:
        arr = _as_float_array(value)
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
            raise ValueError(f"点集形状必须为 (n>=1, 2)，实际为 {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("点坐标含有非有限值")
        return arr

    @model_validator(mode="after")
    def _check_pairs(self) -> "CorrespondenceSet":
        if self.src.shape != self.dst.shape:
            raise ValueError("src 与 dst 点数不一致")
        return self

    @classmethod
    def from_rows(cls, rows: list[list[float]]) -> "CorrespondenceSet":
        """从 [px, py, qx, qy] 行列表构造。"""
        arr = _as_float_array(rows).reshape(-1, 4)
        return cls(src=arr[:, :2], dst=arr[:, 2:])

    def to_rows(self) -> list[list[float]]:
        return [[float(v) for v in row] for row in np.hstack([self.src, self.dst])]

    def __len__(self) -> int:
        return self.src.shape[0]


class RobustnessCurve(BaseModel):
    """各阈值下 PME 不超过阈值的样本比例。"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    thresholds: np.ndarray
    inlier_fraction: np.ndarray

    @field_validator("thresholds", "inlier_fraction", mode="before")
    @classmethod
    def _as_vector(cls, value: Any) -> np.ndarray:
        return _as_float_array(value).reshape(-1)

    @model_validator(mode="after")
    def _check_curve(self) -> "RobustnessCurve":
        if self.thresholds.shape != self.inlier_fraction.shape:
            raise ValueError("阈值与比例长度不一致")
        if np.any(np.diff(self.thresholds) < 0):
            raise ValueError("阈值必须非降")
        if np.any(np.diff(self.inlier_fraction) < 0):
            raise ValueError("内点比例必须非降")
        if np.any((self.inlier_fraction < 0) | (self.inlier_fraction > 1)):
            raise ValueError("内点比例必须在 [0, 1]")
        return self

    @field_serializer("thresholds", "inlier_fraction")
    def _dump_vector(self, v: np.ndarray) -> list[float]:
        return [float(x) for x in v]


class Strategy(str, Enum):
    """数据生成策略。"""

    REALISTIC = "realistic"
    NAIVE = "naive"
    SINGLE_IMAGE = "single_image"


class IterationReport(BaseModel):
    """一次 G-phase / T-phase 迭代的汇总。"""

    iteration: int
    generated: int = 0
    accepted: int = 0
    rejected: int = 0
    quarantined: list[str] = Field(default_factory=list)
    empty_plane_flagged: int = 0
    ccl_before: float | None = None
    ccl_after: float | None = None
    qam_accuracy: float | None = None
    qam_loss: float | None = None
    train_losses: list[float] = Field(default_factory=list)
    total_loss: float | None = None
    eval_pme: float | None = None
    regressor_pme: float | None = None
    identity_pme: float | None = None


class Category(str, Enum):
    """场景类别：常规、低纹理、低光照、小前景、大前景。"""

    RE = "RE"
    LT = "LT"
    LL = "LL"
    SF = "SF"
    LF = "LF"


class SceneObject(BaseModel):
    """合成场景中独立运动的方块物体（左上角坐标为整数像素）。"""

    size: int
    source_xy: tuple[int, int]
    target_xy: tuple[int, int]
    displacement: tuple[float, float]


class ScenePair(BaseModel):
    """一对无标注图像 (I_s, I_t)，可选附带真值与标注点。"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    pair_id: str
    i_s: ImageBuf
    i_t: ImageBuf
    category: str | None = None
    h_ts: Homography | None = None
    points: CorrespondenceSet | None = None
    objects: list[SceneObject] = Field(default_factory=list)
    nonplane_s: PlaneMask | None = None
    nonplane_t: PlaneMask | None = None

    @model_validator(mode="after")
    def _check_dims(self) -> "ScenePair":
        if self.i_s.shape != self.i_t.shape:
            raise ValueError(f"图像对尺寸不一致: {self.i_s.shape} vs {self.i_t.shape}")
        return self


class CategoryPME(BaseModel):
    """一个场景类别（或 AVG）的 PME 汇总。"""

    category: str
    count: int
    pme: float
    identity_pme: float | None = None
    change_pct: float | None = None  # 相对单位阵基线的变化（%）


class EvalResult(BaseModel):
    """评估结果：类别表、逐对误差与鲁棒性曲线。"""

    estimator: str
    rows: list[CategoryPME]
    per_pair: dict[str, float]
    curve: RobustnessCurve
    identity_curve: RobustnessCurve | None = None
    excluded_points: int = 0
    failed_pairs: list[str] = Field(default_factory=list)
