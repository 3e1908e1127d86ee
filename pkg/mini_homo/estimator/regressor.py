"""角点位移回归器

小型 MLP：两张预处理后的灰度 patch（中心裁剪、灰度化、缩放到 input_side、
零均值单位方差）展平拼接后除以 sqrt(输入维度)，经 ReLU 隐藏层输出 8 个角点位移（像素）。
训练目标为双向的 L_sup，梯度由解析反向传播得到。
"""

import json
import logging
from pathlib import Path

import numpy as np

from ..config import RegressorConfig
from ..exceptions import EmptyDatasetError, NonFiniteLossError
from ..homography import homography_to_offsets, invert, offsets_to_homography
from ..imaging import center_crop, normalize_intensity, resize_array, to_grayscale
from ..schema import (
    CornerOffsets,
    Homography,
    ImageBuf,
    RegressorHyperParams,
    RegressorModel,
    TrainingSample,
)
from ..utils import make_rng
from .base import EstimatorBase
from .losses import offsets_l1

logger = logging.getLogger(__name__)


def init_regressor(cfg: RegressorConfig | None = None, frame: tuple[int, int] = (128, 128)) -> RegressorModel:
    """按配置初始化网络

    隐藏层用 He 初始化，最后一层置零，因此未训练的模型输出全零位移（即单位阵）。
    """
    cfg = cfg or RegressorConfig()
    rng = make_rng(cfg.seed)
    n_in = 2 * cfg.input_side * cfg.input_side
    sizes = [n_in, *cfg.hidden, 8]
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        if i == len(sizes) - 2:
            w = np.zeros((sizes[i + 1], sizes[i]))
        elif i == 0:
            # 输入向量为单位范数，逐元素标准差取 sqrt(2) 使隐藏层预激活方差约为 2
            w = rng.normal(0.0, np.sqrt(2.0), size=(sizes[i + 1], sizes[i]))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / sizes[i]), size=(sizes[i + 1], sizes[i]))
        weights.append(w)
        biases.append(np.zeros(sizes[i + 1]))
    return RegressorModel(
        layer_sizes=sizes,
        weights=weights,
        biases=biases,
        input_side=cfg.input_side,
        frame=frame,
        hyperparams=RegressorHyperParams(
            lr=cfg.lr,
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            weight_decay=cfg.weight_decay,
            seed=cfg.seed,
        ),
    )


def _prepare(img: ImageBuf, frame: tuple[int, int], side: int) -> np.ndarray:
    if (img.width, img.height) != tuple(frame):
        img = center_crop(img, frame)
    gray = to_grayscale(img).data[:, :, 0]
    small = ImageBuf(data=resize_array(gray, (side, side)), normalized=img.normalized)
    return normalize_intensity(small).data.reshape(-1)


def preprocess_pair(a: ImageBuf, b: ImageBuf, side: int, frame: tuple[int, int]) -> np.ndarray:
    """(a, b) -> 网络输入向量，长度 2·side²。"""
    x = np.concatenate([_prepare(a, frame, side), _prepare(b, frame, side)])
    return x / np.sqrt(x.size)


def _forward(model: RegressorModel, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """批量前向。x 形状 (n, n_in)，返回输出与各层激活。"""
    activations = [x]
    a = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        a = z if i == last else np.maximum(z, 0.0)
        activations.append(a)
    return a, activations


def regressor_forward(model: RegressorModel, i_s_patch: ImageBuf, i_t_patch: ImageBuf) -> CornerOffsets:
    """预测 i_s_patch -> i_t_patch 的四角点位移（patch 坐标系，像素）。"""
    x = preprocess_pair(i_s_patch, i_t_patch, model.input_side, model.frame)
    out, _ = _forward(model, x[None, :])
    return CornerOffsets(d=out[0], width=model.frame[0], height=model.frame[1])


def predict_homography(model: RegressorModel, i_a: ImageBuf, i_b: ImageBuf) -> Homography:
    """a -> b 的单应预测；位移构成退化四边形时由 offsets_to_homography 抛出异常。"""
    return offsets_to_homography(regressor_forward(model, i_a, i_b))


def _training_rows(model: RegressorModel, samples: list[TrainingSample]) -> tuple[np.ndarray, np.ndarray]:
    """每个样本两行：(I_s, I'_t) -> D(H_gt)，(I'_t, I_s) -> D(H_gt⁻¹)。

    行按 [样本0正向, 样本0反向, 样本1正向, ...] 排列。
    """
    side, frame = model.input_side, model.frame
    xs, ys = [], []
    for sample in samples:
        xs.append(preprocess_pair(sample.i_s, sample.i_t_prime, side, frame))
        ys.append(homography_to_offsets(sample.h_gt, frame).d)
        xs.append(preprocess_pair(sample.i_t_prime, sample.i_s, side, frame))
        ys.append(homography_to_offsets(invert(sample.h_gt), frame).d)
    return np.array(xs), np.array(ys)


def loss_and_grads(
    model: RegressorModel,
    x: np.ndarray,
    y: np.ndarray,
    weight_decay: float = 0.0,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """批量 L_sup（加 L2 权重衰减）及其对各层参数的解析梯度

    x, y 为成对排列的正反向行（见 _training_rows），损失为每个样本两项之和再对样本取均值。
    """
    n_samples = len(x) / 2.0
    out, activations = _forward(model, x)
    diff = out - y
    loss = float(np.abs(diff).sum() / 4.0 / n_samples)
    loss += 0.5 * weight_decay * sum(float((w**2).sum()) for w in model.weights)

    grad_w = [np.zeros_like(w) for w in model.weights]
    grad_b = [np.zeros_like(b) for b in model.biases]
    delta = np.sign(diff) / 4.0 / n_samples
    for i in range(len(model.weights) - 1, -1, -1):
        grad_w[i] = delta.T @ activations[i] + weight_decay * model.weights[i]
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i]) * (activations[i] > 0.0)
    return loss, grad_w, grad_b


def sup_loss_dataset(model: RegressorModel, samples: list[TrainingSample]) -> float:
    """整个数据集上的 L_sup 均值（不含权重衰减）。"""
    if not samples:
        raise EmptyDatasetError("没有可用于计算损失的样本")
    x, y = _training_rows(model, samples)
    out, _ = _forward(model, x)
    return float(sum(offsets_l1(o, t) for o, t in zip(out, y)) / len(samples))


def train_regressor(
    model: RegressorModel,
    samples: list[TrainingSample],
    hyperparams: RegressorHyperParams | None = None,
) -> tuple[RegressorModel, list[float]]:
    """mini-batch SGD 训练

    Args:
        model: 初始模型（热启动时为上一轮的模型）
        samples: 已接受的训练样本
        hyperparams: 训练超参数，缺省时使用模型自带的

    Returns:
        (新模型, 损失曲线)，曲线第一项为训练前的 L_sup，之后每轮一项

    Raises:
        EmptyDatasetError: 没有样本
        NonFiniteLossError: 损失或参数出现 NaN/Inf
    """
    if not samples:
        raise EmptyDatasetError("没有已接受的样本，无法训练回归器")
    hp = hyperparams or model.hyperparams
    x, y = _training_rows(model, samples)
    rng = make_rng(hp.seed)
    weights = [w.copy() for w in model.weights]
    biases = [b.copy() for b in model.biases]
    current = model.model_copy(update={"weights": weights, "biases": biases, "hyperparams": hp})

    losses = [sup_loss_dataset(current, samples)]
    n = len(samples)
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(hp.epochs):
            order = rng.permutation(n)
            for start in range(0, n, hp.batch_size):
                idx = order[start : start + hp.batch_size]
                rows = np.stack([2 * idx, 2 * idx + 1], axis=1).reshape(-1)
                loss, grad_w, grad_b = loss_and_grads(current, x[rows], y[rows], hp.weight_decay)
                if not np.isfinite(loss):
                    raise NonFiniteLossError("回归器训练损失非有限", step=epoch, diagnostics={"batch_start": int(start)})
                for i in range(len(weights)):
                    weights[i] -= hp.lr * grad_w[i]
                    biases[i] -= hp.lr * grad_b[i]
            out, _ = _forward(current, x)
            epoch_loss = float(np.abs(out - y).sum() / 4.0 / n)
            if not np.isfinite(epoch_loss):
                raise NonFiniteLossError("回归器训练损失非有限", step=epoch, diagnostics={"loss": epoch_loss})
            losses.append(epoch_loss)
            logger.debug("regressor epoch %d: L_sup=%.4f", epoch, epoch_loss)

    trained = RegressorModel(
        layer_sizes=model.layer_sizes,
        weights=weights,
        biases=biases,
        input_side=model.input_side,
        frame=model.frame,
        hyperparams=hp,
    )
    return trained, losses


def save_regressor(model: RegressorModel, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.model_dump(mode="json")), encoding="utf-8")
    return path


def load_regressor(path: str | Path) -> RegressorModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"回归器模型不存在: {path}")
    return RegressorModel.model_validate(json.loads(path.read_text(encoding="utf-8")))


class RegressorEstimator(EstimatorBase):
    """直接使用回归器预测的 H_ts（目标图 -> 源图，即 regressor(I_t, I_s)）。"""

    name = "regressor"

    def __init__(self, model: RegressorModel):
        self.model = model

    def estimate_ts(self, i_s: ImageBuf, i_t: ImageBuf) -> Homography:
        return predict_homography(self.model, i_t, i_s)
