"""质量评估模块 (QAM)

在手工图像统计特征上训练逻辑回归。正样本为真实目标图 I_t，参考为其往返重采样结果；
负样本为扰动合成图 I_r，参考为 R = W(I_t, H_gt·H_ts)。
训练目标为 L_qal = BCE(x_t, 1) + BCE(x_r, 0)（两类各自取均值后相加），
打分严格大于阈值 τ 时接受样本。
"""

import json
import logging
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.special import expit

from ..exceptions import InsufficientDataError, NonFiniteLossError
from ..homography import compose, invert
from ..imaging import fully_covered, gradient_magnitude, gray_array, warp_array
from ..schema import Homography, ImageBuf, QualityModel, QualityScore
from ..utils import make_rng
from .ccm import artifact_map, reference_image

logger = logging.getLogger(__name__)

FEATURE_VERSION = "qam-v1"
FEATURE_NAMES = ["band_gradient", "residual_mean", "residual_p95", "hf_ratio", "hole_fill_fraction"]

# 概率裁剪，保证 BCE 有限且打分落在开区间 (0, 1)
PROB_EPS = 1e-12

# (图像, 参考图, 有效区域)
Example = tuple[ImageBuf, ImageBuf, np.ndarray | None]


def bce(p: np.ndarray | float, label: float) -> np.ndarray | float:
    """二元交叉熵（逐元素）。"""
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return -(label * np.log(p) + (1.0 - label) * np.log(1.0 - p))


def qal_loss(p_pos: np.ndarray, p_neg: np.ndarray) -> float:
    """L_qal = mean BCE(p_pos, 1) + mean BCE(p_neg, 0)。"""
    return float(np.mean(bce(p_pos, 1.0)) + np.mean(bce(p_neg, 0.0)))


def _high_frequency_energy(x: np.ndarray, valid: np.ndarray) -> float:
    detail = x - ndimage.gaussian_filter(x, sigma=1.0, mode="nearest")
    return float(np.mean(detail[valid] ** 2))


def qam_features(
    img: ImageBuf,
    reference: ImageBuf,
    threshold: float = 0.10,
    valid: np.ndarray | None = None,
) -> np.ndarray:
    """图像相对参考图的质量特征

    依次为：伪影区域边界带内的梯度能量、残差均值、残差 95 分位数、
    残差与参考图的高频能量之比、需由参考图填补的面积占比（伪影区域，与 CCM 的填补范围一致）。

    Args:
        img: 待评估图像
        reference: 参考图 R
        threshold: 伪影阈值
        valid: 参考图有效区域（布尔，形状 (H, W)），缺省为整幅图

    Returns:
        长度为 5 的特征向量
    """
    if img.shape != reference.shape:
        raise ValueError(f"图像尺寸不一致: {img.shape} vs {reference.shape}")
    if valid is None:
        valid = np.ones((img.height, img.width), dtype=bool)
    if not valid.any():
        return np.zeros(len(FEATURE_NAMES))

    gray = gray_array(img.data)
    ref = gray_array(reference.data)
    signed = np.where(valid, gray - ref, 0.0)
    residual = np.abs(signed)[valid]
    artifacts = artifact_map(img.data, reference.data, threshold) & valid

    band_gradient = 0.0
    if artifacts.any():
        band = ndimage.binary_dilation(artifacts, iterations=2) ^ ndimage.binary_erosion(artifacts, iterations=2)
        band &= valid
        if band.any():
            band_gradient = float(gradient_magnitude(gray)[band].mean())

    hf_ratio = _high_frequency_energy(signed, valid) / (_high_frequency_energy(ref, valid) + 1e-8)

    return np.array(
        [
            band_gradient,
            float(residual.mean()),
            float(np.percentile(residual, 95)),
            hf_ratio,
            float(artifacts.sum() / valid.sum()),
        ]
    )


def positive_example(i_t: ImageBuf, h_gt: Homography, h_ts: Homography) -> Example:
    """正样本：真实目标图 I_t，参考为 R 经 (H_gt·H_ts)⁻¹ 回扭的结果

    参考图经历了与生成样本相同次数的重采样，特征中只保留插值误差。
    """
    h_c = compose(h_gt, h_ts)
    reference, validity = warp_array(i_t.data, h_c)
    back, back_validity = warp_array(reference, invert(h_c))
    valid_back, _ = warp_array(fully_covered(validity).astype(np.float64), invert(h_c))
    valid = fully_covered(back_validity) & fully_covered(valid_back)
    return i_t, ImageBuf(data=np.clip(back, 0.0, 1.0)), valid


def negative_example(i_r: ImageBuf, i_t: ImageBuf, h_gt: Homography, h_ts: Homography) -> Example:
    """负样本：扰动图 I_r 与参考 R = W(I_t, H_gt·H_ts)。"""
    reference, validity = reference_image(i_t, h_gt, h_ts)
    return i_r, reference, fully_covered(validity)


def logistic_loss_and_grad(
    w: np.ndarray, b: float, x_pos: np.ndarray, x_neg: np.ndarray, l2: float = 0.0
) -> tuple[float, np.ndarray, float]:
    """L_qal（加 L2 正则）及其对 w、b 的解析梯度。"""
    p_pos = expit(x_pos @ w + b)
    p_neg = expit(x_neg @ w + b)
    loss = qal_loss(p_pos, p_neg) + 0.5 * l2 * float(w @ w)
    # dBCE/dz = p - y
    r_pos = (p_pos - 1.0) / len(x_pos)
    r_neg = p_neg / len(x_neg)
    grad_w = x_pos.T @ r_pos + x_neg.T @ r_neg + l2 * w
    grad_b = float(r_pos.sum() + r_neg.sum())
    return loss, grad_w, grad_b


def fit_logistic(
    x_pos: np.ndarray,
    x_neg: np.ndarray,
    epochs: int = 500,
    lr: float = 0.5,
    seed: int = 0,
    l2: float = 0.0,
) -> tuple[np.ndarray, float, list[float]]:
    """全批量梯度下降拟合逻辑回归

    Returns:
        (权重, 偏置, 每轮更新前的损失列表 + 最终损失)

    Raises:
        NonFiniteLossError: 损失出现 NaN/Inf
    """
    x_pos = np.asarray(x_pos, dtype=np.float64)
    x_neg = np.asarray(x_neg, dtype=np.float64)
    rng = make_rng(seed)
    w = rng.normal(0.0, 0.01, size=x_pos.shape[1])
    b = 0.0
    losses = []
    for epoch in range(epochs):
        loss, grad_w, grad_b = logistic_loss_and_grad(w, b, x_pos, x_neg, l2)
        if not np.isfinite(loss):
            raise NonFiniteLossError("QAM 训练损失非有限", step=epoch, diagnostics={"w": w.tolist(), "b": b})
        losses.append(loss)
        w = w - lr * grad_w
        b = b - lr * grad_b
    final, _, _ = logistic_loss_and_grad(w, b, x_pos, x_neg, l2)
    losses.append(final)
    return w, b, losses


def fit_quality_model(
    x_pos: np.ndarray,
    x_neg: np.ndarray,
    epochs: int = 500,
    lr: float = 0.5,
    seed: int = 0,
    l2: float = 0.0,
    tau: float = 0.5,
    min_per_class: int = 10,
) -> QualityModel:
    """在原始特征上训练 QAM（内部先按训练集统计量标准化）。

    Raises:
        InsufficientDataError: 任一类样本数少于 min_per_class
    """
    x_pos = np.atleast_2d(np.asarray(x_pos, dtype=np.float64))
    x_neg = np.atleast_2d(np.asarray(x_neg, dtype=np.float64))
    if len(x_pos) < min_per_class or len(x_neg) < min_per_class:
        raise InsufficientDataError(
            f"QAM 每类至少需要 {min_per_class} 个样本，实际为 正 {len(x_pos)} / 负 {len(x_neg)}"
        )

    stacked = np.vstack([x_pos, x_neg])
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std = np.where(std > 1e-8, std, 1.0)

    w, b, losses = fit_logistic((x_pos - mean) / std, (x_neg - mean) / std, epochs, lr, seed, l2)
    model = QualityModel(
        weights=w,
        bias=b,
        feature_mean=mean,
        feature_std=std,
        trained=True,
        feature_version=FEATURE_VERSION,
        tau=tau,
        final_loss=losses[-1],
    )
    p_pos = predict_proba(model, x_pos)
    p_neg = predict_proba(model, x_neg)
    accuracy = float((np.sum(p_pos > tau) + np.sum(p_neg <= tau)) / (len(p_pos) + len(p_neg)))
    logger.info("QAM trained: L_qal=%.4f accuracy=%.3f", losses[-1], accuracy)
    return model.model_copy(update={"train_accuracy": accuracy})


def qam_train(
    pos: list[Example],
    neg: list[Example],
    epochs: int = 500,
    lr: float = 0.5,
    seed: int = 0,
    l2: float = 0.0,
    tau: float = 0.5,
    threshold: float = 0.10,
    min_per_class: int = 10,
) -> QualityModel:
    """训练 QAM

    Args:
        pos: 正样本 (图像, 参考图, 有效区域) 列表，见 positive_example
        neg: 负样本列表，见 negative_example
        epochs, lr, seed, l2: 梯度下降超参数
        tau: 接受阈值
        threshold: 特征中的伪影阈值
        min_per_class: 每类最少样本数

    Returns:
        训练好的 QualityModel
    """
    if len(pos) < min_per_class or len(neg) < min_per_class:
        raise InsufficientDataError(f"QAM 每类至少需要 {min_per_class} 个样本，实际为 正 {len(pos)} / 负 {len(neg)}")
    x_pos = np.array([qam_features(img, ref, threshold, valid) for img, ref, valid in pos])
    x_neg = np.array([qam_features(img, ref, threshold, valid) for img, ref, valid in neg])
    return fit_quality_model(x_pos, x_neg, epochs, lr, seed, l2, tau, min_per_class)


def predict_proba(model: QualityModel, features: np.ndarray) -> np.ndarray:
    """原始特征（单个向量或矩阵）-> (0, 1) 内的打分。"""
    x = (np.atleast_2d(features) - model.feature_mean) / model.feature_std
    return np.clip(expit(x @ model.weights + model.bias), PROB_EPS, 1.0 - PROB_EPS)


def make_score(value: float, tau: float) -> QualityScore:
    """按严格不等式 value > tau 判定是否接受。"""
    return QualityScore(value=float(value), tau=float(tau), accepted=bool(value > tau))


def qam_score(
    model: QualityModel,
    img: ImageBuf,
    reference: ImageBuf,
    tau: float | None = None,
    threshold: float = 0.10,
    valid: np.ndarray | None = None,
) -> QualityScore:
    """对生成图打分，tau 缺省时使用模型自带的阈值。"""
    tau = model.tau if tau is None else tau
    value = float(predict_proba(model, qam_features(img, reference, threshold, valid))[0])
    return make_score(value, tau)


def save_quality_model(model: QualityModel, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.model_dump(mode="json"), indent=2), encoding="utf-8")
    return path


def load_quality_model(path: str | Path) -> QualityModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"QAM 模型不存在: {path}")
    return QualityModel.model_validate(json.loads(path.read_text(encoding="utf-8")))
