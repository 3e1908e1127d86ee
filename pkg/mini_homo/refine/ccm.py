"""内容一致性模块 (CCM)

以 R = W(I_t, H_gt·H_ts) 为参考检测并替换生成图中的伪影；
L_ccl 在 I_t 坐标系下比较 F(Î'_t) 的回扭结果与 F(I_t)。
"""

import logging

import numpy as np
from scipy import ndimage

from ..homography import compose, invert
from ..imaging import feature_array, fully_covered, gray_array, warp_array
from ..schema import Homography, ImageBuf

logger = logging.getLogger(__name__)


def reference_image(i_t: ImageBuf, h_gt: Homography, h_ts: Homography) -> tuple[ImageBuf, np.ndarray]:
    """R = W(I_t, H_gt·H_ts) 及其有效性。"""
    data, validity = warp_array(i_t.data, compose(h_gt, h_ts))
    return ImageBuf(data=np.clip(data, 0.0, 1.0)), validity


def artifact_map(img: np.ndarray, reference: np.ndarray, threshold: float) -> np.ndarray:
    """3x3 平滑后 |img - reference| 超过阈值的像素。"""
    residual = np.abs(gray_array(img) - gray_array(reference))
    smoothed = ndimage.uniform_filter(residual, size=3, mode="nearest")
    return smoothed > threshold


def ccl_loss(i_hat: ImageBuf, i_t: ImageBuf, h_gt: Homography, h_ts: Homography, erosion: int = 6) -> float:
    """L_ccl = |W(F(Î'_t), (H_gt·H_ts)⁻¹) - F(I_t)|₁ 在有效区域内的均值

    有效区域为回扭覆盖完整的像素再腐蚀 erosion 像素（去掉特征支撑跨越图像边界的部分）。
    """
    if i_hat.shape != i_t.shape:
        raise ValueError(f"图像尺寸不一致: {i_hat.shape} vs {i_t.shape}")
    f_hat = feature_array(i_hat.gray())
    f_t = feature_array(i_t.gray())
    back, validity = warp_array(f_hat, invert(compose(h_gt, h_ts)))
    region = fully_covered(validity)
    if erosion > 0:
        eroded = ndimage.binary_erosion(region, iterations=erosion, border_value=0)
        if eroded.any():
            region = eroded
    if not region.any():
        logger.warning("content consistency loss has an empty valid region")
        return 0.0
    return float(np.abs(back - f_t)[region].mean())


def ccm_reconstruct(
    i_t_prime: ImageBuf,
    i_t: ImageBuf,
    h_gt: Homography,
    h_ts: Homography,
    threshold: float = 0.10,
    feather: float = 2.0,
    erosion: int = 6,
) -> ImageBuf:
    """Î'_t：把伪影像素替换为参考 R 的内容（带羽化过渡）

    只有当替换后 L_ccl 不增大时才接受结果，否则原样返回输入。

    Args:
        i_t_prime: 生成的目标图 I'_t
        i_t: 原始目标图 I_t
        h_gt: 真值单应
        h_ts: 生成时使用的 H_ts
        threshold: 伪影阈值（[0, 1] 灰度）
        feather: 羽化宽度（像素）
        erosion: 计算 L_ccl 时的有效区域腐蚀半径

    Returns:
        重建后的 Î'_t
    """
    reference, validity = reference_image(i_t, h_gt, h_ts)
    artifacts = artifact_map(i_t_prime.data, reference.data, threshold) & fully_covered(validity)
    if not artifacts.any():
        return i_t_prime

    distance = ndimage.distance_transform_edt(~artifacts)
    alpha = np.clip(1.0 - distance / (feather + 1.0), 0.0, 1.0) * np.clip(validity, 0.0, 1.0)
    alpha = alpha[:, :, None]
    out = ImageBuf(data=np.clip((1.0 - alpha) * i_t_prime.data + alpha * reference.data, 0.0, 1.0))

    before = ccl_loss(i_t_prime, i_t, h_gt, h_ts, erosion)
    after = ccl_loss(out, i_t, h_gt, h_ts, erosion)
    if after > before:
        logger.debug("CCM reconstruction rejected: L_ccl %.5f -> %.5f", before, after)
        return i_t_prime
    logger.debug("CCM replaced %d artifact pixels: L_ccl %.5f -> %.5f", int(artifacts.sum()), before, after)
    return out
