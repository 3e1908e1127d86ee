"""主平面掩码估计

用光度残差代替训练好的分割网络：把目标图按 H_ts 扭曲到源图坐标后求残差，
经盒式滤波、阈值化和形态学开闭运算得到二值平面区域，再做线性羽化得到软掩码。
M_t 用 H_ts⁻¹ 对称地得到。
"""

import logging

import numpy as np
from scipy import ndimage

from .homography import invert
from .imaging import fully_covered, warp_array
from .schema import Homography, ImageBuf, PlaneMask

logger = logging.getLogger(__name__)


def _disk(radius: int) -> np.ndarray:
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return (xx**2 + yy**2) <= radius**2


def _open_close(binary: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return binary
    structure = _disk(radius)
    pad = 2 * radius
    padded = np.pad(binary, pad, mode="edge")
    padded = ndimage.binary_opening(padded, structure=structure)
    padded = ndimage.binary_closing(padded, structure=structure)
    return padded[pad:-pad, pad:-pad]


def feather(binary: np.ndarray, width: float) -> np.ndarray:
    """二值区域的线性羽化：按到边界的有符号距离映射为 [0, 1] 权重。"""
    binary = np.asarray(binary, dtype=bool)
    if binary.all():
        return np.ones(binary.shape)
    if not binary.any():
        return np.zeros(binary.shape)
    if width <= 0:
        return binary.astype(np.float64)
    inside = ndimage.distance_transform_edt(binary)
    outside = ndimage.distance_transform_edt(~binary)
    signed = np.where(binary, inside - 0.5, 0.5 - outside)
    return np.clip(0.5 + signed / (2.0 * width), 0.0, 1.0)


def mask_from_residual(
    residual: np.ndarray,
    rho: float = 0.06,
    box_radius: int = 3,
    morph_radius: int = 2,
    feather_width: float = 2.0,
) -> np.ndarray:
    """由逐像素残差得到软平面掩码

    Args:
        residual: 非负残差数组 (H, W)
        rho: 平面阈值，平滑后残差 < rho 判为平面
        box_radius: 盒式滤波半径
        morph_radius: 开闭运算圆盘半径
        feather_width: 羽化宽度（像素）

    Returns:
        [0, 1] 权重数组
    """
    smoothed = ndimage.uniform_filter(np.asarray(residual, dtype=np.float64), size=2 * box_radius + 1, mode="nearest")
    plane = _open_close(smoothed < rho, morph_radius)
    return feather(plane, feather_width)


def _one_side(
    i_a: np.ndarray,
    i_b: np.ndarray,
    h_ba: Homography,
    rho: float,
    box_radius: int,
    morph_radius: int,
    feather_width: float,
) -> np.ndarray:
    # h_ba 把 i_b 坐标映射到 i_a 坐标
    warped, validity = warp_array(i_b, h_ba)
    residual = np.abs(warped - i_a)
    residual[~fully_covered(validity)] = 0.0
    return mask_from_residual(residual, rho, box_radius, morph_radius, feather_width)


def estimate_masks(
    i_s: ImageBuf,
    i_t: ImageBuf,
    h_ts: Homography,
    rho: float = 0.06,
    box_radius: int = 3,
    morph_radius: int = 2,
    feather_width: float = 2.0,
) -> tuple[PlaneMask, PlaneMask]:
    """估计源图与目标图的主平面掩码 (M_s, M_t)

    扭曲不到的区域没有证据，按平面处理。

    Raises:
        SingularMatrixError: h_ts 不可逆
    """
    if i_s.shape != i_t.shape:
        raise ValueError(f"图像尺寸不一致: {i_s.shape} vs {i_t.shape}")
    gray_s = i_s.gray()
    gray_t = i_t.gray()
    # 平面上 W(I_t, H_ts) 与 I_s 一致，W(I_s, H_ts⁻¹) 与 I_t 一致
    m_s = _one_side(gray_s, gray_t, h_ts, rho, box_radius, morph_radius, feather_width)
    m_t = _one_side(gray_t, gray_s, invert(h_ts), rho, box_radius, morph_radius, feather_width)
    logger.debug("plane mask means: M_s=%.3f M_t=%.3f", m_s.mean(), m_t.mean())
    return PlaneMask(weights=m_s), PlaneMask(weights=m_t)
