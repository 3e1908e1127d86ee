"""栅格操作：单应反向扭曲、特征提取、接缝能量与预处理

扭曲约定 W(img, H)(p) = img(H⁻¹ p)，双线性插值，越界像素填 0，
有效性掩码由同一插值作用在全 1 图像上得到（边界处按覆盖比例取值）。
"""

import numpy as np
from scipy import ndimage

from ..exceptions import EmptyBandError
from ..homography import invert
from ..schema import FeatureMap, Homography, ImageBuf, PlaneMask

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])

# 归一化时分母的保护项
NORMALIZE_EPS = 1e-6

# Sobel 核的 L1 归一化系数，使单位台阶的梯度响应为 1
SOBEL_SCALE = 8.0

# 双线性采样权重之和有舍入误差，有效性不低于该值视为完全覆盖
FULL_COVERAGE = 1.0 - 1e-9


def _sample(arr: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    return ndimage.map_coordinates(arr, [ys, xs], order=1, mode="grid-constant", cval=0.0, prefilter=False)


def _source_coords(h: Homography, out_shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    out_h, out_w = out_shape
    inv = invert(h).m
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    sw = inv[2, 0] * xs + inv[2, 1] * ys + inv[2, 2]
    at_infinity = np.abs(sw) <= 1e-12
    sw = np.where(at_infinity, 1.0, sw)
    sx = sx / sw
    sy = sy / sw
    # 映射到无穷远的像素放到图像外，取值为 0
    sx[at_infinity] = -10.0
    sy[at_infinity] = -10.0
    return sx, sy


def warp_array(
    arr: np.ndarray, h: Homography, out_shape: tuple[int, int] | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """对 (H, W) 或 (H, W, C) 数组做反向扭曲

    Args:
        arr: 输入数组
        h: 单应矩阵（输入坐标 -> 输出坐标）
        out_shape: 输出 (高, 宽)，默认与输入相同

    Returns:
        (扭曲后的数组, 有效性数组)
    """
    arr = np.asarray(arr, dtype=np.float64)
    out_shape = out_shape or arr.shape[:2]
    sx, sy = _source_coords(h, out_shape)
    validity = _sample(np.ones(arr.shape[:2]), sx, sy)
    if arr.ndim == 2:
        return _sample(arr, sx, sy), validity
    warped = np.stack([_sample(arr[:, :, c], sx, sy) for c in range(arr.shape[2])], axis=2)
    return warped, validity


def fully_covered(validity: np.ndarray) -> np.ndarray:
    """有效性为 1（完全落在输入图像内）的像素。"""
    return np.asarray(validity) >= FULL_COVERAGE


def warp(img: ImageBuf, h: Homography, out_dims: tuple[int, int] | None = None) -> tuple[ImageBuf, PlaneMask]:
    """W(img, H)：反向扭曲图像，返回图像与有效性掩码。

    Args:
        img: 输入图像
        h: 单应矩阵
        out_dims: 输出 (宽, 高)，默认与输入相同
    """
    out_shape = (out_dims[1], out_dims[0]) if out_dims else None
    data, validity = warp_array(img.data, h, out_shape)
    if not img.normalized:
        data = np.clip(data, 0.0, 1.0)
    return ImageBuf(data=data, normalized=img.normalized), PlaneMask(weights=np.clip(validity, 0.0, 1.0))


def warp_mask(mask: PlaneMask, h: Homography, out_dims: tuple[int, int] | None = None) -> PlaneMask:
    out_shape = (out_dims[1], out_dims[0]) if out_dims else None
    weights, _ = warp_array(mask.weights, h, out_shape)
    return PlaneMask(weights=np.clip(weights, 0.0, 1.0))


def gray_array(data: np.ndarray) -> np.ndarray:
    """(H, W, C) 或 (H, W) 数组的二维灰度视图。"""
    if data.ndim == 2:
        return data
    if data.shape[2] == 1:
        return data[:, :, 0]
    return data @ GRAY_WEIGHTS


def to_grayscale(img: ImageBuf) -> ImageBuf:
    if img.channels == 1:
        return img
    return ImageBuf(data=img.gray()[:, :, None], normalized=img.normalized)


def center_crop(img: ImageBuf, dims: tuple[int, int]) -> ImageBuf:
    """中心裁剪到 (宽, 高)。"""
    width, height = dims
    if width > img.width or height > img.height or width <= 0 or height <= 0:
        raise ValueError(f"裁剪尺寸 {dims} 超出图像尺寸 {(img.width, img.height)}")
    top = (img.height - height) // 2
    left = (img.width - width) // 2
    return ImageBuf(data=img.data[top : top + height, left : left + width], normalized=img.normalized)


def normalize_intensity(img: ImageBuf) -> ImageBuf:
    """零均值/单位方差归一化（常数图像归一化为全 0）。"""
    data = img.data
    return ImageBuf(data=(data - data.mean()) / (data.std() + NORMALIZE_EPS), normalized=True)


def resize_array(arr: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """二维数组双线性缩放，缩小时先做高斯抗混叠。"""
    arr = np.asarray(arr, dtype=np.float64)
    in_h, in_w = arr.shape
    out_h, out_w = out_shape
    fy, fx = in_h / out_h, in_w / out_w
    sigma = (max(0.0, (fy - 1.0) / 2.0), max(0.0, (fx - 1.0) / 2.0))
    if sigma[0] > 0 or sigma[1] > 0:
        arr = ndimage.gaussian_filter(arr, sigma=sigma, mode="nearest")
    ys = (np.arange(out_h) + 0.5) * fy - 0.5
    xs = (np.arange(out_w) + 0.5) * fx - 0.5
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(arr, [gy, gx], order=1, mode="nearest", prefilter=False)


def sobel_magnitudes(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """归一化后的水平/垂直 Sobel 响应绝对值。"""
    gx = np.abs(ndimage.sobel(gray, axis=1, mode="nearest")) / SOBEL_SCALE
    gy = np.abs(ndimage.sobel(gray, axis=0, mode="nearest")) / SOBEL_SCALE
    return gx, gy


def gradient_magnitude(gray: np.ndarray) -> np.ndarray:
    gx, gy = sobel_magnitudes(gray)
    return np.hypot(gx, gy)


def feature_array(gray: np.ndarray) -> np.ndarray:
    """固定手工特征栈，形状 (H, W, 5)

    通道依次为：σ=1 高斯模糊灰度、全分辨率 |Sobel x|、|Sobel y|、
    半分辨率 |Sobel x|、|Sobel y|（上采样回原尺寸）。
    """
    gray = np.asarray(gray, dtype=np.float64)
    blurred = ndimage.gaussian_filter(gray, sigma=1.0, mode="nearest")
    gx, gy = sobel_magnitudes(gray)
    half = blurred[::2, ::2]
    hx, hy = sobel_magnitudes(half)
    hx = resize_array(hx, gray.shape)
    hy = resize_array(hy, gray.shape)
    return np.stack([blurred, gx, gy, hx, hy], axis=2)


def feature_extract(img: ImageBuf) -> FeatureMap:
    """F(·)：图像的确定性特征图（多通道输入先转灰度）。"""
    return FeatureMap(data=feature_array(img.gray()))


def seam_energy(img: ImageBuf, band: PlaneMask) -> float:
    """融合边界邻域内的加权平均梯度幅值。

    Raises:
        EmptyBandError: 邻域权重之和为 0
    """
    weights = band.weights
    if weights.shape != img.shape:
        raise ValueError(f"邻域尺寸 {weights.shape} 与图像尺寸 {img.shape} 不一致")
    total = weights.sum()
    if total <= 0:
        raise EmptyBandError("接缝邻域为空")
    return float((gradient_magnitude(img.gray()) * weights).sum() / total)
