"""逆组合 Lucas-Kanade 单应对齐

模板为源图 I_s，图像为目标图 I_t，待估计的扭曲 G 把源图坐标映射到目标图坐标，
最终返回 H_ts = G⁻¹。参数化为 8 参数单应，在以图像中心为原点、半边长为单位的
归一化坐标下进行，因此各金字塔层共享同一组参数。
"""

import logging

import numpy as np
from scipy import ndimage

from ..config import LKConfig
from ..exceptions import HomographyError, SingularHessianError
from ..homography import identity
from ..imaging import fully_covered, resize_array, warp_array
from ..schema import Homography, ImageBuf, LKResult
from .base import EstimatorBase

logger = logging.getLogger(__name__)

# Hessian 条件数上限
MAX_CONDITION = 1e12

# 每层参与计算的最少有效像素数
MIN_PIXELS = 32

# 诊断标记
FLAG_ZERO_GRADIENT = "zero_gradient"
FLAG_SINGULAR_HESSIAN = "singular_hessian"
FLAG_DAMPED = "damped"
FLAG_MAX_ITERATIONS = "max_iterations"
FLAG_DIVERGED = "diverged"
FLAG_LOW_OVERLAP = "insufficient_overlap"
FLAG_NO_IMPROVEMENT = "no_improvement"


def _normalizer(width: int, height: int) -> np.ndarray:
    """原图像素坐标 -> 归一化坐标。"""
    s = max(width, height) / 2.0
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    return np.array([[1.0 / s, 0.0, -cx / s], [0.0, 1.0 / s, -cy / s], [0.0, 0.0, 1.0]])


def _level_matrix(width: int, height: int, level_shape: tuple[int, int]) -> np.ndarray:
    """金字塔层像素坐标 -> 归一化坐标（与 resize_array 的像素中心对齐方式一致）。"""
    fy = height / level_shape[0]
    fx = width / level_shape[1]
    to_full = np.array([[fx, 0.0, 0.5 * fx - 0.5], [0.0, fy, 0.5 * fy - 0.5], [0.0, 0.0, 1.0]])
    return _normalizer(width, height) @ to_full


def _pyramid(gray: np.ndarray, levels: int, sigma: float) -> list[np.ndarray]:
    """从粗到细的金字塔，最粗层短边不少于 8 像素。"""
    height, width = gray.shape
    out = []
    for level in range(levels):
        factor = 2**level
        shape = (height // factor, width // factor)
        if min(shape) < 8:
            break
        arr = gray if level == 0 else resize_array(gray, shape)
        if sigma > 0:
            arr = ndimage.gaussian_filter(arr, sigma=sigma, mode="nearest")
        out.append(arr)
    return out[::-1]


def _delta(p: np.ndarray) -> np.ndarray:
    return np.array([[1.0 + p[0], p[1], p[2]], [p[3], 1.0 + p[4], p[5]], [p[6], p[7], 1.0]])


def _steepest_descent(template: np.ndarray, n_level: np.ndarray) -> np.ndarray:
    """模板梯度乘以单位扭曲处的 Jacobian，形状 (H*W, 8)。"""
    h, w = template.shape
    gx = ndimage.sobel(template, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(template, axis=0, mode="nearest") / 8.0
    # 像素梯度 -> 归一化坐标梯度
    gu = (gx / n_level[0, 0]).reshape(-1)
    gv = (gy / n_level[1, 1]).reshape(-1)

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    u = (n_level[0, 0] * xs + n_level[0, 2]).reshape(-1)
    v = (n_level[1, 1] * ys + n_level[1, 2]).reshape(-1)
    zero = np.zeros_like(u)
    one = np.ones_like(u)
    jx = np.stack([u, v, one, zero, zero, zero, -u * u, -u * v], axis=1)
    jy = np.stack([zero, zero, zero, u, v, one, -u * v, -v * v], axis=1)
    return gu[:, None] * jx + gv[:, None] * jy


def _interior(shape: tuple[int, int]) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    mask[1:-1, 1:-1] = True
    return mask


def photometric_residual(i_s: np.ndarray, i_t: np.ndarray, h_ts: Homography) -> float:
    """mean |W(I_t, H_ts) - I_s|，只在完全覆盖的像素上统计（二维灰度数组）。

    没有重叠时返回 inf。
    """
    warped, validity = warp_array(i_t, h_ts)
    region = fully_covered(validity)
    if not region.any():
        return float("inf")
    return float(np.abs(warped - i_s)[region].mean())


def solve_step(hessian: np.ndarray, rhs: np.ndarray, damping: float) -> tuple[np.ndarray, bool]:
    """求解 Gauss-Newton 步长 H·Δp = rhs

    条件数超过 MAX_CONDITION 时加 damping·trace(H)/8 的对角阻尼后再解。

    Returns:
        (Δp, 是否加了阻尼)

    Raises:
        SingularHessianError: 阻尼后仍然奇异
    """
    damped = False
    if np.linalg.cond(hessian) > MAX_CONDITION:
        hessian = hessian + damping * (np.trace(hessian) / 8.0) * np.eye(8)
        damped = True
        if np.linalg.cond(hessian) > MAX_CONDITION:
            raise SingularHessianError(f"Hessian 奇异（damping={damping}）")
    try:
        return np.linalg.solve(hessian, rhs), damped
    except np.linalg.LinAlgError as e:
        raise SingularHessianError(str(e)) from e


def lk_align(
    i_s: ImageBuf,
    i_t: ImageBuf,
    cfg: LKConfig | None = None,
    init: Homography | None = None,
) -> LKResult:
    """由粗到细的逆组合 Lucas-Kanade，估计 H_ts

    Args:
        i_s: 源图（模板）
        i_t: 目标图
        cfg: LK 配置
        init: H_ts 初值，默认单位阵

    Returns:
        LKResult；未收敛时返回最后一次迭代结果并在 flags 中标记原因
    """
    cfg = cfg or LKConfig()
    init = init or identity()
    if i_s.shape != i_t.shape:
        raise ValueError(f"图像尺寸不一致: {i_s.shape} vs {i_t.shape}")

    gray_s = i_s.gray()
    gray_t = i_t.gray()
    height, width = gray_s.shape
    n0 = _normalizer(width, height)
    g_norm = n0 @ np.linalg.inv(init.m) @ np.linalg.inv(n0)

    flags: list[str] = []
    iterations = 0
    converged = False
    stop = False
    templates = _pyramid(gray_s, cfg.levels, cfg.blur_sigma)
    images = _pyramid(gray_t, cfg.levels, cfg.blur_sigma)

    for depth, (template, image) in enumerate(zip(templates, images)):
        finest = depth == len(templates) - 1
        n_level = _level_matrix(width, height, template.shape)
        n_inv = np.linalg.inv(n_level)
        sd = _steepest_descent(template, n_level)
        interior = _interior(template.shape).reshape(-1)
        level_converged = False

        for _ in range(cfg.max_iterations):
            try:
                g_level = Homography(m=n_inv @ g_norm @ n_level)
                warped, validity = warp_array(image, Homography(m=np.linalg.inv(g_level.m)))
            except HomographyError:
                flags.append(FLAG_DIVERGED)
                stop = True
                break
            iterations += 1

            valid = fully_covered(validity).reshape(-1) & interior
            if valid.sum() < MIN_PIXELS:
                flags.append(FLAG_LOW_OVERLAP)
                stop = True
                break

            error = (warped - template).reshape(-1)[valid]
            sd_valid = sd[valid]
            weights = np.ones_like(error)
            if cfg.huber_delta is not None:
                r = np.abs(error)
                weights = np.where(r <= cfg.huber_delta, 1.0, cfg.huber_delta / np.maximum(r, 1e-12))

            hessian = sd_valid.T @ (weights[:, None] * sd_valid)
            trace = float(np.trace(hessian))
            if not np.isfinite(trace) or trace <= 1e-12:
                flags.append(FLAG_ZERO_GRADIENT)
                stop = True
                break
            try:
                dp, damped = solve_step(hessian, sd_valid.T @ (weights * error), cfg.damping)
                g_next = g_norm @ np.linalg.inv(_delta(dp))
            except (SingularHessianError, np.linalg.LinAlgError) as e:
                logger.debug("LK stopped at level %d: %s", depth, e)
                flags.append(FLAG_SINGULAR_HESSIAN)
                stop = True
                break
            if damped and FLAG_DAMPED not in flags:
                flags.append(FLAG_DAMPED)
            if not np.all(np.isfinite(g_next)):
                flags.append(FLAG_DIVERGED)
                stop = True
                break
            g_norm = g_next / g_next[2, 2]
            if np.linalg.norm(dp) < cfg.eps:
                level_converged = True
                break

        if stop:
            break
        if finest:
            converged = level_converged
            if not level_converged:
                flags.append(FLAG_MAX_ITERATIONS)

    try:
        h_ts = Homography(m=np.linalg.inv(np.linalg.inv(n0) @ g_norm @ n0))
    except (HomographyError, np.linalg.LinAlgError):
        h_ts = init
        flags.append(FLAG_DIVERGED)

    final_error = photometric_residual(gray_s, gray_t, h_ts)
    initial_error = photometric_residual(gray_s, gray_t, init)
    if final_error > initial_error:
        flags.append(FLAG_NO_IMPROVEMENT)
        h_ts, final_error = init, initial_error
        converged = False

    if not converged:
        logger.debug("LK did not converge: flags=%s", flags)
    return LKResult(
        homography=h_ts,
        converged=converged,
        iterations=iterations,
        final_error=final_error,
        flags=flags,
    )


class LKEstimator(EstimatorBase):
    """以单位阵（或给定初值）初始化的 LK 对齐。"""

    name = "lk"

    def __init__(self, cfg: LKConfig | None = None):
        self.cfg = cfg or LKConfig()

    def estimate_ts(self, i_s: ImageBuf, i_t: ImageBuf) -> Homography:
        return lk_align(i_s, i_t, self.cfg).homography
