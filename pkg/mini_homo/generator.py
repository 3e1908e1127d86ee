"""G 阶段：由无标注图像对生成带标签的训练样本 (I_s, I'_t, H_gt)

realistic 策略：主平面内容按 H_gt 扭曲，非平面内容按 H_gt·H_ts 扭曲，
两部分按扭曲后的掩码权重归一化混合；总权重低于 ε_w 的空洞用 W(I_t, H_gt·H_ts) 填充。
"""

import logging

import numpy as np
from scipy import ndimage

from .config import SamplingConfig, SegConfig
from .homography import compose, corner_error, identity, sample_gt
from .imaging import fully_covered, warp_array
from .plane_seg import estimate_masks
from .schema import (
    Homography,
    ImageBuf,
    PerturbationRanges,
    PlaneMask,
    Provenance,
    Strategy,
    TrainingSample,
)
from .utils import child_seed

logger = logging.getLogger(__name__)

EMPTY_PLANE_FLAG = "empty_dominant_plane"


def _check_dims(*shapes: tuple[int, int]) -> None:
    if len(set(shapes)) != 1:
        raise ValueError(f"输入尺寸不一致: {shapes}")


def _expand(weights: np.ndarray, data: np.ndarray) -> np.ndarray:
    return weights[:, :, None] if data.ndim == 3 else weights


def generate_naive(i_s: ImageBuf, i_t: ImageBuf, m_s: PlaneMask, m_t: PlaneMask, h_gt: Homography) -> ImageBuf:
    """I'_t = W(I_s·M_s + I_t·(1 - M_t), H_gt)，先融合再整体扭曲一次。"""
    _check_dims(i_s.shape, i_t.shape, m_s.shape, m_t.shape)
    fused = i_s.data * _expand(m_s.weights, i_s.data) + i_t.data * _expand(1.0 - m_t.weights, i_t.data)
    out, _ = warp_array(np.clip(fused, 0.0, 1.0), h_gt)
    return ImageBuf(data=np.clip(out, 0.0, 1.0))


def generate_realistic(
    i_s: ImageBuf,
    i_t: ImageBuf,
    m_s: PlaneMask,
    m_t: PlaneMask,
    h_gt: Homography,
    h_ts: Homography,
    hole_floor: float = 0.05,
    empty_plane_floor: float = 0.05,
) -> ImageBuf:
    """I'_t = W(P_d^s, H_gt) + W(P_n^t, H_gt·H_ts)，混合权重归一化并填补空洞

    Args:
        i_s, i_t: 源图与目标图
        m_s, m_t: 主平面软掩码
        h_gt: 采样得到的真值单应（I_s 坐标 -> I'_t 坐标）
        h_ts: 目标图到源图的单应
        hole_floor: ε_w，总权重低于该值的像素视为空洞
        empty_plane_floor: mean(M_s) 低于该值时记录警告

    Returns:
        生成的目标图 I'_t
    """
    _check_dims(i_s.shape, i_t.shape, m_s.shape, m_t.shape)
    if m_s.weights.mean() < empty_plane_floor:
        logger.warning("dominant plane nearly empty: mean(M_s)=%.4f", m_s.weights.mean())

    h_c = compose(h_gt, h_ts)
    ms = m_s.weights
    nt = 1.0 - m_t.weights

    plane, _ = warp_array(i_s.data * _expand(ms, i_s.data), h_gt)
    plane_w, _ = warp_array(ms, h_gt)
    rest, _ = warp_array(i_t.data * _expand(nt, i_t.data), h_c)
    rest_w, _ = warp_array(nt, h_c)
    fill, _ = warp_array(i_t.data, h_c)

    total = plane_w + rest_w
    holes = total < hole_floor
    safe = np.where(holes, 1.0, total)
    blended = (plane + rest) / _expand(safe, plane)
    out = np.where(_expand(holes, blended), fill, blended)
    return ImageBuf(data=np.clip(out, 0.0, 1.0))


def generate_single_image(i_s: ImageBuf, h_gt: Homography) -> ImageBuf:
    """单图策略：I'_t = W(I_s, H_gt)，整幅图视为一个平面。"""
    out, _ = warp_array(i_s.data, h_gt)
    return ImageBuf(data=np.clip(out, 0.0, 1.0))


def sample_disturbance(
    ranges: PerturbationRanges,
    rng_seed: int,
    frame: tuple[int, int],
    min_shift: float = 0.0,
    max_attempts: int = 16,
) -> Homography:
    """采样扰动 ΔH

    平均角点位移低于 min_shift（像素）时用派生种子重采样，最多 max_attempts 次后保留最后一次结果。
    """
    delta = sample_gt(ranges, rng_seed, frame=frame)
    attempt = 1
    while corner_error(delta, identity(), frame) < min_shift and attempt < max_attempts:
        delta = sample_gt(ranges, child_seed(rng_seed, f"disturbance-{attempt}"), frame=frame)
        attempt += 1
    return delta


def disturbance_masks(
    i_s: ImageBuf,
    i_t: ImageBuf,
    m_s: PlaneMask,
    m_t: PlaneMask,
    disturbed_h_ts: Homography,
    seg: SegConfig | None = None,
) -> tuple[PlaneMask, PlaneMask]:
    """在扰动后的 H_ts 下重新估计掩码，并与原掩码逐像素取最小值。

    错位区域由此归入非平面部分，按扰动后的单应扭曲。
    """
    seg = seg or SegConfig()
    d_s, d_t = estimate_masks(i_s, i_t, disturbed_h_ts, seg.rho, seg.box_radius, seg.morph_radius, seg.feather)
    return (
        PlaneMask(weights=np.minimum(m_s.weights, d_s.weights)),
        PlaneMask(weights=np.minimum(m_t.weights, d_t.weights)),
    )


def make_disturbance(
    i_s: ImageBuf,
    i_t: ImageBuf,
    m_s: PlaneMask,
    m_t: PlaneMask,
    h_gt: Homography,
    h_ts: Homography,
    rng_seed: int,
    ranges: PerturbationRanges | None = None,
    hole_floor: float = 0.05,
    min_shift: float = 0.0,
    delta: Homography | None = None,
) -> ImageBuf:
    """带伪影的负样本 I_r：用 ΔH·H_ts 代替 H_ts 运行 realistic 生成

    掩码按给定值使用；ΔH 为单位阵时结果与 generate_realistic 相同。

    Args:
        rng_seed: ΔH 的采样种子
        ranges: 扰动范围，默认 SamplingConfig().disturbance
        min_shift: ΔH 的平均角点位移下限（像素），见 sample_disturbance
        delta: 已采样的 ΔH，给定时不再采样
    """
    if delta is None:
        ranges = ranges or SamplingConfig().disturbance
        delta = sample_disturbance(ranges, rng_seed, (i_s.width, i_s.height), min_shift)
    disturbed = compose(delta, h_ts)
    return generate_realistic(i_s, i_t, m_s, m_t, h_gt, disturbed, hole_floor, empty_plane_floor=0.0)


def fusion_band(mask: PlaneMask, radius: int = 2) -> PlaneMask:
    """融合边界邻域：二值化掩码的膨胀与腐蚀之差。"""
    binary = mask.weights > 0.5
    if radius <= 0:
        return PlaneMask(weights=np.zeros(binary.shape))
    pad = radius + 1
    padded = np.pad(binary, pad, mode="edge")
    dilated = ndimage.binary_dilation(padded, iterations=radius)
    eroded = ndimage.binary_erosion(padded, iterations=radius)
    band = (dilated ^ eroded)[pad:-pad, pad:-pad]
    return PlaneMask(weights=band.astype(np.float64))


def label_residual(i_s: ImageBuf, i_t_prime: ImageBuf, m_s: PlaneMask, h_gt: Homography) -> float:
    """标签准则残差：扭曲后主平面权重 > 0.5 区域内 |W(I_s, H_gt) - I'_t| 的均值。

    主平面区域为空时返回 nan。
    """
    warped, validity = warp_array(i_s.data, h_gt)
    plane_w, _ = warp_array(m_s.weights, h_gt)
    region = (plane_w > 0.5) & fully_covered(validity)
    if not region.any():
        return float("nan")
    diff = np.abs(warped - i_t_prime.data).mean(axis=2)
    return float(diff[region].mean())


def assemble_sample(
    i_s: ImageBuf,
    i_t: ImageBuf,
    m_s: PlaneMask,
    m_t: PlaneMask,
    h_gt: Homography,
    h_ts: Homography,
    pair_id: str,
    iteration: int,
    seed: int,
    strategy: Strategy = Strategy.REALISTIC,
    hole_floor: float = 0.05,
    empty_plane_floor: float = 0.05,
) -> TrainingSample:
    """x = G(I_s, I_t, Θ_D, Θ_H)：按策略生成 I'_t 并附上来源信息。"""
    flags = []
    if m_s.weights.mean() < empty_plane_floor:
        flags.append(EMPTY_PLANE_FLAG)

    if strategy == Strategy.REALISTIC:
        i_t_prime = generate_realistic(i_s, i_t, m_s, m_t, h_gt, h_ts, hole_floor, empty_plane_floor)
    elif strategy == Strategy.NAIVE:
        i_t_prime = generate_naive(i_s, i_t, m_s, m_t, h_gt)
    else:
        i_t_prime = generate_single_image(i_s, h_gt)

    provenance = Provenance(
        pair_id=pair_id,
        iteration=iteration,
        seed=seed,
        h_ts=h_ts,
        strategy=Strategy(strategy).value,
        flags=flags,
    )
    return TrainingSample(i_s=i_s, i_t_prime=i_t_prime, h_gt=h_gt, provenance=provenance)
