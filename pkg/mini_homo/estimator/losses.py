"""训练损失

L_sup 为双向四角点位移的 L1 损失，每一项取四个角点 L1 距离的均值（即 Σ|Δ| / 4），
所有角点在 x 方向偏 1 像素时该项为 1.0。
L_total = L_sup + λ1·L_ccl + λ2·L_qal。
"""

import numpy as np

from ..homography import homography_to_offsets, invert, offsets_to_homography
from ..schema import CornerOffsets


def offsets_l1(pred: np.ndarray, target: np.ndarray) -> float:
    """Σ|pred - target| / 4（8 维角点位移向量）。"""
    return float(np.abs(np.asarray(pred) - np.asarray(target)).sum() / 4.0)


def backward_target(d_gt: CornerOffsets) -> CornerOffsets:
    """D(H_gt⁻¹)：由正向位移还原 H_gt 后求逆再取位移。"""
    frame = d_gt.frame
    return homography_to_offsets(invert(offsets_to_homography(d_gt)), frame)


def sup_loss(d_pred_fwd: CornerOffsets, d_pred_bwd: CornerOffsets, d_gt: CornerOffsets) -> float:
    """L_sup = |D_fwd - D(H_gt)|₁ + |D_bwd - D(H_gt⁻¹)|₁

    Raises:
        ValueError: 三者的 patch 尺寸不一致
    """
    if not (d_pred_fwd.frame == d_pred_bwd.frame == d_gt.frame):
        raise ValueError(f"patch 尺寸不一致: {d_pred_fwd.frame}, {d_pred_bwd.frame}, {d_gt.frame}")
    return offsets_l1(d_pred_fwd.d, d_gt.d) + offsets_l1(d_pred_bwd.d, backward_target(d_gt).d)


def total_loss(l_sup: float, l_ccl: float, l_qal: float, lambda1: float = 0.5, lambda2: float = 0.1) -> float:
    return l_sup + lambda1 * l_ccl + lambda2 * l_qal
