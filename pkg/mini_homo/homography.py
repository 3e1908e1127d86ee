"""单应矩阵代数

构造、复合、求逆、点映射、DLT 求解、四角点位移参数化以及 H_gt 随机采样。
所有函数都是作用在不可变值上的纯函数，可在任意线程中调用。

约定：
- 点映射 p' = H p（齐次坐标后做透视除法）
- compose(a, b) 表示先作用 b 再作用 a，即矩阵乘积 a @ b
- patch 角点顺序为 (0,0), (w,0), (w,h), (0,h)
"""

from collections.abc import Sequence

import numpy as np

from .exceptions import DegenerateConfigurationError, PointAtInfinityError
from .schema import CornerOffsets, Homography, PerturbationRanges, normalize_matrix
from .utils import make_rng

# 齐次坐标 w 的绝对值低于该值视为无穷远点
W_EPS = 1e-12

# 线性系统第 8 个奇异值与最大奇异值之比的下限
RANK_TOL = 1e-12

Frame = tuple[float, float]


def identity() -> Homography:
    return Homography(m=np.eye(3))


def from_matrix(m: Sequence[float] | np.ndarray) -> Homography:
    """从 3x3 矩阵或 9 个行主序数值构造单应矩阵。"""
    return Homography(m=m)


def translation(tx: float, ty: float) -> Homography:
    return Homography(m=[[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def scaling(s: float) -> Homography:
    return Homography(m=[[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, 1.0]])


def normalize(m: np.ndarray | Homography) -> np.ndarray:
    """归一化 3x3 矩阵，对任意非零缩放 c 满足 normalize(c*H) == normalize(H)。"""
    if isinstance(m, Homography):
        m = m.m
    return normalize_matrix(m)


def compose(a: Homography, b: Homography) -> Homography:
    """复合变换：先 b 后 a。"""
    return Homography(m=a.m @ b.m)


def invert(h: Homography) -> Homography:
    """求逆；行列式低于下限时由 Homography 校验抛出 SingularMatrixError。"""
    return Homography(m=np.linalg.inv(h.m))


def transform_points(h: Homography, points: np.ndarray) -> np.ndarray:
    """批量映射点，points 形状为 (n, 2)。

    Raises:
        PointAtInfinityError: 任一点映射到 w≈0
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    homog = np.hstack([pts, np.ones((pts.shape[0], 1))]) @ h.m.T
    w = homog[:, 2]
    if np.any(np.abs(w) <= W_EPS):
        raise PointAtInfinityError(f"有 {int(np.sum(np.abs(w) <= W_EPS))} 个点映射到无穷远")
    return homog[:, :2] / w[:, None]


def transform_point(h: Homography, p: Sequence[float]) -> tuple[float, float]:
    x, y = transform_points(h, np.asarray(p, dtype=np.float64)[None, :])[0]
    return (float(x), float(y))


def patch_corners(frame: Frame) -> np.ndarray:
    """patch 的 4 个角点，形状 (4, 2)。"""
    w, h = frame
    return np.array([[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]])


def _hartley_normalizer(points: np.ndarray) -> np.ndarray:
    centroid = points.mean(axis=0)
    mean_dist = np.sqrt(((points - centroid) ** 2).sum(axis=1)).mean()
    if mean_dist <= 0:
        raise DegenerateConfigurationError("所有点重合")
    s = np.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def _apply(t: np.ndarray, points: np.ndarray) -> np.ndarray:
    homog = np.hstack([points, np.ones((points.shape[0], 1))]) @ t.T
    return homog[:, :2] / homog[:, 2:3]


def _check_distinct(points: np.ndarray, name: str) -> None:
    scale = max(float(np.abs(points).max()), 1.0)
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    np.fill_diagonal(dist, np.inf)
    if np.any(dist <= 1e-9 * scale):
        raise DegenerateConfigurationError(f"{name} 中存在重复点")


def _check_no_collinear_triple(points: np.ndarray, name: str) -> None:
    scale = max(float(np.ptp(points, axis=0).max()), 1e-300)
    n = points.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                u = points[j] - points[i]
                v = points[k] - points[i]
                if abs(u[0] * v[1] - u[1] * v[0]) <= 1e-9 * scale * scale:
                    raise DegenerateConfigurationError(f"{name} 中存在三点共线: {(i, j, k)}")


def dlt_solve(src: np.ndarray, dst: np.ndarray) -> Homography:
    """DLT 求解 src -> dst 的单应矩阵

    使用 Hartley 归一化（平移到质心，平均距离缩放到 √2）后在 2n x 9 线性系统上做 SVD 最小二乘。

    Args:
        src: 源点，形状 (n, 2)，n >= 4
        dst: 目标点，形状 (n, 2)

    Returns:
        将 src 映射到 dst 的 Homography

    Raises:
        DegenerateConfigurationError: 点数不足、重复点、4 点时三点共线，或线性系统秩亏
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise DegenerateConfigurationError(f"点数不一致: {src.shape[0]} vs {dst.shape[0]}")
    if src.shape[0] < 4:
        raise DegenerateConfigurationError(f"至少需要 4 对点，实际为 {src.shape[0]}")
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise DegenerateConfigurationError("点坐标含有非有限值")

    _check_distinct(src, "源点")
    _check_distinct(dst, "目标点")
    if src.shape[0] == 4:
        _check_no_collinear_triple(src, "源点")
        _check_no_collinear_triple(dst, "目标点")

    t_src = _hartley_normalizer(src)
    t_dst = _hartley_normalizer(dst)
    p = _apply(t_src, src)
    q = _apply(t_dst, dst)

    n = p.shape[0]
    a = np.zeros((2 * n, 9))
    x, y = p[:, 0], p[:, 1]
    u, v = q[:, 0], q[:, 1]
    a[0::2, 0] = -x
    a[0::2, 1] = -y
    a[0::2, 2] = -1.0
    a[0::2, 6] = u * x
    a[0::2, 7] = u * y
    a[0::2, 8] = u
    a[1::2, 3] = -x
    a[1::2, 4] = -y
    a[1::2, 5] = -1.0
    a[1::2, 6] = v * x
    a[1::2, 7] = v * y
    a[1::2, 8] = v

    _, s, vt = np.linalg.svd(a)
    if s[0] <= 0 or s[7] / s[0] < RANK_TOL:
        raise DegenerateConfigurationError("线性系统秩亏")
    hn = vt[-1].reshape(3, 3)
    m = np.linalg.inv(t_dst) @ hn @ t_src
    return Homography(m=normalize_matrix(m))


def _is_simple_convex(quad: np.ndarray) -> bool:
    crosses = []
    for i in range(4):
        e1 = quad[(i + 1) % 4] - quad[i]
        e2 = quad[(i + 2) % 4] - quad[(i + 1) % 4]
        crosses.append(e1[0] * e2[1] - e1[1] * e2[0])
    crosses = np.array(crosses)
    return bool(np.all(crosses > 0) or np.all(crosses < 0))


def offsets_to_homography(d: CornerOffsets) -> Homography:
    """四角点位移 -> 单应矩阵（对 (corner, corner + offset) 做 DLT）。

    Raises:
        DegenerateConfigurationError: 位移后的四边形自交、非凸或退化
    """
    corners = patch_corners(d.frame)
    moved = corners + d.corners()
    if not _is_simple_convex(moved):
        raise DegenerateConfigurationError("位移后的角点构成自交或非凸四边形")
    return dlt_solve(corners, moved)


def homography_to_offsets(h: Homography, frame: Frame) -> CornerOffsets:
    """单应矩阵 -> 四角点位移，offset_k = h(corner_k) - corner_k。"""
    corners = patch_corners(frame)
    moved = transform_points(h, corners)
    return CornerOffsets(d=(moved - corners).reshape(-1), width=frame[0], height=frame[1])


def corner_error(a: Homography, b: Homography, frame: Frame) -> float:
    """两个单应矩阵在 patch 角点上的平均欧氏距离（像素）。"""
    corners = patch_corners(frame)
    diff = transform_points(a, corners) - transform_points(b, corners)
    return float(np.sqrt((diff**2).sum(axis=1)).mean())


def sample_gt(ranges: PerturbationRanges, rng_seed: int, frame: Frame = (128, 128)) -> Homography:
    """按因子采样小基线 H_gt

    H = T(t) · T(c) · P · R · Sh · S · T(-c)，绕 patch 中心 c 依次作用缩放、剪切、旋转、透视，最后平移。
    各因子按 scale, shear, rotation, translation(x, y), perspective(x, y) 的固定顺序从各自区间均匀采样，
    因此结果只取决于 (ranges, seed, frame)。
    """
    rng = make_rng(rng_seed)
    s = rng.uniform(*ranges.scaling)
    k = rng.uniform(*ranges.shearing)
    theta = rng.uniform(*ranges.rotation)
    tx = rng.uniform(*ranges.translation)
    ty = rng.uniform(*ranges.translation)
    px = rng.uniform(*ranges.perspective)
    py = rng.uniform(*ranges.perspective)

    cx, cy = frame[0] / 2.0, frame[1] / 2.0
    to_center = np.array([[1.0, 0.0, -cx], [0.0, 1.0, -cy], [0.0, 0.0, 1.0]])
    from_center = np.array([[1.0, 0.0, cx], [0.0, 1.0, cy], [0.0, 0.0, 1.0]])
    scale = np.diag([s, s, 1.0])
    shear = np.array([[1.0, k, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    c, sn = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -sn, 0.0], [sn, c, 0.0], [0.0, 0.0, 1.0]])
    persp = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [px, py, 1.0]])
    trans = np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])

    m = trans @ from_center @ persp @ rot @ shear @ scale @ to_center
    return Homography(m=m)


def sample_corner_perturbation(max_offset: float, frame: Frame, rng_seed: int) -> Homography:
    """四角点独立扰动采样：每个位移分量在 [-max_offset, max_offset] 内均匀采样后做 DLT。

    Raises:
        ValueError: max_offset 为负或不小于 patch 短边的 1/4
    """
    if max_offset < 0 or max_offset >= min(frame) / 4.0:
        raise ValueError(f"max_offset 必须在 [0, {min(frame) / 4.0}) 内，实际为 {max_offset}")
    rng = make_rng(rng_seed)
    d = rng.uniform(-max_offset, max_offset, size=8)
    return offsets_to_homography(CornerOffsets(d=d, width=frame[0], height=frame[1]))
