"""合成语料与语料读写

合成场景：带纹理的平面经随机单应 H_ts 运动，外加 0~3 个独立运动的方块物体。
每对图像都保存真值（H_ts、物体位置、非平面支撑区域）和平面上的标注点，
测试集与语料使用同一目录布局：

    <dir>/NNNN/source.png, target.png, points.json, truth.json[, support_s.png, support_t.png]
"""

import json
import logging
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..config import CorpusConfig
from ..homography import compose, invert, sample_gt, transform_point, transform_points, translation
from ..imaging import load_image, load_mask, save_image, save_mask, warp_array
from ..schema import Category, CorrespondenceSet, Homography, ImageBuf, PlaneMask, SceneObject, ScenePair
from ..utils import child_seed, make_rng

logger = logging.getLogger(__name__)

# 物体边长范围（按 128 像素画幅给出，随画幅线性缩放）
OBJECT_SIZES = {Category.SF: (10, 16), Category.LF: (40, 56)}
DEFAULT_OBJECT_SIZE = (20, 32)

LOW_LIGHT_GAIN = 0.35
POINT_BORDER = 8
OBJECT_BLOCK = 4


def _texture(rng: np.random.Generator, shape: tuple[int, int], sigma: float, low: float, high: float) -> np.ndarray:
    tex = ndimage.gaussian_filter(rng.uniform(size=shape), sigma=sigma, mode="reflect")
    tex = (tex - tex.min()) / max(tex.max() - tex.min(), 1e-12)
    return low + (high - low) * tex


def _block_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    blocks = -(-size // OBJECT_BLOCK)
    tex = np.kron(rng.uniform(0.1, 0.9, size=(blocks, blocks)), np.ones((OBJECT_BLOCK, OBJECT_BLOCK)))
    return tex[:size, :size]


def _box(shape: tuple[int, int], xy: tuple[int, int], size: int) -> np.ndarray:
    out = np.zeros(shape, dtype=bool)
    x, y = xy
    out[y : y + size, x : x + size] = True
    return out


def _place_objects(
    rng: np.random.Generator, cfg: CorpusConfig, category: Category, h_ts: Homography
) -> list[tuple[SceneObject, np.ndarray]]:
    size = cfg.size
    count = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    low, high = OBJECT_SIZES.get(category, DEFAULT_OBJECT_SIZE)
    scale = size / 128.0
    h_st = invert(h_ts)
    placed = []
    for _ in range(count):
        k = max(4, int(round(rng.integers(low, high + 1) * scale)))
        texture = _block_texture(rng, k)
        for _attempt in range(20):
            sx = int(rng.integers(2, size - k - 1))
            sy = int(rng.integers(2, size - k - 1))
            radius = rng.uniform(*cfg.displacement)
            angle = rng.uniform(0.0, 2.0 * np.pi)
            d = (radius * np.cos(angle), radius * np.sin(angle))
            # 物体相对平面的独立运动：目标图中位置 = 平面对应位置 + d
            px, py = transform_point(h_st, (sx, sy))
            tx, ty = int(round(px + d[0])), int(round(py + d[1]))
            if 2 <= tx <= size - k - 2 and 2 <= ty <= size - k - 2:
                obj = SceneObject(size=k, source_xy=(sx, sy), target_xy=(tx, ty), displacement=d)
                placed.append((obj, texture))
                break
    return placed


def _plane_points(
    rng: np.random.Generator,
    count: int,
    size: int,
    h_ts: Homography,
    nonplane_s: np.ndarray,
    nonplane_t: np.ndarray,
) -> np.ndarray:
    blocked_s = ndimage.binary_dilation(nonplane_s, iterations=2)
    blocked_t = ndimage.binary_dilation(nonplane_t, iterations=2)
    candidates = rng.uniform(POINT_BORDER, size - 1 - POINT_BORDER, size=(400, 2))
    targets = transform_points(invert(h_ts), candidates)
    rows = []
    for p, q in zip(candidates, targets):
        if not (POINT_BORDER <= q[0] <= size - 1 - POINT_BORDER and POINT_BORDER <= q[1] <= size - 1 - POINT_BORDER):
            continue
        if blocked_s[int(round(p[1])), int(round(p[0]))] or blocked_t[int(round(q[1])), int(round(q[0]))]:
            continue
        rows.append([p[0], p[1], q[0], q[1]])
        if len(rows) == count:
            break
    return np.array(rows).reshape(-1, 4)


def synth_pair(cfg: CorpusConfig, seed: int, pair_id: str, category: Category | str) -> ScenePair:
    """生成一对带真值的合成图像。"""
    category = Category(category)
    rng = make_rng(seed)
    size = cfg.size
    margin = max(16, size // 4)

    sigma = cfg.texture_sigma * (2.5 if category == Category.LT else 1.0)
    low, high = (0.35, 0.65) if category == Category.LT else (0.1, 0.9)
    canvas = _texture(rng, (size + 2 * margin, size + 2 * margin), sigma, low, high)

    h_ts = sample_gt(cfg.motion, int(rng.integers(0, 2**62)), frame=(size, size))
    to_crop = translation(-margin, -margin)
    i_t, _ = warp_array(canvas, to_crop, (size, size))
    i_s, _ = warp_array(canvas, compose(h_ts, to_crop), (size, size))

    shape = (size, size)
    support_s = np.zeros(shape, dtype=bool)
    support_t = np.zeros(shape, dtype=bool)
    objects = []
    for obj, texture in _place_objects(rng, cfg, category, h_ts):
        k = obj.size
        sx, sy = obj.source_xy
        tx, ty = obj.target_xy
        i_s[sy : sy + k, sx : sx + k] = texture
        i_t[ty : ty + k, tx : tx + k] = texture
        support_s |= _box(shape, obj.source_xy, k)
        support_t |= _box(shape, obj.target_xy, k)
        objects.append(obj)

    if category == Category.LL:
        i_s = i_s * LOW_LIGHT_GAIN
        i_t = i_t * LOW_LIGHT_GAIN

    # 非平面区域：物体自身所在处，加上另一幅图中物体对应到本图的位置
    moved_t, _ = warp_array(support_t.astype(np.float64), h_ts)
    moved_s, _ = warp_array(support_s.astype(np.float64), invert(h_ts))
    nonplane_s = support_s | (moved_t > 0.5)
    nonplane_t = support_t | (moved_s > 0.5)

    rows = _plane_points(rng, cfg.points_per_pair, size, h_ts, nonplane_s, nonplane_t)
    points = CorrespondenceSet.from_rows(rows.tolist()) if len(rows) else None
    if points is None:
        logger.warning("pair %s: no plane points could be placed", pair_id)

    return ScenePair(
        pair_id=pair_id,
        i_s=ImageBuf(data=np.clip(i_s, 0.0, 1.0)),
        i_t=ImageBuf(data=np.clip(i_t, 0.0, 1.0)),
        category=category.value,
        h_ts=h_ts,
        points=points,
        objects=objects,
        nonplane_s=PlaneMask(weights=nonplane_s.astype(np.float64)),
        nonplane_t=PlaneMask(weights=nonplane_t.astype(np.float64)),
    )


def synth_corpus(cfg: CorpusConfig, seed: int | None = None, count: int | None = None, prefix: str = "") -> list[ScenePair]:
    """生成合成语料

    Args:
        cfg: 语料配置
        seed: 语料种子，默认 cfg.seed
        count: 图像对数量，默认 cfg.count
        prefix: pair_id 前缀

    Returns:
        按 pair_id 排序的图像对列表
    """
    seed = cfg.seed if seed is None else seed
    count = cfg.count if count is None else count
    pairs = []
    for i in range(count):
        category = cfg.categories[i % len(cfg.categories)]
        pairs.append(synth_pair(cfg, child_seed(seed, f"pair/{i}"), f"{prefix}{i:04d}", category))
    return pairs


def synth_test_set(cfg: CorpusConfig, seed: int | None = None, count: int | None = None) -> list[ScenePair]:
    """与训练语料不重叠的留出测试集。"""
    seed = cfg.seed if seed is None else seed
    count = cfg.test_count if count is None else count
    return synth_corpus(cfg, child_seed(seed, "test"), count, prefix="test-")


def save_corpus(pairs: list[ScenePair], out_dir: str | Path) -> Path:
    """按目录布局保存语料（图像保存为 8 位 PNG）。"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for pair in pairs:
        pair_dir = out_dir / pair.pair_id
        save_image(pair.i_s, pair_dir / "source.png")
        save_image(pair.i_t, pair_dir / "target.png")
        if pair.points is not None:
            points = {"points": pair.points.to_rows()}
            if pair.category:
                points["category"] = pair.category
            (pair_dir / "points.json").write_text(json.dumps(points, indent=2), encoding="utf-8")
        if pair.h_ts is not None:
            truth = {
                "h_ts": pair.h_ts.to_list(),
                "category": pair.category,
                "objects": [obj.model_dump(mode="json") for obj in pair.objects],
            }
            (pair_dir / "truth.json").write_text(json.dumps(truth, indent=2), encoding="utf-8")
        if pair.nonplane_s is not None:
            save_mask(pair.nonplane_s, pair_dir / "support_s.png")
        if pair.nonplane_t is not None:
            save_mask(pair.nonplane_t, pair_dir / "support_t.png")
    return out_dir


def _find_image(pair_dir: Path, stem: str) -> Path | None:
    for suffix in (".png", ".pgm", ".ppm"):
        path = pair_dir / f"{stem}{suffix}"
        if path.exists():
            return path
    return None


def load_pair(pair_dir: str | Path) -> ScenePair:
    """读取单个图像对目录。

    Raises:
        FileNotFoundError: 缺少 source/target 图像
    """
    pair_dir = Path(pair_dir)
    source = _find_image(pair_dir, "source")
    target = _find_image(pair_dir, "target")
    if source is None or target is None:
        raise FileNotFoundError(f"目录缺少 source/target 图像: {pair_dir}")

    category = None
    points = None
    points_path = pair_dir / "points.json"
    if points_path.exists():
        data = json.loads(points_path.read_text(encoding="utf-8"))
        rows = data if isinstance(data, list) else data.get("points", [])
        if isinstance(data, dict):
            category = data.get("category")
        if rows:
            points = CorrespondenceSet.from_rows(rows)

    h_ts = None
    objects = []
    truth_path = pair_dir / "truth.json"
    if truth_path.exists():
        truth = json.loads(truth_path.read_text(encoding="utf-8"))
        if truth.get("h_ts") is not None:
            h_ts = Homography(m=truth["h_ts"])
        category = category or truth.get("category")
        objects = [SceneObject.model_validate(obj) for obj in truth.get("objects", [])]

    support_s = pair_dir / "support_s.png"
    support_t = pair_dir / "support_t.png"
    return ScenePair(
        pair_id=pair_dir.name,
        i_s=load_image(source),
        i_t=load_image(target),
        category=category,
        h_ts=h_ts,
        points=points,
        objects=objects,
        nonplane_s=load_mask(support_s) if support_s.exists() else None,
        nonplane_t=load_mask(support_t) if support_t.exists() else None,
    )


def load_corpus(corpus_dir: str | Path) -> list[ScenePair]:
    """读取语料目录下所有图像对（按目录名排序）。

    Raises:
        FileNotFoundError: 目录不存在
    """
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise FileNotFoundError(f"语料目录不存在: {corpus_dir}")
    pair_dirs = sorted(p for p in corpus_dir.iterdir() if p.is_dir() and _find_image(p, "source") is not None)
    return [load_pair(p) for p in pair_dirs]
