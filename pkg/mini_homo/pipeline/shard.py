"""数据集分片的保存与读取

布局：shard/NNNN/{source.png, target.png, meta.json[, mask_s.png, mask_t.png]}，
NNNN 为样本在分片内的序号（按 pair_id 排序）。
"""

import json
from pathlib import Path

from ..homography import homography_to_offsets
from ..imaging import load_image, load_mask, save_image, save_mask
from ..schema import Homography, PlaneMask, Provenance, TrainingSample

META_FILE = "meta.json"


def sample_meta(sample: TrainingSample) -> dict:
    """meta.json 的内容。"""
    frame = (sample.i_s.width, sample.i_s.height)
    offsets = homography_to_offsets(sample.h_gt, frame)
    prov = sample.provenance
    return {
        "h_gt": sample.h_gt.to_list(),
        "h_ts_used": prov.h_ts.to_list(),
        "corner_offsets_gt": {"d": [float(v) for v in offsets.d], "frame": list(frame)},
        "quality_score": prov.quality_score,
        "accepted": prov.accepted,
        "seed": prov.seed,
        "iteration": prov.iteration,
        "provenance": prov.model_dump(mode="json"),
    }


def save_shard(
    samples: list[TrainingSample],
    shard_dir: str | Path,
    masks: dict[str, tuple[PlaneMask, PlaneMask]] | None = None,
) -> Path:
    """保存一个分片

    Args:
        samples: 训练样本（含被 QAM 拒绝的，accepted 字段区分）
        shard_dir: 分片目录
        masks: 可选的 pair_id -> (M_s, M_t)，给出时一并保存

    Returns:
        分片目录
    """
    shard_dir = Path(shard_dir)
    shard_dir.mkdir(parents=True, exist_ok=True)
    ordered = sorted(samples, key=lambda s: s.provenance.pair_id)
    for index, sample in enumerate(ordered):
        sample_dir = shard_dir / f"{index:04d}"
        save_image(sample.i_s, sample_dir / "source.png")
        save_image(sample.i_t_prime, sample_dir / "target.png")
        (sample_dir / META_FILE).write_text(json.dumps(sample_meta(sample), indent=2), encoding="utf-8")
        if masks and sample.provenance.pair_id in masks:
            m_s, m_t = masks[sample.provenance.pair_id]
            save_mask(m_s, sample_dir / "mask_s.png")
            save_mask(m_t, sample_dir / "mask_t.png")
    return shard_dir


def load_shard(shard_dir: str | Path, accepted_only: bool = False) -> list[TrainingSample]:
    """读取分片（按目录序号排序）

    Raises:
        FileNotFoundError: 分片目录不存在
    """
    shard_dir = Path(shard_dir)
    if not shard_dir.is_dir():
        raise FileNotFoundError(f"分片目录不存在: {shard_dir}")

    samples = [load_sample(p) for p in sorted(p for p in shard_dir.iterdir() if (p / META_FILE).exists())]
    if accepted_only:
        samples = [s for s in samples if s.provenance.accepted is not False]
    return samples


def load_sample(sample_dir: str | Path) -> TrainingSample:
    """读取单个样本目录

    Raises:
        FileNotFoundError: 缺少 meta.json
    """
    sample_dir = Path(sample_dir)
    meta_path = sample_dir / META_FILE
    if not meta_path.exists():
        raise FileNotFoundError(f"样本目录缺少 {META_FILE}: {sample_dir}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    return TrainingSample(
        i_s=load_image(sample_dir / "source.png"),
        i_t_prime=load_image(sample_dir / "target.png"),
        h_gt=Homography(m=meta["h_gt"]),
        provenance=Provenance.model_validate(meta["provenance"]),
    )


def load_shard_masks(sample_dir: str | Path) -> tuple[PlaneMask, PlaneMask] | None:
    """读取单个样本目录中保存的掩码，没有保存时返回 None。"""
    sample_dir = Path(sample_dir)
    if not (sample_dir / "mask_s.png").exists():
        return None
    return load_mask(sample_dir / "mask_s.png"), load_mask(sample_dir / "mask_t.png")
