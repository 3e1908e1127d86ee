"""评估指标

点匹配误差 (PME)、内点比例鲁棒性曲线，以及与“不扭曲”单位阵基线的比较。
PME 先在每个图像对内对点取平均，再对图像对取平均。
"""

import csv
import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import EvalConfig
from .exceptions import DataError, EmptyDatasetError, HomographyError, PointAtInfinityError
from .homography import identity, transform_points
from .schema import (
    CategoryPME,
    CorrespondenceSet,
    EvalResult,
    Homography,
    RobustnessCurve,
    ScenePair,
)

logger = logging.getLogger(__name__)

AVG_ROW = "AVG"
UNCATEGORIZED = "ALL"

# 与 transform_points 使用相同的无穷远判据
W_EPS = 1e-12


def pme_detail(h: Homography, corr: CorrespondenceSet) -> tuple[float, int]:
    """PME 及被排除的无穷远点数

    Returns:
        (PME, 排除点数)

    Raises:
        PointAtInfinityError: 所有点都映射到无穷远
    """
    homog = np.hstack([corr.src, np.ones((len(corr), 1))]) @ h.m.T
    finite = np.abs(homog[:, 2]) > W_EPS
    excluded = int((~finite).sum())
    if excluded == len(corr):
        raise PointAtInfinityError(f"全部 {excluded} 个点都映射到无穷远")
    if excluded:
        logger.warning("excluded %d point(s) mapped to infinity from PME", excluded)
    mapped = transform_points(h, corr.src[finite])
    dist = np.sqrt(((mapped - corr.dst[finite]) ** 2).sum(axis=1))
    return float(dist.mean()), excluded


def pme(h: Homography, corr: CorrespondenceSet) -> float:
    """点匹配误差：h 作用于源图点后与目标图点的平均欧氏距离（像素）。"""
    value, _ = pme_detail(h, corr)
    return value


def robustness_curve(errors: Sequence[float], thresholds: Sequence[float] | np.ndarray | None = None) -> RobustnessCurve:
    """各阈值下 PME ≤ 阈值的图像对比例

    非有限的误差计入分母但永远不算内点。

    Raises:
        EmptyDatasetError: 误差列表为空
    """
    if len(errors) == 0:
        raise EmptyDatasetError("没有可统计的误差")
    thresholds = EvalConfig().thresholds() if thresholds is None else np.sort(np.asarray(thresholds, dtype=np.float64))
    errs = np.asarray(errors, dtype=np.float64)
    errs = np.where(np.isfinite(errs), errs, np.inf)
    fraction = (errs[None, :] <= thresholds[:, None]).mean(axis=1)
    return RobustnessCurve(thresholds=thresholds, inlier_fraction=fraction)


def _pair_error(estimator, pair: ScenePair) -> tuple[float, int, bool]:
    """单个图像对的 PME；估计失败时退回单位阵并标记。"""
    failed = False
    try:
        h_st = estimator.estimate_st(pair.i_s, pair.i_t)
    except HomographyError as e:
        logger.warning("estimation failed on pair %s, using identity: %s", pair.pair_id, e)
        h_st = identity()
        failed = True
    try:
        value, excluded = pme_detail(h_st, pair.points)
    except PointAtInfinityError as e:
        logger.warning("pair %s: %s", pair.pair_id, e)
        return float("inf"), len(pair.points), True
    return value, excluded, failed


def pair_errors(estimator, pairs: list[ScenePair], threads: int = 1) -> tuple[dict[str, float], int, list[str]]:
    """逐对 PME

    Returns:
        (pair_id -> PME, 排除点总数, 估计失败的 pair_id 列表)

    Raises:
        EmptyDatasetError: 没有带标注点的图像对
    """
    labeled = sorted((p for p in pairs if p.points is not None), key=lambda p: p.pair_id)
    if not labeled:
        raise EmptyDatasetError("测试集中没有带标注点的图像对")
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(lambda p: _pair_error(estimator, p), labeled))
    errors = {p.pair_id: r[0] for p, r in zip(labeled, results)}
    excluded = sum(r[1] for r in results)
    failed = [p.pair_id for p, r in zip(labeled, results) if r[2]]
    return errors, excluded, failed


def mean_pme(estimator, pairs: list[ScenePair], threads: int = 1) -> float:
    errors, _, _ = pair_errors(estimator, pairs, threads)
    return float(np.mean(list(errors.values())))


def identity_pme(corr: CorrespondenceSet) -> float:
    """“不扭曲”基线的 PME，即原始点位移的平均长度。"""
    return float(np.sqrt(((corr.dst - corr.src) ** 2).sum(axis=1)).mean())


def _category_rows(
    pairs: list[ScenePair], errors: dict[str, float], baseline: dict[str, float] | None
) -> list[CategoryPME]:
    groups: dict[str, list[str]] = {}
    for pair in pairs:
        if pair.pair_id in errors:
            groups.setdefault(pair.category or UNCATEGORIZED, []).append(pair.pair_id)

    def row(name: str, ids: list[str]) -> CategoryPME:
        value = float(np.mean([errors[i] for i in ids]))
        base = float(np.mean([baseline[i] for i in ids])) if baseline else None
        change = None
        if base is not None and base > 0 and np.isfinite(value):
            change = (value - base) / base * 100.0
        return CategoryPME(category=name, count=len(ids), pme=value, identity_pme=base, change_pct=change)

    rows = [row(name, groups[name]) for name in sorted(groups)]
    rows.append(row(AVG_ROW, sorted(errors)))
    return rows


def evaluate_model(
    estimator,
    test_set: list[ScenePair],
    cfg: EvalConfig | None = None,
    threads: int = 1,
    with_baseline: bool = True,
) -> EvalResult:
    """在带标注点的测试集上评估估计器

    Args:
        estimator: 提供 estimate_st(i_s, i_t) 的估计器
        test_set: 测试图像对，category 存在时按类别汇总
        cfg: 评估配置（阈值网格）
        threads: 并行线程数
        with_baseline: 是否同时计算单位阵基线

    Returns:
        EvalResult，类别行按名称排序，最后一行为 AVG

    Raises:
        EmptyDatasetError: 没有带标注点的图像对
    """
    cfg = cfg or EvalConfig()
    errors, excluded, failed = pair_errors(estimator, test_set, threads)
    baseline = None
    identity_curve = None
    if with_baseline:
        baseline = {p.pair_id: identity_pme(p.points) for p in test_set if p.pair_id in errors}
        identity_curve = robustness_curve([baseline[i] for i in sorted(baseline)], cfg.thresholds())

    return EvalResult(
        estimator=getattr(estimator, "name", type(estimator).__name__),
        rows=_category_rows(test_set, errors, baseline),
        per_pair=errors,
        curve=robustness_curve([errors[i] for i in sorted(errors)], cfg.thresholds()),
        identity_curve=identity_curve,
        excluded_points=excluded,
        failed_pairs=failed,
    )


def write_eval_csv(result: EvalResult, path: str | Path) -> Path:
    """类别表写为 CSV。"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["category", "count", "pme", "identity_pme", "change_pct"])
        for row in result.rows:
            writer.writerow([row.category, row.count, row.pme, row.identity_pme, row.change_pct])
    return path


def write_curve_csv(result: EvalResult, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        header = ["threshold", result.estimator]
        if result.identity_curve is not None:
            header.append("identity")
        writer.writerow(header)
        for i, t in enumerate(result.curve.thresholds):
            line = [float(t), float(result.curve.inlier_fraction[i])]
            if result.identity_curve is not None:
                line.append(float(result.identity_curve.inlier_fraction[i]))
            writer.writerow(line)
    return path


def plot_robustness_curves(curves: dict[str, RobustnessCurve], path: str | Path) -> Path:
    """把若干条鲁棒性曲线画成 SVG。

    Raises:
        DataError: 没有曲线
    """
    if not curves:
        raise DataError("没有可绘制的曲线")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context({"svg.hashsalt": "mini-homo"}):
        fig, ax = plt.subplots(figsize=(5, 4))
        for name, curve in curves.items():
            ax.plot(curve.thresholds, curve.inlier_fraction * 100.0, label=name)
        ax.set_xlabel("PME threshold (px)")
        ax.set_ylabel("inliers (%)")
        ax.set_ylim(0, 100)
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def write_eval_outputs(result: EvalResult, out_dir: str | Path) -> dict[str, Path]:
    """写出 pme.csv、curve.csv、curve.svg 与 eval.json。"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curves = {result.estimator: result.curve}
    if result.identity_curve is not None:
        curves["identity"] = result.identity_curve
    json_path = out_dir / "eval.json"
    json_path.write_text(result.model_dump_json(indent=2), encoding="utf-8")
    return {
        "table": write_eval_csv(result, out_dir / "pme.csv"),
        "curve_csv": write_curve_csv(result, out_dir / "curve.csv"),
        "plot": plot_robustness_curves(curves, out_dir / "curve.svg"),
        "json": json_path,
    }
