"""迭代流程：G 阶段生成数据集，T 阶段训练估计器，交替进行

每轮的顺序固定为 生成 -> CCM -> QAM -> 训练 -> 评估。
生成与打分按图像对并行，每个图像对的种子为 hash(master_seed, pair_id, iteration)，
结果按 pair_id 合并，因此线程数不影响输出。训练是串行屏障。
"""

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..config import GenConfig
from ..estimator import Estimator, init_regressor, save_regressor, total_loss, train_regressor
from ..eval import mean_pme
from ..exceptions import EmptyDatasetError, InsufficientDataError, MiniHomoError
from ..generator import assemble_sample, disturbance_masks, make_disturbance, sample_disturbance
from ..homography import compose, sample_corner_perturbation, sample_gt, translation
from ..imaging import center_crop
from ..logger import RunLogger
from ..plane_seg import estimate_masks
from ..refine import (
    ccl_loss,
    ccm_reconstruct,
    negative_example,
    positive_example,
    qam_score,
    qam_train,
    save_quality_model,
)
from ..schema import (
    CorrespondenceSet,
    Homography,
    IterationReport,
    PlaneMask,
    QualityModel,
    RegressorHyperParams,
    RegressorModel,
    ScenePair,
    Strategy,
    TrainingSample,
)
from ..utils import child_seed, derive_seed
from .corpus import load_corpus, synth_corpus, synth_test_set
from .shard import save_shard

logger = logging.getLogger(__name__)

REPORT_COLUMNS = [
    "iteration",
    "generated",
    "accepted",
    "rejected",
    "quarantined",
    "empty_plane_flagged",
    "ccl_before",
    "ccl_after",
    "qam_accuracy",
    "qam_loss",
    "final_train_loss",
    "total_loss",
    "eval_pme",
    "regressor_pme",
    "identity_pme",
]


class EstimatorState(BaseModel):
    """跨迭代传递的估计器状态。"""

    iteration: int = 0
    model: RegressorModel | None = None
    quality_model: QualityModel | None = None


class GeneratedPair(BaseModel):
    """单个图像对在 G 阶段的全部产物。"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    sample: TrainingSample
    m_s: PlaneMask
    m_t: PlaneMask
    candidate: tuple  # (Î'_t, R, 有效区域)，供 QAM 打分
    positive: tuple | None = None
    negative: tuple | None = None
    ccl_before: float | None = None
    ccl_after: float | None = None


class IterationResult(BaseModel):
    """run_iteration 的返回值。"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    samples: list[TrainingSample]
    masks: dict[str, tuple[PlaneMask, PlaneMask]] = Field(default_factory=dict)
    ccl_after: dict[str, float | None] = Field(default_factory=dict)
    report: IterationReport
    state: EstimatorState


class RunResult(BaseModel):
    """run 的返回值：最终模型与每轮报告。"""

    model: RegressorModel
    reports: list[IterationReport]
    out_dir: str | None = None


def crop_pair(pair: ScenePair, patch: tuple[int, int]) -> ScenePair:
    """中心裁剪图像对到 patch (宽, 高)

    标注点、真值 H_ts 与非平面掩码随之平移到裁剪后的坐标系。

    Raises:
        ValueError: patch 大于图像
    """
    width, height = patch
    if (pair.i_s.width, pair.i_s.height) == (width, height) and pair.i_t.shape == pair.i_s.shape:
        return pair
    left = (pair.i_s.width - width) // 2
    top = (pair.i_s.height - height) // 2
    update = {"i_s": center_crop(pair.i_s, patch), "i_t": center_crop(pair.i_t, patch)}
    if pair.points is not None:
        shift = np.array([left, top], dtype=np.float64)
        update["points"] = CorrespondenceSet(src=pair.points.src - shift, dst=pair.points.dst - shift)
    if pair.h_ts is not None:
        update["h_ts"] = compose(translation(-left, -top), compose(pair.h_ts, translation(left, top)))
    for key in ("nonplane_s", "nonplane_t"):
        mask = getattr(pair, key)
        if mask is not None:
            update[key] = PlaneMask(weights=mask.weights[top : top + height, left : left + width])
    return pair.model_copy(update=update)


def _sample_h_gt(cfg: GenConfig, seed: int, frame: tuple[int, int]) -> Homography:
    if cfg.sampling.kind == "corners":
        return sample_corner_perturbation(cfg.sampling.corner_max_offset, frame, seed)
    return sample_gt(cfg.sampling.gt, seed, frame)


def generate_pair(cfg: GenConfig, pair: ScenePair, iteration: int, estimator: Estimator) -> GeneratedPair:
    """G 阶段处理单个图像对：估计 H_ts、掩码、采样 H_gt、生成、CCM，并准备 QAM 所需的正负例。"""
    pair = crop_pair(pair, cfg.pipeline.patch_size)
    i_s, i_t = pair.i_s, pair.i_t
    frame = (i_s.width, i_s.height)
    seed = derive_seed(cfg.pipeline.master_seed, pair.pair_id, iteration)
    seg = cfg.seg
    gen = cfg.generation
    refine = cfg.refine

    h_ts = estimator.estimate(i_s, i_t)
    m_s, m_t = estimate_masks(i_s, i_t, h_ts, seg.rho, seg.box_radius, seg.morph_radius, seg.feather)
    h_gt = _sample_h_gt(cfg, child_seed(seed, "h_gt"), frame)
    sample = assemble_sample(
        i_s, i_t, m_s, m_t, h_gt, h_ts, pair.pair_id, iteration, seed, gen.strategy, gen.hole_floor, gen.empty_plane_floor
    )

    ccl_before = ccl_after = None
    if refine.use_ccm and gen.strategy == Strategy.REALISTIC:
        ccl_before = ccl_loss(sample.i_t_prime, i_t, h_gt, h_ts, refine.ccl_erosion)
        refined = ccm_reconstruct(
            sample.i_t_prime, i_t, h_gt, h_ts, refine.artifact_threshold, refine.ccm_feather, refine.ccl_erosion
        )
        ccl_after = ccl_loss(refined, i_t, h_gt, h_ts, refine.ccl_erosion)
        sample = sample.model_copy(update={"i_t_prime": refined})

    positive = negative = None
    if refine.use_qam:
        positive = positive_example(i_t, h_gt, h_ts)
        disturbance_seed = child_seed(seed, "disturbance")
        delta = sample_disturbance(
            cfg.sampling.disturbance, disturbance_seed, frame, cfg.sampling.disturbance_min_shift
        )
        r_s, r_t = disturbance_masks(i_s, i_t, m_s, m_t, compose(delta, h_ts), seg)
        i_r = make_disturbance(
            i_s, i_t, r_s, r_t, h_gt, h_ts, disturbance_seed, hole_floor=gen.hole_floor, delta=delta
        )
        negative = negative_example(i_r, i_t, h_gt, h_ts)

    return GeneratedPair(
        sample=sample,
        m_s=m_s,
        m_t=m_t,
        candidate=negative_example(sample.i_t_prime, i_t, h_gt, h_ts),
        positive=positive,
        negative=negative,
        ccl_before=ccl_before,
        ccl_after=ccl_after,
    )


def _guarded(cfg: GenConfig, pair: ScenePair, iteration: int, estimator: Estimator):
    try:
        return generate_pair(cfg, pair, iteration, estimator)
    except (MiniHomoError, np.linalg.LinAlgError) as e:
        return e


def _mean(values: list[float | None]) -> float | None:
    finite = [v for v in values if v is not None and np.isfinite(v)]
    return float(np.mean(finite)) if finite else None


def _set_quality(sample: TrainingSample, score: float | None, accepted: bool) -> TrainingSample:
    provenance = sample.provenance.model_copy(update={"quality_score": score, "accepted": accepted})
    return sample.model_copy(update={"provenance": provenance})


def _filter_with_qam(
    cfg: GenConfig, generated: list[GeneratedPair], iteration: int, report: IterationReport
) -> tuple[list[TrainingSample], QualityModel | None]:
    """训练 QAM 并给每个样本打分；样本不足时全部接受。"""
    refine = cfg.refine
    if not refine.use_qam:
        return [_set_quality(g.sample, None, True) for g in generated], None

    try:
        quality_model = qam_train(
            [g.positive for g in generated],
            [g.negative for g in generated],
            epochs=refine.qam_epochs,
            lr=refine.qam_lr,
            seed=child_seed(cfg.pipeline.master_seed, f"qam/{iteration}"),
            l2=refine.qam_l2,
            tau=refine.tau,
            threshold=refine.artifact_threshold,
            min_per_class=refine.qam_min_per_class,
        )
    except InsufficientDataError as e:
        logger.warning("QAM not trained, accepting every sample: %s", e)
        return [_set_quality(g.sample, None, True) for g in generated], None

    report.qam_accuracy = quality_model.train_accuracy
    report.qam_loss = quality_model.final_loss
    scored = []
    for g in generated:
        img, reference, valid = g.candidate
        score = qam_score(quality_model, img, reference, refine.tau, refine.artifact_threshold, valid)
        scored.append(_set_quality(g.sample, score.value, score.accepted))
    return scored, quality_model


def generate_phase(
    cfg: GenConfig,
    corpus: list[ScenePair],
    estimator_state: EstimatorState | None = None,
    run_logger: RunLogger | None = None,
) -> IterationResult:
    """只运行 G 阶段：生成、CCM 与 QAM 过滤，不训练

    Returns:
        IterationResult；state.model 保持输入状态的模型，state.iteration 不变

    Raises:
        EmptyDatasetError: 语料为空，或所有图像对都被隔离
    """
    if not corpus:
        raise EmptyDatasetError("语料为空，无法生成数据集")
    state = estimator_state or EstimatorState()
    iteration = state.iteration
    estimator = Estimator.for_iteration(iteration, state.model, cfg.lk)
    logger.info("iteration %d: generating from %d pairs with %s", iteration, len(corpus), estimator.name)

    pairs = sorted(corpus, key=lambda p: p.pair_id)
    with ThreadPoolExecutor(max_workers=cfg.pipeline.threads) as pool:
        outcomes = list(pool.map(lambda p: _guarded(cfg, p, iteration, estimator), pairs))

    report = IterationReport(iteration=iteration)
    generated: list[GeneratedPair] = []
    for pair, outcome in zip(pairs, outcomes):
        if isinstance(outcome, BaseException):
            logger.warning("pair %s quarantined: %s", pair.pair_id, outcome)
            report.quarantined.append(pair.pair_id)
            if run_logger:
                run_logger.log_sample_failure(pair.pair_id, iteration, outcome)
        else:
            generated.append(outcome)
    report.generated = len(generated)
    if not generated:
        raise EmptyDatasetError(f"第 {iteration} 轮所有图像对都被隔离")

    report.empty_plane_flagged = sum(1 for g in generated if g.sample.provenance.flags)
    report.ccl_before = _mean([g.ccl_before for g in generated])
    report.ccl_after = _mean([g.ccl_after for g in generated])

    samples, quality_model = _filter_with_qam(cfg, generated, iteration, report)
    accepted = [s for s in samples if s.provenance.accepted]
    report.accepted = len(accepted)
    report.rejected = len(samples) - len(accepted)
    masks = {g.sample.provenance.pair_id: (g.m_s, g.m_t) for g in generated}
    ccl_after = {g.sample.provenance.pair_id: g.ccl_after for g in generated}
    new_state = state.model_copy(update={"quality_model": quality_model})
    return IterationResult(samples=samples, masks=masks, ccl_after=ccl_after, report=report, state=new_state)


def run_iteration(
    cfg: GenConfig,
    corpus: list[ScenePair],
    estimator_state: EstimatorState | None = None,
    test_set: list[ScenePair] | None = None,
    run_logger: RunLogger | None = None,
) -> IterationResult:
    """一轮 G 阶段 + T 阶段

    Args:
        cfg: 主配置
        corpus: 无标注图像对
        estimator_state: 上一轮的状态，缺省为第 0 轮
        test_set: 可选的留出测试集，给出时在训练后评估 PME
        run_logger: 可选的运行日志

    Returns:
        IterationResult，含全部样本（accepted 字段标明 QAM 结果）、报告与新状态

    Raises:
        EmptyDatasetError: 语料为空，或没有样本被接受
        NonFiniteLossError: 训练发散
    """
    state = estimator_state or EstimatorState()
    iteration = state.iteration
    generated = generate_phase(cfg, corpus, state, run_logger)
    report = generated.report
    samples = generated.samples
    accepted = [s for s in samples if s.provenance.accepted]
    if not accepted:
        raise EmptyDatasetError(f"第 {iteration} 轮没有样本通过 QAM")

    rc = cfg.regressor
    model = state.model or init_regressor(rc, frame=tuple(cfg.pipeline.patch_size))
    hp = RegressorHyperParams(
        lr=rc.lr,
        epochs=rc.epochs,
        batch_size=rc.batch_size,
        weight_decay=rc.weight_decay,
        seed=child_seed(rc.seed, f"train/{iteration}"),
    )
    model, losses = train_regressor(model, accepted, hp)
    report.train_losses = losses
    l_ccl = _mean([generated.ccl_after.get(s.provenance.pair_id) for s in accepted]) or 0.0
    report.total_loss = total_loss(losses[-1], l_ccl, report.qam_loss or 0.0, cfg.loss.lambda1, cfg.loss.lambda2)

    if test_set:
        labeled = [crop_pair(p, cfg.pipeline.patch_size) for p in test_set if p.points is not None]
        if labeled:
            threads = cfg.pipeline.threads
            report.eval_pme = mean_pme(Estimator.for_iteration(iteration + 1, model, cfg.lk), labeled, threads)
            report.regressor_pme = mean_pme(Estimator("regressor", model=model), labeled, threads)
            report.identity_pme = mean_pme(Estimator("identity"), labeled, threads)

    logger.info(
        "iteration %d: accepted %d/%d, quarantined %d, L_sup %.4f -> %.4f, eval PME %s",
        iteration,
        report.accepted,
        report.generated,
        len(report.quarantined),
        losses[0],
        losses[-1],
        report.eval_pme,
    )
    if run_logger:
        run_logger.log_iteration(report)

    new_state = EstimatorState(iteration=iteration + 1, model=model, quality_model=generated.state.quality_model)
    return generated.model_copy(update={"report": report, "state": new_state})


def _report_row(report: IterationReport) -> list:
    values = report.model_dump()
    row = []
    for column in REPORT_COLUMNS:
        if column == "quarantined":
            row.append(len(report.quarantined))
        elif column == "final_train_loss":
            row.append(report.train_losses[-1] if report.train_losses else None)
        else:
            row.append(values[column])
    return row


def write_reports_csv(reports: list[IterationReport], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_COLUMNS)
        for report in reports:
            writer.writerow(_report_row(report))
    return path


def write_iteration(result: IterationResult, out_dir: str | Path, save_masks: bool = False) -> Path:
    """写出 iter_NN/{shard/, report.json[, qam.json]}。"""
    iter_dir = Path(out_dir) / f"iter_{result.report.iteration:02d}"
    save_shard(result.samples, iter_dir / "shard", result.masks if save_masks else None)
    (iter_dir / "report.json").write_text(result.report.model_dump_json(indent=2), encoding="utf-8")
    if result.state.quality_model is not None:
        save_quality_model(result.state.quality_model, iter_dir / "qam.json")
    return iter_dir


def load_inputs(cfg: GenConfig) -> tuple[list[ScenePair], list[ScenePair]]:
    """按配置读取语料与测试集，路径为空时即时合成。"""
    pipeline = cfg.pipeline
    corpus = load_corpus(pipeline.corpus_dir) if pipeline.corpus_dir else synth_corpus(cfg.corpus)
    test_set = load_corpus(pipeline.test_dir) if pipeline.test_dir else synth_test_set(cfg.corpus)
    return corpus, test_set


def run(
    cfg: GenConfig,
    corpus: list[ScenePair] | None = None,
    test_set: list[ScenePair] | None = None,
    out_dir: str | Path | None = None,
    run_logger: RunLogger | None = None,
) -> RunResult:
    """完整的迭代流程

    Args:
        cfg: 主配置
        corpus: 无标注图像对，缺省时按配置读取或合成
        test_set: 留出测试集，缺省时按配置读取或合成
        out_dir: 输出目录，缺省为 cfg.pipeline.out_dir；显式传入空字符串则不落盘
        run_logger: 可选的运行日志

    Returns:
        RunResult
    """
    if corpus is None or test_set is None:
        loaded_corpus, loaded_test = load_inputs(cfg)
        corpus = loaded_corpus if corpus is None else corpus
        test_set = loaded_test if test_set is None else test_set
    out = Path(cfg.pipeline.out_dir if out_dir is None else out_dir) if out_dir != "" else None

    if run_logger:
        run_logger.log_config(cfg.to_dict())

    state = EstimatorState()
    reports = []
    for _ in range(cfg.pipeline.iterations):
        result = run_iteration(cfg, corpus, state, test_set, run_logger)
        reports.append(result.report)
        state = result.state
        if out is not None:
            write_iteration(result, out, cfg.pipeline.save_masks)

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        cfg.to_yaml(out / "config.yaml")
        save_regressor(state.model, out / "model.json")
        write_reports_csv(reports, out / "reports.csv")

    if run_logger:
        run_logger.log_summary(
            {
                "iterations": len(reports),
                "accepted": [r.accepted for r in reports],
                "eval_pme": [r.eval_pme for r in reports],
                "out_dir": str(out) if out else None,
            }
        )
    return RunResult(model=state.model, reports=reports, out_dir=str(out) if out else None)


def load_report(path: str | Path) -> IterationReport:
    return IterationReport.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))
