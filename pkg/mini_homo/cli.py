"""
mini-homo - 迭代式真实单应数据集生成

用法:
    mini-homo <command> [--config FILE] [--json] [--quiet] [--threads N] ...

示例:
    mini-homo synth --out ./corpus                    # 生成合成语料
    mini-homo synth --out ./testset --test            # 生成带标注点的留出测试集
    mini-homo generate --corpus ./corpus --out ./gen  # 只运行 G 阶段
    mini-homo run --out ./runs/exp1                   # 完整迭代流程
    mini-homo eval ./runs/exp1/model.json ./testset   # 计算 PME 与鲁棒性曲线
    mini-homo inspect ./gen/iter_00/shard/0000        # 查看单个样本的诊断量

所有数值参数都在配置文件里，命令行参数只选择路径和模式。
"""

import argparse
import json
import logging
import math
import sys
from collections import Counter
from pathlib import Path
from typing import Any, Callable

import numpy as np

from mini_homo import __version__
from mini_homo.config import GenConfig
from mini_homo.estimator import Estimator, load_regressor
from mini_homo.eval import evaluate_model, write_eval_outputs
from mini_homo.exceptions import DataError, EmptyBandError
from mini_homo.generator import fusion_band, label_residual
from mini_homo.imaging import seam_energy, warp_mask
from mini_homo.logger import RunLogger
from mini_homo.pipeline import (
    EstimatorState,
    crop_pair,
    generate_phase,
    load_corpus,
    load_pair,
    load_sample,
    load_shard_masks,
    run,
    save_corpus,
    synth_corpus,
    synth_test_set,
    write_iteration,
)
from mini_homo.refine import load_quality_model, negative_example, qam_score
from mini_homo.schema import PlaneMask
from mini_homo.utils import format_table

logger = logging.getLogger("mini_homo.cli")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USER = 2


# ANSI 颜色码
class Colors:
    """终端颜色定义"""

    RESET = "\033[0m"
    BOLD = "\033[1m"
    DIM = "\033[2m"

    RED = "\033[31m"
    GREEN = "\033[32m"
    YELLOW = "\033[33m"

    BRIGHT_CYAN = "\033[96m"
    BRIGHT_WHITE = "\033[97m"


def _finite(value: float | None) -> float | None:
    """JSON 输出中把 nan/inf 写成 null。"""
    if value is None or not math.isfinite(value):
        return None
    return float(value)


def print_header(title: str):
    print(f"\n{Colors.BOLD}{Colors.BRIGHT_CYAN}{title}{Colors.RESET}")
    print(f"{Colors.DIM}{'─' * 60}{Colors.RESET}")


def print_kv(label: str, value: Any):
    print(f"  {Colors.BRIGHT_WHITE}{label}:{Colors.RESET} {value}")


def emit(args: argparse.Namespace, payload: dict, human: Callable[[], None]):
    """--json 时输出一个 JSON 文档，否则输出给人看的摘要。"""
    if args.json:
        print(json.dumps(payload, indent=2, ensure_ascii=False))
    else:
        human()


def setup_logging(args: argparse.Namespace):
    """根 logger 输出到 stdout；--json 时改到 stderr，保证 stdout 只有 JSON。"""
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        stream=sys.stderr if args.json else sys.stdout,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def load_config(args: argparse.Namespace) -> GenConfig:
    """--config 优先，否则按默认搜索路径加载；--threads 覆盖线程数。"""
    cfg = GenConfig.from_yaml(args.config) if args.config else GenConfig.load()
    if args.threads is not None:
        cfg.pipeline.threads = args.threads
    return cfg


def cmd_synth(args: argparse.Namespace, cfg: GenConfig) -> int:
    """生成合成语料（--test 时生成带标注点的测试集）"""
    corpus_cfg = cfg.corpus if args.seed is None else cfg.corpus.model_copy(update={"seed": args.seed})
    pairs = synth_test_set(corpus_cfg) if args.test else synth_corpus(corpus_cfg)
    out = save_corpus(pairs, args.out)
    categories = dict(sorted(Counter(p.category for p in pairs).items()))
    payload = {
        "command": "synth",
        "out": str(out),
        "pairs": len(pairs),
        "test": args.test,
        "seed": corpus_cfg.seed,
        "categories": categories,
    }

    def human():
        print_header("合成语料")
        print_kv("输出目录", out)
        print_kv("图像对", len(pairs))
        print_kv("种子", corpus_cfg.seed)
        print_kv("类别", ", ".join(f"{k}={v}" for k, v in categories.items()))

    emit(args, payload, human)
    return EXIT_OK


def cmd_generate(args: argparse.Namespace, cfg: GenConfig) -> int:
    """只运行 G 阶段，写出 iter_NN/{shard/, report.json[, qam.json]}

    给出 --model 时用回归器 + LK 估计 H_ts，并按第 1 轮记录样本。
    """
    if args.no_ccm:
        cfg.refine.use_ccm = False
    if args.no_qam:
        cfg.refine.use_qam = False
    corpus = load_corpus(args.corpus)
    model = load_regressor(args.model) if args.model else None
    state = EstimatorState(iteration=1 if model else 0, model=model)

    result = generate_phase(cfg, corpus, state)
    iter_dir = write_iteration(result, args.out, cfg.pipeline.save_masks)
    report = result.report
    payload = {"command": "generate", "out": str(iter_dir), "report": report.model_dump(mode="json")}

    def human():
        print_header("G 阶段")
        print_kv("输出目录", iter_dir)
        print_kv("生成", report.generated)
        print_kv("接受", f"{Colors.GREEN}{report.accepted}{Colors.RESET}")
        print_kv("拒绝", report.rejected)
        if report.quarantined:
            print_kv("隔离", f"{Colors.YELLOW}{', '.join(report.quarantined)}{Colors.RESET}")
        print_kv("L_ccl", f"{report.ccl_before} -> {report.ccl_after}")
        print_kv("QAM 准确率", report.qam_accuracy)

    emit(args, payload, human)
    return EXIT_OK


def cmd_run(args: argparse.Namespace, cfg: GenConfig) -> int:
    """完整迭代流程"""
    if args.corpus:
        cfg.pipeline.corpus_dir = args.corpus
    if args.test_dir:
        cfg.pipeline.test_dir = args.test_dir
    run_logger = RunLogger(cfg.pipeline.log_dir)
    log_file = run_logger.start_new_run()

    result = run(cfg, out_dir=args.out, run_logger=run_logger)
    payload = {
        "command": "run",
        "out": result.out_dir,
        "log_file": str(log_file),
        "reports": [r.model_dump(mode="json") for r in result.reports],
    }

    def human():
        print_header("迭代流程")
        headers = ["iteration", "generated", "accepted", "rejected", "quarantined", "eval_pme", "identity_pme"]
        rows = [
            [r.iteration, r.generated, r.accepted, r.rejected, len(r.quarantined), r.eval_pme, r.identity_pme]
            for r in result.reports
        ]
        print(format_table(headers, rows))
        print()
        print_kv("输出目录", result.out_dir)
        print_kv("运行日志", log_file)

    emit(args, payload, human)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, cfg: GenConfig) -> int:
    """在测试集上计算 PME、类别表与鲁棒性曲线"""
    estimator = Estimator.from_name(args.model, cfg.lk, kind="regressor" if args.raw else "composite")
    test_set = load_corpus(args.test_set)
    if estimator.model is not None:
        test_set = [crop_pair(p, estimator.model.frame) for p in test_set]

    result = evaluate_model(estimator, test_set, cfg.eval, threads=cfg.pipeline.threads)
    paths = write_eval_outputs(result, args.out) if args.out else {}
    payload = {
        "command": "eval",
        "estimator": result.estimator,
        "rows": [
            {
                "category": row.category,
                "count": row.count,
                "pme": _finite(row.pme),
                "identity_pme": _finite(row.identity_pme),
                "change_pct": _finite(row.change_pct),
            }
            for row in result.rows
        ],
        "excluded_points": result.excluded_points,
        "failed_pairs": result.failed_pairs,
        "outputs": {k: str(v) for k, v in paths.items()},
    }

    def human():
        print_header(f"评估: {result.estimator}")
        headers = ["category", "count", "PME", "identity", "change %"]
        rows = [[r.category, r.count, r.pme, r.identity_pme, r.change_pct] for r in result.rows]
        print(format_table(headers, rows))
        if result.excluded_points:
            print(f"{Colors.YELLOW}排除了 {result.excluded_points} 个映射到无穷远的点{Colors.RESET}")
        if result.failed_pairs:
            print(f"{Colors.YELLOW}估计失败（按单位阵计）: {', '.join(result.failed_pairs)}{Colors.RESET}")
        for name, path in paths.items():
            print_kv(name, path)

    emit(args, payload, human)
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace, cfg: GenConfig) -> int:
    """打印单个样本的标签准则残差、接缝能量与质量分数

    样本目录没有保存掩码时按整幅图像都是主平面计算。
    """
    sample_dir = Path(args.sample)
    sample = load_sample(sample_dir)
    masks = load_shard_masks(sample_dir)
    m_s = masks[0] if masks else PlaneMask(weights=np.ones(sample.i_s.shape))

    residual = label_residual(sample.i_s, sample.i_t_prime, m_s, sample.h_gt)
    try:
        seam = seam_energy(sample.i_t_prime, fusion_band(warp_mask(m_s, sample.h_gt)))
    except EmptyBandError:
        seam = None

    rescored = None
    if args.qam:
        if not args.corpus:
            raise ValueError("--qam 需要同时给出 --corpus 以读取原始目标图")
        quality_model = load_quality_model(args.qam)
        pair = crop_pair(load_pair(Path(args.corpus) / sample.provenance.pair_id), (sample.i_s.width, sample.i_s.height))
        img, reference, valid = negative_example(sample.i_t_prime, pair.i_t, sample.h_gt, sample.provenance.h_ts)
        score = qam_score(quality_model, img, reference, None, cfg.refine.artifact_threshold, valid)
        rescored = score.model_dump()

    provenance = sample.provenance
    payload = {
        "command": "inspect",
        "sample": str(sample_dir),
        "pair_id": provenance.pair_id,
        "iteration": provenance.iteration,
        "strategy": provenance.strategy,
        "flags": provenance.flags,
        "has_masks": masks is not None,
        "label_residual": _finite(residual),
        "seam_energy": _finite(seam),
        "quality_score": provenance.quality_score,
        "accepted": provenance.accepted,
        "rescored": rescored,
    }

    def human():
        print_header(f"样本 {provenance.pair_id}（第 {provenance.iteration} 轮）")
        print_kv("策略", provenance.strategy)
        print_kv("标签残差", _finite(residual))
        print_kv("接缝能量", _finite(seam))
        print_kv("质量分数", provenance.quality_score)
        status = f"{Colors.GREEN}接受{Colors.RESET}" if provenance.accepted else f"{Colors.RED}拒绝{Colors.RESET}"
        print_kv("QAM", status)
        if provenance.flags:
            print_kv("标记", f"{Colors.YELLOW}{', '.join(provenance.flags)}{Colors.RESET}")
        if not masks:
            print(f"{Colors.DIM}样本目录没有掩码，按整幅主平面计算{Colors.RESET}")
        if rescored:
            print_kv("重新打分", f"{rescored['value']:.4f} (tau={rescored['tau']})")

    emit(args, payload, human)
    return EXIT_OK


COMMANDS: dict[str, Callable[[argparse.Namespace, GenConfig], int]] = {
    "synth": cmd_synth,
    "generate": cmd_generate,
    "run": cmd_run,
    "eval": cmd_eval,
    "inspect": cmd_inspect,
}


def build_parser() -> argparse.ArgumentParser:
    """构造命令行解析器

    Returns:
        解析器；公共参数（--config/--json/--quiet/--threads）挂在每个子命令上
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", type=str, default=None, help="配置文件（默认按 MINI_HOMO_CONFIG 与搜索路径查找）")
    common.add_argument("--json", action="store_true", help="以 JSON 输出结果")
    common.add_argument("--quiet", "-q", action="store_true", help="只输出警告及以上日志")
    common.add_argument("--threads", type=int, default=None, help="生成与评估的线程数（覆盖配置）")

    parser = argparse.ArgumentParser(
        prog="mini-homo",
        description="mini-homo - 迭代式真实单应数据集生成与评估",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
示例:
  mini-homo synth --out ./corpus
  mini-homo run --config config.yaml --out ./runs/exp1
  mini-homo eval identity ./testset --out ./eval
        """,
    )
    parser.add_argument("--version", "-v", action="version", version=f"mini-homo {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True, help="可用命令")

    synth_parser = subparsers.add_parser("synth", parents=[common], help="生成合成语料")
    synth_parser.add_argument("--out", "-o", type=str, required=True, help="输出目录")
    synth_parser.add_argument("--seed", type=int, default=None, help="语料种子（覆盖 corpus.seed）")
    synth_parser.add_argument("--test", action="store_true", help="生成带标注点的留出测试集")

    gen_parser = subparsers.add_parser("generate", parents=[common], help="只运行 G 阶段")
    gen_parser.add_argument("--corpus", type=str, required=True, help="无标注图像对目录")
    gen_parser.add_argument("--out", "-o", type=str, required=True, help="输出目录")
    gen_parser.add_argument("--model", type=str, default=None, help="上一轮的回归器模型（可选）")
    gen_parser.add_argument("--no-ccm", action="store_true", help="关闭 CCM")
    gen_parser.add_argument("--no-qam", action="store_true", help="关闭 QAM")

    run_parser = subparsers.add_parser("run", parents=[common], help="完整迭代流程")
    run_parser.add_argument("--out", "-o", type=str, default=None, help="输出目录（默认 pipeline.out_dir）")
    run_parser.add_argument("--corpus", type=str, default=None, help="语料目录（默认按配置合成）")
    run_parser.add_argument("--test-dir", type=str, default=None, help="测试集目录（默认按配置合成）")

    eval_parser = subparsers.add_parser("eval", parents=[common], help="计算 PME 与鲁棒性曲线")
    eval_parser.add_argument("model", help="identity、lk 或回归器模型文件")
    eval_parser.add_argument("test_set", help="带 points.json 的测试集目录")
    eval_parser.add_argument("--out", "-o", type=str, default=None, help="写出 pme.csv/curve.csv/curve.svg/eval.json")
    eval_parser.add_argument("--raw", action="store_true", help="只用回归器，不做 LK 精修")

    inspect_parser = subparsers.add_parser("inspect", parents=[common], help="查看单个样本")
    inspect_parser.add_argument("sample", help="分片中的样本目录")
    inspect_parser.add_argument("--qam", type=str, default=None, help="用 qam.json 重新打分")
    inspect_parser.add_argument("--corpus", type=str, default=None, help="原始语料目录（重新打分时需要）")

    return parser


def main(argv: list[str] | None = None) -> int:
    """CLI 主入口点

    Returns:
        退出码：0 成功，1 内部错误，2 用户或输入错误
    """
    args = build_parser().parse_args(argv)
    setup_logging(args)

    try:
        cfg = load_config(args)
        return COMMANDS[args.command](args, cfg)
    except (DataError, FileNotFoundError, ValueError) as e:
        code = EXIT_USER
        error = e
    except Exception as e:
        logger.exception("unexpected error in %s", args.command)
        code = EXIT_INTERNAL
        error = e

    if args.json:
        print(json.dumps({"command": args.command, "error": type(error).__name__, "message": str(error), "exit_code": code}))
    else:
        print(f"{Colors.RED}❌ {type(error).__name__}: {error}{Colors.RESET}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
