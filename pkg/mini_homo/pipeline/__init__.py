"""迭代流程、合成语料与数据集分片。"""

from .corpus import load_corpus, load_pair, save_corpus, synth_corpus, synth_pair, synth_test_set
from .runner import (
    EstimatorState,
    IterationResult,
    RunResult,
    crop_pair,
    generate_pair,
    generate_phase,
    load_inputs,
    load_report,
    run,
    run_iteration,
    write_iteration,
    write_reports_csv,
)
from .shard import load_sample, load_shard, load_shard_masks, save_shard

__all__ = [
    "EstimatorState",
    "IterationResult",
    "RunResult",
    "crop_pair",
    "generate_pair",
    "generate_phase",
    "load_corpus",
    "load_inputs",
    "load_pair",
    "load_report",
    "load_sample",
    "load_shard",
    "load_shard_masks",
    "run",
    "run_iteration",
    "save_corpus",
    "save_shard",
    "synth_corpus",
    "synth_pair",
    "synth_test_set",
    "write_iteration",
    "write_reports_csv",
]
