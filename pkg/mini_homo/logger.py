"""流水线运行日志记录器"""

import json
from datetime import datetime
from pathlib import Path
from typing import Any

from .schema import IterationReport


class RunLogger:
    """流水线运行日志记录器

    负责记录每次流水线运行的完整过程，包括：
    - 运行配置
    - 每轮迭代的汇总
    - 被隔离的样本及失败原因

    日志放在输出目录之外，输出目录因此保持逐字节可复现。
    """

    def __init__(self, log_dir: str | Path | None = None):
        """初始化日志记录器

        Args:
            log_dir: 日志目录，默认 ~/.mini-homo/log/
        """
        self.log_dir = Path(log_dir).expanduser() if log_dir else Path.home() / ".mini-homo" / "log"
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.log_file: Path | None = None
        self.log_index = 0

    def start_new_run(self) -> Path:
        """开始新运行，创建新日志文件"""
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S_%f")
        self.log_file = self.log_dir / f"homo_run_{timestamp}.log"
        self.log_index = 0

        with open(self.log_file, "w", encoding="utf-8") as f:
            f.write("=" * 80 + "\n")
            f.write(f"mini-homo 运行日志 - {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}\n")
            f.write("=" * 80 + "\n\n")
        return self.log_file

    def log_config(self, config: dict[str, Any]):
        """记录本次运行的完整配置"""
        self.log_index += 1
        content = "运行配置:\n\n" + json.dumps(config, indent=2, ensure_ascii=False)
        self._write_log("CONFIG", content)

    def log_iteration(self, report: IterationReport):
        """记录一轮迭代的汇总"""
        self.log_index += 1
        content = f"迭代 {report.iteration}:\n\n"
        content += json.dumps(report.model_dump(mode="json"), indent=2, ensure_ascii=False)
        self._write_log("ITERATION", content)

    def log_sample_failure(self, pair_id: str, iteration: int, error: BaseException):
        """记录被隔离的样本

        Args:
            pair_id: 图像对 id
            iteration: 迭代轮次
            error: 导致隔离的异常
        """
        self.log_index += 1
        failure = {
            "pair_id": pair_id,
            "iteration": iteration,
            "error_type": type(error).__name__,
            "error": str(error),
        }
        content = "样本失败:\n\n" + json.dumps(failure, indent=2, ensure_ascii=False)
        self._write_log("SAMPLE_FAILURE", content)

    def log_summary(self, summary: dict[str, Any]):
        """记录运行结束时的汇总"""
        self.log_index += 1
        content = "运行汇总:\n\n" + json.dumps(summary, indent=2, ensure_ascii=False)
        self._write_log("SUMMARY", content)

    def _write_log(self, log_type: str, content: str):
        """写入日志条目

        Args:
            log_type: 日志类型（CONFIG, ITERATION, SAMPLE_FAILURE, SUMMARY）
            content: 日志内容
        """
        if self.log_file is None:
            return

        with open(self.log_file, "a", encoding="utf-8") as f:
            f.write("\n" + "-" * 80 + "\n")
            f.write(f"[{self.log_index}] {log_type}\n")
            f.write(f"时间戳: {datetime.now().strftime('%Y-%m-%d %H:%M:%S.%f')[:-3]}\n")
            f.write("-" * 80 + "\n")
            f.write(content + "\n")

    def get_log_file_path(self) -> Path | None:
        """获取当前日志文件路径"""
        return self.log_file
