"""配置管理模块

提供统一的配置加载和管理功能。所有数值常量（阈值、损失权重、扰动范围、种子）
都在这里，命令行参数只选择路径和模式。
"""

import os
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, Field, model_validator

from .schema import Category, PerturbationRanges, Strategy

CONFIG_ENV_VAR = "MINI_HOMO_CONFIG"


def _disturbance_ranges() -> PerturbationRanges:
    return PerturbationRanges(
        scaling=(1.0, 1.0),
        shearing=(0.0, 0.0),
        rotation=(-0.05, 0.05),
        translation=(-8.0, 8.0),
        perspective=(0.0, 0.0),
    )


def _scene_motion_ranges() -> PerturbationRanges:
    return PerturbationRanges(
        scaling=(0.97, 1.03),
        shearing=(-0.02, 0.02),
        rotation=(-0.03, 0.03),
        translation=(-6.0, 6.0),
        perspective=(-5e-5, 5e-5),
    )


class SamplingConfig(BaseModel):
    """H_gt 与扰动单应的采样配置"""

    kind: Literal["factors", "corners"] = "factors"
    gt: PerturbationRanges = Field(default_factory=PerturbationRanges)
    corner_max_offset: float = Field(default=16.0, ge=0.0)  # kind="corners" 时使用
    disturbance: PerturbationRanges = Field(default_factory=_disturbance_ranges)
    disturbance_min_shift: float = Field(default=2.0, ge=0.0)  # 扰动的最小平均角点位移（像素）


class SegConfig(BaseModel):
    """主平面分割配置"""

    rho: float = Field(default=0.06, gt=0.0, le=1.0)  # 残差阈值
    box_radius: int = Field(default=3, ge=0)
    morph_radius: int = Field(default=2, ge=0)
    feather: float = Field(default=2.0, ge=0.0)  # 羽化宽度（像素）


class GenerationConfig(BaseModel):
    """样本生成配置"""

    strategy: Strategy = Strategy.REALISTIC
    hole_floor: float = Field(default=0.05, gt=0.0, le=1.0)  # ε_w
    empty_plane_floor: float = Field(default=0.05, ge=0.0, le=1.0)


class RefineConfig(BaseModel):
    """CCM 与 QAM 配置"""

    use_ccm: bool = True
    use_qam: bool = True
    artifact_threshold: float = Field(default=0.10, gt=0.0)
    ccm_feather: float = Field(default=2.0, ge=0.0)
    ccl_erosion: int = Field(default=6, ge=0)  # 计算 L_ccl 时有效区域的腐蚀半径
    tau: float = Field(default=0.5, ge=0.0, le=1.0)
    qam_epochs: int = Field(default=500, ge=1)
    qam_lr: float = Field(default=0.5, gt=0.0)
    qam_l2: float = Field(default=0.0, ge=0.0)
    qam_min_per_class: int = Field(default=10, ge=1)


class LossConfig(BaseModel):
    """总损失权重 L_total = L_sup + λ1·L_ccl + λ2·L_qal"""

    lambda1: float = Field(default=0.5, ge=0.0)
    lambda2: float = Field(default=0.1, ge=0.0)


class LKConfig(BaseModel):
    """逆组合 Lucas-Kanade 配置"""

    levels: int = Field(default=3, ge=1)
    max_iterations: int = Field(default=50, ge=1)
    eps: float = Field(default=1e-4, gt=0.0)  # 参数更新范数的收敛阈值
    damping: float = Field(default=1e-3, ge=0.0)  # Hessian 奇异时的阻尼系数
    huber_delta: float | None = Field(default=0.1, gt=0.0)
    blur_sigma: float = Field(default=1.0, ge=0.0)


class RegressorConfig(BaseModel):
    """角点位移回归器配置"""

    hidden: list[int] = Field(default_factory=lambda: [64])
    input_side: int = Field(default=32, ge=4)
    lr: float = Field(default=1e-2, ge=0.0)
    epochs: int = Field(default=30, ge=0)
    batch_size: int = Field(default=16, ge=1)
    weight_decay: float = Field(default=0.0, ge=0.0)
    seed: int = 0


class EvalConfig(BaseModel):
    """评估配置"""

    threshold_min: float = Field(default=0.1, gt=0.0)
    threshold_max: float = Field(default=3.0, gt=0.0)
    threshold_count: int = Field(default=30, ge=2)

    @model_validator(mode="after")
    def _check_range(self) -> "EvalConfig":
        if self.threshold_min >= self.threshold_max:
            raise ValueError("threshold_min 必须小于 threshold_max")
        return self

    def thresholds(self) -> np.ndarray:
        """对数等间距阈值网格。"""
        return np.geomspace(self.threshold_min, self.threshold_max, self.threshold_count)


class CorpusConfig(BaseModel):
    """合成语料配置"""

    count: int = Field(default=40, ge=0)
    test_count: int = Field(default=20, ge=0)
    size: int = Field(default=128, ge=32)
    seed: int = 0
    min_objects: int = Field(default=0, ge=0)
    max_objects: int = Field(default=3, ge=0)
    texture_sigma: float = Field(default=2.0, gt=0.0)
    motion: PerturbationRanges = Field(default_factory=_scene_motion_ranges)
    displacement: tuple[float, float] = (6.0, 14.0)  # 物体独立位移的模长范围（像素）
    categories: list[Category] = Field(default_factory=lambda: list(Category))
    points_per_pair: int = Field(default=8, ge=1)

    @model_validator(mode="after")
    def _check_objects(self) -> "CorpusConfig":
        if self.min_objects > self.max_objects:
            raise ValueError("min_objects 不能大于 max_objects")
        if not self.categories:
            raise ValueError("categories 不能为空")
        low, high = self.displacement
        if low < 0 or low > high:
            raise ValueError(f"无效的位移范围: {self.displacement}")
        return self


class PipelineConfig(BaseModel):
    """迭代流程配置"""

    iterations: int = Field(default=2, ge=1)
    patch_size: tuple[int, int] = (128, 128)  # (宽, 高)
    master_seed: int = 0
    threads: int = Field(default=1, ge=1)
    save_masks: bool = False
    corpus_dir: str | None = None  # 为空时按 corpus 配置即时合成
    test_dir: str | None = None
    out_dir: str = "./runs"
    log_dir: str | None = None  # 为空时使用 ~/.mini-homo/log


class GenConfig(BaseModel):
    """主配置类"""

    sampling: SamplingConfig = Field(default_factory=SamplingConfig)
    seg: SegConfig = Field(default_factory=SegConfig)
    generation: GenerationConfig = Field(default_factory=GenerationConfig)
    refine: RefineConfig = Field(default_factory=RefineConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    lk: LKConfig = Field(default_factory=LKConfig)
    regressor: RegressorConfig = Field(default_factory=RegressorConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    corpus: CorpusConfig = Field(default_factory=CorpusConfig)
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)

    @classmethod
    def load(cls) -> "GenConfig":
        """从默认搜索路径加载配置，找不到配置文件时使用默认值。

        设置了 MINI_HOMO_CONFIG 但文件不存在时抛出 FileNotFoundError。
        """
        config_path = cls.get_default_config_path()
        if not os.environ.get(CONFIG_ENV_VAR) and not config_path.exists():
            return cls()
        return cls.from_yaml(config_path)

    @classmethod
    def from_yaml(cls, config_path: str | Path) -> "GenConfig":
        """从 YAML（或 JSON）文件加载配置

        Args:
            config_path: 配置文件路径

        Returns:
            GenConfig 实例

        Raises:
            FileNotFoundError: 配置文件不存在
            ValueError: 配置为空或字段取值无效
        """
        config_path = Path(config_path)

        if not config_path.exists():
            raise FileNotFoundError(f"配置文件不存在: {config_path}")

        with open(config_path, encoding="utf-8") as f:
            data = yaml.safe_load(f)

        if not data:
            raise ValueError("配置文件为空")
        if not isinstance(data, dict):
            raise ValueError(f"配置文件顶层必须是映射: {config_path}")

        return cls.model_validate(data)

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")

    def to_yaml(self, config_path: str | Path) -> Path:
        """保存为 YAML，from_yaml(to_yaml(cfg)) == cfg。"""
        config_path = Path(config_path)
        config_path.parent.mkdir(parents=True, exist_ok=True)
        with open(config_path, "w", encoding="utf-8") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False, allow_unicode=True)
        return config_path

    @staticmethod
    def get_package_dir() -> Path:
        """获取包安装目录"""
        return Path(__file__).parent

    @classmethod
    def find_config_file(cls, filename: str) -> Path | None:
        """按优先级顺序查找配置文件

        1) 环境变量 MINI_HOMO_CONFIG 指向的文件（仅对 config.yaml 生效）
        2) 当前目录的 mini_homo/config/{filename}（开发模式）
        3) 用户主目录的 ~/.mini-homo/config/{filename}
        4) 包安装目录的 {package}/mini_homo/config/{filename}

        Args:
            filename: 配置文件名

        Returns:
            找到的配置文件路径，未找到返回 None
        """
        env_path = os.environ.get(CONFIG_ENV_VAR)
        if env_path and filename == "config.yaml":
            return Path(env_path).expanduser()

        dev_config = Path.cwd() / "mini_homo" / "config" / filename
        if dev_config.exists():
            return dev_config

        user_config = Path.home() / ".mini-homo" / "config" / filename
        if user_config.exists():
            return user_config

        package_config = cls.get_package_dir() / "config" / filename
        if package_config.exists():
            return package_config

        return None

    @classmethod
    def get_default_config_path(cls) -> Path:
        config_path = cls.find_config_file("config.yaml")
        if config_path:
            return config_path
        return cls.get_package_dir() / "config" / "config.yaml"
