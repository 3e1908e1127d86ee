"""Test cases for configuration loading and validation."""

import tempfile
from pathlib import Path

import numpy as np
import pytest
import yaml
from pydantic import ValidationError

from mini_homo.config import CONFIG_ENV_VAR, EvalConfig, GenConfig
from mini_homo.schema import Category

EXAMPLE_CONFIG = Path(__file__).parent.parent / "mini_homo" / "config" / "config-example.yaml"


class TestDefaults:
    """Tests for the built-in defaults."""

    def test_documented_constants(self):
        cfg = GenConfig()
        assert cfg.seg.rho == 0.06
        assert cfg.generation.hole_floor == 0.05
        assert cfg.refine.artifact_threshold == 0.10
        assert cfg.refine.tau == 0.5
        assert cfg.loss.lambda1 == 0.5
        assert cfg.loss.lambda2 == 0.1
        assert cfg.pipeline.iterations == 2
        assert cfg.pipeline.patch_size == (128, 128)
        assert cfg.sampling.disturbance_min_shift == 2.0
        assert cfg.corpus.categories == list(Category)

    def test_threshold_grid(self):
        grid = EvalConfig().thresholds()
        assert len(grid) == 30
        assert np.allclose(np.diff(np.log(grid)), np.log(30) / 29)

    def test_example_matches_defaults(self):
        print("\n=== Testing example config ===")
        loaded = GenConfig.from_yaml(EXAMPLE_CONFIG)
        assert loaded == GenConfig()
        print("✅ Example config matches defaults")


class TestLoading:
    """Tests for YAML loading and saving."""

    def test_round_trip(self):
        cfg = GenConfig.model_validate({"refine": {"tau": 0.7, "use_qam": False}, "corpus": {"count": 5}})
        with tempfile.TemporaryDirectory() as tmpdir:
            path = cfg.to_yaml(Path(tmpdir) / "config.yaml")
            assert GenConfig.from_yaml(path) == cfg

    def test_partial_file_uses_defaults(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "config.yaml"
            path.write_text("seg:\n  rho: 0.1\n", encoding="utf-8")
            cfg = GenConfig.from_yaml(path)
        assert cfg.seg.rho == 0.1
        assert cfg.seg.box_radius == 3
        assert cfg.refine == GenConfig().refine

    def test_json_is_accepted(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "config.json"
            path.write_text('{"loss": {"lambda1": 1.0}}', encoding="utf-8")
            assert GenConfig.from_yaml(path).loss.lambda1 == 1.0

    def test_missing_file(self):
        with pytest.raises(FileNotFoundError):
            GenConfig.from_yaml("/nonexistent/config.yaml")

    def test_empty_file(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "config.yaml"
            path.write_text("", encoding="utf-8")
            with pytest.raises(ValueError, match="配置文件为空"):
                GenConfig.from_yaml(path)

    def test_non_mapping(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "config.yaml"
            path.write_text("- 1\n- 2\n", encoding="utf-8")
            with pytest.raises(ValueError):
                GenConfig.from_yaml(path)

    def test_env_var_path(self, monkeypatch):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "custom.yaml"
            path.write_text(yaml.safe_dump({"pipeline": {"iterations": 5}}), encoding="utf-8")
            monkeypatch.setenv(CONFIG_ENV_VAR, str(path))
            assert GenConfig.load().pipeline.iterations == 5

    def test_env_var_missing_file(self, monkeypatch):
        monkeypatch.setenv(CONFIG_ENV_VAR, "/nonexistent/custom.yaml")
        with pytest.raises(FileNotFoundError):
            GenConfig.load()


class TestValidation:
    """Tests for invalid values."""

    @pytest.mark.parametrize(
        "data",
        [
            {"refine": {"tau": 1.5}},
            {"seg": {"rho": 0.0}},
            {"loss": {"lambda1": -1.0}},
            {"eval": {"threshold_min": 3.0, "threshold_max": 0.1}},
            {"corpus": {"min_objects": 4, "max_objects": 1}},
            {"sampling": {"gt": {"scaling": [1.1, 0.9]}}},
            {"sampling": {"gt": {"shearing": [-1.0, 1.0]}}},
            {"generation": {"strategy": "magic"}},
            {"corpus": {"categories": ["XX"]}},
            {"corpus": {"categories": []}},
            {"pipeline": {"threads": 0}},
        ],
    )
    def test_rejected(self, data):
        with pytest.raises(ValidationError):
            GenConfig.model_validate(data)

    def test_validation_error_is_value_error(self):
        with pytest.raises(ValueError):
            GenConfig.model_validate({"refine": {"tau": -0.1}})
