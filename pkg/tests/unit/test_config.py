"""
Unit tests for paragraph_pipeline.config module.

Tests environment defaults, YAML/JSON config files and the validation of
training, executor and pipeline configurations.
"""

import os
from importlib import reload
from unittest.mock import patch

import pytest

from paragraph_pipeline import config
from paragraph_pipeline.config import (
    DEFAULT_TRAINING_CONFIG,
    get_executor_config,
    get_pipeline_config,
    get_training_config,
    load_config_file,
    load_training_config,
)
from paragraph_pipeline.errors import ConfigError

pytestmark = pytest.mark.unit


class TestEnvironment:
    """Tests for values read from the environment."""

    def test_defaults(self):
        assert config.PARAGRAPH_DEFAULT_TRIP == int(os.environ.get("PARAGRAPH_DEFAULT_TRIP", "10"))
        assert config.VALID_MODES == ("raw_ast", "augmented_ast", "paragraph")

    def test_env_overrides(self):
        """Test environment variables override module defaults on reload."""
        try:
            with patch.dict(os.environ, {"PARAGRAPH_DEFAULT_TRIP": "25", "PARAGRAPH_PLATFORM": "a100"}):
                reload(config)
                assert config.PARAGRAPH_DEFAULT_TRIP == 25
                assert config.DEFAULT_PIPELINE_CONFIG["platform"] == "a100"
        finally:
            reload(config)


class TestTrainingConfig:
    """Tests for get_training_config."""

    def test_defaults(self):
        merged = get_training_config()
        assert merged == DEFAULT_TRAINING_CONFIG
        assert merged is not DEFAULT_TRAINING_CONFIG

    def test_override(self):
        merged = get_training_config({"lr": 0.01, "mode": "raw_ast"})
        assert merged["lr"] == 0.01
        assert merged["mode"] == "raw_ast"
        assert merged["epochs"] == DEFAULT_TRAINING_CONFIG["epochs"]

    def test_int_accepted_for_float(self):
        assert get_training_config({"lr": 1})["lr"] == 1

    @pytest.mark.parametrize("overrides", [
        {"learning_rate": 0.1},
        {"lr": "fast"},
        {"epochs": -1},
        {"batch": 0},
        {"mode": "cfg"},
        {"head": [8]},
        {"hidden": True},
    ])
    def test_invalid(self, overrides):
        with pytest.raises(ConfigError):
            get_training_config(overrides)


class TestExecutorConfig:
    """Tests for get_executor_config."""

    def test_defaults_compile_with_openmp(self):
        merged = get_executor_config()
        assert "-fopenmp" in merged["compile"]
        assert "{harness}" in merged["compile"]
        assert merged["run"] == "{binary}"

    @pytest.mark.parametrize("overrides", [{"timeout_s": 0}, {"retries": -1}, {"shell": True}])
    def test_invalid(self, overrides):
        with pytest.raises(ConfigError):
            get_executor_config(overrides)


class TestPipelineConfig:
    """Tests for get_pipeline_config."""

    def test_grids_merge(self):
        merged = get_pipeline_config({"grids": {"sizes": [32]}})
        assert merged["grids"]["sizes"] == [32]
        assert merged["grids"]["teams"] == [1, 4]

    def test_nested_training_validated(self):
        with pytest.raises(ConfigError):
            get_pipeline_config({"training": {"mode": "nope"}})

    def test_empty_grid(self):
        with pytest.raises(ConfigError):
            get_pipeline_config({"grids": {"threads": []}})

    def test_executor_type(self):
        with pytest.raises(ConfigError):
            get_pipeline_config({"executor": 5})


class TestConfigFiles:
    """Tests for load_config_file."""

    def test_yaml(self, tmp_path):
        path = tmp_path / "train.yaml"
        path.write_text("lr: 0.005\nepochs: 3\nhead: [16, 8]\n")
        merged = load_training_config(str(path))
        assert (merged["lr"], merged["epochs"], merged["head"]) == (0.005, 3, [16, 8])

    def test_json_is_yaml(self, tmp_path):
        path = tmp_path / "train.json"
        path.write_text('{"batch": 4}')
        assert load_config_file(str(path)) == {"batch": 4}

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        assert load_config_file(str(path)) == {}

    def test_missing(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config_file(str(tmp_path / "absent.yaml"))

    def test_not_a_mapping(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            load_config_file(str(path))

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("lr: [1, 2\n")
        with pytest.raises(ConfigError):
            load_config_file(str(path))

    def test_no_path_gives_defaults(self):
        assert load_training_config(None) == get_training_config()
