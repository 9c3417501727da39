import logging
import os
from typing import Any, Dict, Mapping, Optional

import yaml
from dotenv import load_dotenv

from .errors import ConfigError

load_dotenv()

# Loop bounds that cannot be resolved from bindings fall back to this trip count
PARAGRAPH_DEFAULT_TRIP = int(os.environ.get("PARAGRAPH_DEFAULT_TRIP", "10"))

PARAGRAPH_LOG_LEVEL = os.environ.get("PARAGRAPH_LOG_LEVEL", "INFO").upper()
PARAGRAPH_JOBS = int(os.environ.get("PARAGRAPH_JOBS", "1"))
PARAGRAPH_SEED = int(os.environ.get("PARAGRAPH_SEED", "0"))

# Tag stored on every data point (accelerator or host name)
PARAGRAPH_PLATFORM = os.environ.get("PARAGRAPH_PLATFORM", "desk")

# Lognormal noise of the synthetic labeler; 0 gives exact analytic costs
PARAGRAPH_SYNTHETIC_SIGMA = float(os.environ.get("PARAGRAPH_SYNTHETIC_SIGMA", "0.0"))

PARAGRAPH_EXECUTOR_TIMEOUT_S = int(os.environ.get("PARAGRAPH_EXECUTOR_TIMEOUT_S", "300"))
PARAGRAPH_EXECUTOR_RETRIES = int(os.environ.get("PARAGRAPH_EXECUTOR_RETRIES", "2"))

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

DEFAULT_TRAINING_CONFIG: Dict[str, Any] = {
    "lr": 1e-3,
    "epochs": 200,
    "batch": 32,
    "seed": PARAGRAPH_SEED,
    "hidden": 64,
    "head": [64, 32],
    "feature_hidden": 16,
    "leaky_slope": 0.2,
    "mode": "paragraph",
    "jobs": PARAGRAPH_JOBS,
}

DEFAULT_EXECUTOR_CONFIG: Dict[str, Any] = {
    "compile": "cc -O2 -fopenmp {harness} -o {binary} -lm",
    "run": "{binary}",
    "timeout_s": PARAGRAPH_EXECUTOR_TIMEOUT_S,
    "retries": PARAGRAPH_EXECUTOR_RETRIES,
}

DEFAULT_PIPELINE_CONFIG: Dict[str, Any] = {
    "workdir": "pipeline_out",
    "kernels": ["matmul"],
    "grids": {"sizes": [64, 128, 256], "teams": [1, 4], "threads": [1, 4]},
    "bindings": {},
    "default_trip": PARAGRAPH_DEFAULT_TRIP,
    "synthetic_seed": PARAGRAPH_SEED,
    "sigma": PARAGRAPH_SYNTHETIC_SIGMA,
    "executor": None,
    "platform": PARAGRAPH_PLATFORM,
    "exclude_apps": [],
    "training": {},
    "ablate": False,
}

VALID_MODES = ("raw_ast", "augmented_ast", "paragraph")


def configure_logging(level: Optional[str] = None) -> None:
    """Configure root logging to stderr with the project format."""
    logging.basicConfig(level=(level or PARAGRAPH_LOG_LEVEL).upper(), format=LOG_FORMAT, force=True)


def load_config_file(path: str) -> Dict[str, Any]:
    """Read a YAML or JSON config file into a dict."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = yaml.safe_load(handle)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse config file {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a mapping, got {type(data).__name__}")
    return data


def _merge(defaults: Mapping[str, Any], overrides: Optional[Mapping[str, Any]], what: str) -> Dict[str, Any]:
    merged = dict(defaults)
    for key, value in (overrides or {}).items():
        if key not in defaults:
            raise ConfigError(f"unknown {what} key '{key}'")
        default = defaults[key]
        if default is not None and value is not None and not _same_kind(default, value):
            raise ConfigError(f"{what} key '{key}' expects {type(default).__name__}, got {type(value).__name__}")
        merged[key] = value
    return merged


def _same_kind(default: Any, value: Any) -> bool:
    if isinstance(default, bool) or isinstance(value, bool):
        return isinstance(default, bool) and isinstance(value, bool)
    if isinstance(default, (int, float)):
        return isinstance(value, (int, float))
    if isinstance(default, (list, tuple)):
        return isinstance(value, (list, tuple))
    return isinstance(value, type(default))


def get_training_config(overrides: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    """Get the training configuration, defaults merged with overrides."""
    config = _merge(DEFAULT_TRAINING_CONFIG, overrides, "training config")
    if config["mode"] not in VALID_MODES:
        raise ConfigError(f"training mode must be one of {VALID_MODES}, got {config['mode']!r}")
    if config["epochs"] < 0 or config["batch"] < 1 or config["hidden"] < 1:
        raise ConfigError("training config needs epochs >= 0, batch >= 1 and hidden >= 1")
    if config["lr"] < 0:
        raise ConfigError("training config needs lr >= 0")
    config["head"] = [int(width) for width in config["head"]]
    if len(config["head"]) != 2:
        raise ConfigError("training config 'head' must list exactly two widths")
    return config


def load_training_config(path: Optional[str]) -> Dict[str, Any]:
    return get_training_config(load_config_file(path) if path else None)


def get_executor_config(overrides: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    config = _merge(DEFAULT_EXECUTOR_CONFIG, overrides, "executor config")
    if config["timeout_s"] <= 0 or config["retries"] < 0:
        raise ConfigError("executor config needs timeout_s > 0 and retries >= 0")
    return config


def load_executor_config(path: str) -> Dict[str, Any]:
    return get_executor_config(load_config_file(path))


def get_pipeline_config(overrides: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    config = _merge(DEFAULT_PIPELINE_CONFIG, overrides, "pipeline config")
    grids = dict(DEFAULT_PIPELINE_CONFIG["grids"])
    grids.update(config.get("grids") or {})
    for name in ("sizes", "teams", "threads"):
        if not grids.get(name):
            raise ConfigError(f"pipeline grid '{name}' must be non-empty")
    config["grids"] = grids
    config["training"] = get_training_config(config.get("training"))
    if config["executor"] is not None and not isinstance(config["executor"], (str, dict)):
        raise ConfigError("pipeline 'executor' must be a path or a mapping")
    return config


def load_pipeline_config(path: str) -> Dict[str, Any]:
    return get_pipeline_config(load_config_file(path))
