"""
Evaluation metrics and reports.

Runtimes go in as microseconds. RMSE is reported in milliseconds; relative
errors divide the absolute error by the range of the actual runtimes. Sums
use ``math.fsum`` so results do not depend on input order.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .config import VALID_MODES, get_training_config
from .dataset import DataPoint, Dataset, scale_graph, split_dataset
from .errors import MetricError, SchemaError
from .gnn import RgatModel, predict_runtime_us, train

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
ABLATION_SCHEMA_VERSION = 1
BIN_WIDTH_S = 10.0
NUM_BINS = 11


@dataclass
class MetricReport:
    rmse_ms: float
    norm_rmse: Optional[float]
    bins: List[Dict[str, Any]]
    per_app: Dict[str, float]
    n: int
    schema_version: int = REPORT_SCHEMA_VERSION
    extra: Dict[str, Any] = field(default_factory=dict)


def _as_arrays(actual: Sequence[float], predicted: Sequence[float]):
    a = np.asarray(actual, dtype=np.float64).ravel()
    p = np.asarray(predicted, dtype=np.float64).ravel()
    if a.size == 0:
        raise MetricError("metrics need at least one point")
    if a.size != p.size:
        raise MetricError(f"actual has {a.size} values but predicted has {p.size}")
    return a, p


def _rmse_us(a: np.ndarray, p: np.ndarray) -> float:
    diff = a - p
    return math.sqrt(math.fsum(diff * diff) / a.size)


def _runtime_range(a: np.ndarray) -> float:
    spread = float(a.max() - a.min())
    if not spread > 0:
        raise MetricError("actual runtimes have zero range; relative metrics are undefined")
    return spread


def rmse(actual: Sequence[float], predicted: Sequence[float]) -> float:
    """Root mean squared error in milliseconds."""
    a, p = _as_arrays(actual, predicted)
    return _rmse_us(a, p) / 1000.0


def normalized_rmse(actual: Sequence[float], predicted: Sequence[float]) -> float:
    a, p = _as_arrays(actual, predicted)
    return _rmse_us(a, p) / _runtime_range(a)


def relative_errors(actual: Sequence[float], predicted: Sequence[float]) -> np.ndarray:
    a, p = _as_arrays(actual, predicted)
    return np.abs(a - p) / _runtime_range(a)


def bin_index(runtime_us: float, bin_width_s: float = BIN_WIDTH_S, num_bins: int = NUM_BINS) -> int:
    """Half-open [k*w, (k+1)*w) seconds; the last bin is open-ended."""
    return min(int(math.floor(runtime_us / 1e6 / bin_width_s)), num_bins - 1)


def binned_relative_error(actual: Sequence[float], predicted: Sequence[float],
                          bin_width_s: float = BIN_WIDTH_S, num_bins: int = NUM_BINS) -> List[Dict[str, Any]]:
    a, _ = _as_arrays(actual, predicted)
    errors = relative_errors(actual, predicted)
    members: List[List[float]] = [[] for _ in range(num_bins)]
    for runtime, error in zip(a, errors):
        members[bin_index(float(runtime), bin_width_s, num_bins)].append(float(error))
    bins = []
    for k, values in enumerate(members):
        bins.append({
            "lo_s": k * bin_width_s,
            "hi_s": (k + 1) * bin_width_s if k < num_bins - 1 else None,
            "count": len(values),
            "mean_relative_error": math.fsum(values) / len(values) if values else None,
            "max_relative_error": max(values) if values else None,
        })
    return bins


def per_application_error(points: Sequence[DataPoint], predictions: Sequence[float]) -> Dict[str, float]:
    """Mean relative error per application name."""
    actual = [point.runtime_us for point in points]
    errors = relative_errors(actual, predictions)
    frame = pd.DataFrame({"app": [point.app_name for point in points], "error": errors})
    means = frame.groupby("app")["error"].agg(lambda s: math.fsum(s) / len(s))
    return {str(app): float(value) for app, value in sorted(means.items())}


def build_report(points: Sequence[DataPoint], predictions: Sequence[float]) -> MetricReport:
    actual = [point.runtime_us for point in points]
    a, _ = _as_arrays(actual, predictions)
    spread = float(a.max() - a.min())
    return MetricReport(
        rmse_ms=rmse(actual, predictions),
        norm_rmse=normalized_rmse(actual, predictions) if spread > 0 else None,
        bins=binned_relative_error(actual, predictions) if spread > 0 else [],
        per_app=per_application_error(points, predictions) if spread > 0 else {},
        n=len(points),
    )


def evaluate(model: RgatModel, points: Sequence[DataPoint]) -> MetricReport:
    if model.scaler is None:
        raise MetricError("model has no scaler; train or load a checkpoint first")
    graphs = [scale_graph(p.graph, model.scaler, p.runtime_us, p.app_name) for p in points]
    predictions = predict_runtime_us(model, graphs)
    report = build_report(points, predictions)
    logger.info(f"[EVAL] n={report.n} rmse={report.rmse_ms:.4f} ms norm_rmse={report.norm_rmse}")
    return report


def report_to_json(report: MetricReport) -> Dict[str, Any]:
    return asdict(report)


def report_from_json(doc: Mapping[str, Any]) -> MetricReport:
    if not isinstance(doc, Mapping) or doc.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise SchemaError("unsupported metric report schema")
    try:
        return MetricReport(
            rmse_ms=float(doc["rmse_ms"]),
            norm_rmse=None if doc["norm_rmse"] is None else float(doc["norm_rmse"]),
            bins=[dict(b) for b in doc["bins"]],
            per_app={str(k): float(v) for k, v in doc["per_app"].items()},
            n=int(doc["n"]),
            extra=dict(doc.get("extra", {})),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"malformed metric report: {e}") from e


def report_to_csv(report: MetricReport, path: str) -> None:
    rows = [
        {"section": "bin", "label": f"{b['lo_s']:g}-{'' if b['hi_s'] is None else format(b['hi_s'], 'g')}",
         "count": b["count"], "mean_relative_error": b["mean_relative_error"],
         "max_relative_error": b["max_relative_error"]}
        for b in report.bins
    ]
    rows += [
        {"section": "app", "label": app, "count": None, "mean_relative_error": value, "max_relative_error": None}
        for app, value in report.per_app.items()
    ]
    rows.append({"section": "overall", "label": "rmse_ms", "count": report.n,
                 "mean_relative_error": report.rmse_ms, "max_relative_error": report.norm_rmse})
    pd.DataFrame(rows, columns=["section", "label", "count", "mean_relative_error", "max_relative_error"]).to_csv(
        path, index=False
    )


# ---------------------------------------------------------------------------
# Ablation
# ---------------------------------------------------------------------------

def _train_mode(points: Sequence[DataPoint], config: Mapping[str, Any], mode: str) -> Dict[str, Any]:
    mode_config = dict(config)
    mode_config["mode"] = mode
    mode_config = get_training_config(mode_config)
    split = split_dataset(points, mode_config["seed"])
    model = RgatModel(mode_config)
    _, curve = train(model, Dataset(list(points)), split, mode_config)
    val = [row["val_rmse_ms"] for row in curve]
    norm = [row["val_norm_rmse"] for row in curve]
    result = {
        "final_val_rmse_ms": val[-1] if val else None,
        "best_val_rmse_ms": min(val) if val else None,
        "final_val_norm_rmse": norm[-1] if norm else None,
        "curve": curve,
    }
    logger.info(f"[ABLATION] {mode}: final {result['final_val_rmse_ms']} ms, best {result['best_val_rmse_ms']} ms")
    return result


def run_ablation(points: Sequence[DataPoint], config: Optional[Mapping[str, Any]] = None,
                 jobs: int = 1) -> Dict[str, Any]:
    """Train one model per representation mode with identical seeds and configuration."""
    config = get_training_config(config)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=min(jobs, len(VALID_MODES))) as pool:
            results = list(pool.map(lambda mode: _train_mode(points, config, mode), VALID_MODES))
    else:
        results = [_train_mode(points, config, mode) for mode in VALID_MODES]
    return {
        "schema_version": ABLATION_SCHEMA_VERSION,
        "config": {k: v for k, v in config.items() if k != "mode"},
        "modes": dict(zip(VALID_MODES, results)),
    }
