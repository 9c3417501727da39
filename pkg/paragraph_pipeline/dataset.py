"""
Dataset construction: graphs plus (teams, threads) features plus runtime labels.

Labels come from an external executor (compile and run a timing harness,
read ``KERNEL_TIME_US=<number>`` from stdout) or from the synthetic
labeler, an analytic cost over the weighted Child edges. Points are stored as
JSON Lines, one DataPoint per line with the graph inlined.
"""

import logging
import math
import os
import re
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.preprocessing import MinMaxScaler

from .config import (
    PARAGRAPH_DEFAULT_TRIP,
    PARAGRAPH_JOBS,
    PARAGRAPH_PLATFORM,
    PARAGRAPH_SYNTHETIC_SIGMA,
    get_executor_config,
)
from .errors import DatasetError, InputError, MeasureError, ParaGraphError, SchemaError, VariantError
from .frontend import NODE_KINDS, parse_source
from .jsonio import read_json, read_jsonl, write_jsonl
from .kernels import CATALOG
from .paragraph import (
    EdgeType, ParaGraph, ParamBindings, build_paragraph, convert_mode, paragraph_from_json, paragraph_to_json,
)
from .variantgen import KernelSpec, KernelVariant, VariantKind, harness_source, kernel_spec_from_dict

logger = logging.getLogger(__name__)

DATASET_SCHEMA_VERSION = 1
MANIFEST_SCHEMA_VERSION = 1

_MARKER_RE = re.compile(r"KERNEL_TIME_US=\s*([^\s]+)")

# Per-node cost of reaching a node of this kind once; memory accesses and calls
# are dearer than casts and literals
DEFAULT_KIND_COSTS: Dict[str, float] = {
    "TranslationUnit": 0.0,
    "FunctionDecl": 0.5,
    "ParmVarDecl": 0.5,
    "CompoundStmt": 0.25,
    "DeclStmt": 0.5,
    "VarDecl": 1.0,
    "BinaryOperator": 2.0,
    "UnaryOperator": 1.0,
    "ImplicitCastExpr": 0.5,
    "IntegerLiteral": 0.5,
    "FloatingLiteral": 0.5,
    "DeclRefExpr": 1.0,
    "ArraySubscriptExpr": 4.0,
    "CallExpr": 8.0,
    "ForStmt": 1.0,
    "WhileStmt": 1.0,
    "IfStmt": 1.0,
    "ReturnStmt": 0.5,
    "OmpDirective": 2.0,
}

KIND_INDEX = {kind.value: index for index, kind in enumerate(NODE_KINDS)}


@dataclass(frozen=True)
class DataPoint:
    graph: ParaGraph
    app_name: str
    variant_kind: str
    runtime_us: float
    platform_tag: str = PARAGRAPH_PLATFORM
    kernel_name: str = ""
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not (self.runtime_us > 0 and math.isfinite(self.runtime_us)):
            raise DatasetError(f"runtime_us must be positive and finite, got {self.runtime_us!r}")

    @property
    def runtime_ms(self) -> float:
        return self.runtime_us / 1000.0


@dataclass(frozen=True)
class Split:
    train: Tuple[int, ...]
    val: Tuple[int, ...]
    seed: int


@dataclass(frozen=True)
class ExecutorConfig:
    compile: str
    run: str
    timeout_s: int = 300
    retries: int = 2

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]] = None) -> "ExecutorConfig":
        config = get_executor_config(data)
        return cls(config["compile"], config["run"], int(config["timeout_s"]), int(config["retries"]))


# ---------------------------------------------------------------------------
# Scaling
# ---------------------------------------------------------------------------

class _Quantity:
    """One min/max-scaled quantity; a degenerate range scales everything to 0."""

    def __init__(self, lo: float, hi: float):
        self.lo = float(lo)
        self.hi = float(hi)
        self._scaler = MinMaxScaler(clip=True).fit(np.array([[self.lo], [self.hi]]))

    @classmethod
    def fit(cls, values: Sequence[float]) -> "_Quantity":
        array = np.asarray(values, dtype=np.float64)
        if array.size == 0:
            raise DatasetError("cannot fit a scaler on no values")
        return cls(array.min(), array.max())

    @property
    def degenerate(self) -> bool:
        return not self.hi > self.lo

    def transform(self, values: Union[Sequence[float], np.ndarray]) -> np.ndarray:
        array = np.asarray(values, dtype=np.float64).reshape(-1, 1)
        if self.degenerate:
            return np.zeros(array.shape[0])
        return self._scaler.transform(array).ravel()

    def inverse(self, values: Union[Sequence[float], np.ndarray]) -> np.ndarray:
        array = np.asarray(values, dtype=np.float64).reshape(-1, 1)
        if self.degenerate:
            return np.full(array.shape[0], self.lo)
        return array.ravel() * (self.hi - self.lo) + self.lo


@dataclass
class Scaler:
    weight: _Quantity
    teams: _Quantity
    threads: _Quantity
    target: _Quantity
    mode: str = "paragraph"

    QUANTITIES = ("weight", "teams", "threads", "target")

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {name: [getattr(self, name).lo, getattr(self, name).hi] for name in self.QUANTITIES}
        out["mode"] = self.mode
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Scaler":
        try:
            return cls(*(_Quantity(*data[name]) for name in cls.QUANTITIES), mode=str(data.get("mode", "paragraph")))
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"malformed scaler: {e}") from e


@dataclass(frozen=True)
class ScaledGraph:
    """Model input: kind ids, typed edges, scaled weights and features, scaled target."""

    kinds: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    etype: np.ndarray
    weight: np.ndarray
    features: np.ndarray
    target: float = 0.0
    runtime_us: float = 0.0
    app_name: str = ""

    @property
    def num_nodes(self) -> int:
        return int(self.kinds.shape[0])


@dataclass
class Dataset:
    points: List[DataPoint]
    scaler: Optional[Scaler] = None

    def __len__(self) -> int:
        return len(self.points)


def _child_weights(graph: ParaGraph) -> List[float]:
    return [float(edge.weight) for edge in graph.edges if edge.etype == EdgeType.CHILD]


def fit_scaler(points: Sequence[DataPoint], indices: Optional[Iterable[int]] = None, mode: str = "paragraph") -> Scaler:
    """Fit per-quantity min/max on the given (training) points only."""
    chosen = [points[i] for i in indices] if indices is not None else list(points)
    if not chosen:
        raise DatasetError("fit_scaler needs at least one point")
    weights: List[float] = []
    for point in chosen:
        weights.extend(_child_weights(convert_mode(point.graph, mode)))
    scaler = Scaler(
        weight=_Quantity.fit(weights),
        teams=_Quantity.fit([p.graph.num_teams for p in chosen]),
        threads=_Quantity.fit([p.graph.num_threads for p in chosen]),
        target=_Quantity.fit([p.runtime_us for p in chosen]),
        mode=mode,
    )
    logger.debug(f"[DATASET] scaler fitted on {len(chosen)} points: {scaler.to_dict()}")
    return scaler


def scale_graph(graph: ParaGraph, scaler: Scaler, runtime_us: float = 0.0, app_name: str = "") -> ScaledGraph:
    graph = convert_mode(graph, scaler.mode)
    edges = graph.edges
    etype = np.fromiter((int(e.etype) for e in edges), dtype=np.int64, count=len(edges))
    raw = np.fromiter((float(e.weight) for e in edges), dtype=np.float64, count=len(edges))
    weight = np.zeros(len(edges))
    child = etype == int(EdgeType.CHILD)
    if child.any():
        weight[child] = scaler.weight.transform(raw[child])
    try:
        kinds = np.fromiter((KIND_INDEX[node.kind] for node in graph.nodes), dtype=np.int64, count=len(graph.nodes))
    except KeyError as e:
        raise SchemaError(f"unknown node kind {e}") from e
    features = np.array([
        scaler.teams.transform([graph.num_teams])[0],
        scaler.threads.transform([graph.num_threads])[0],
    ])
    target = float(scaler.target.transform([runtime_us])[0]) if runtime_us > 0 else 0.0
    return ScaledGraph(
        kinds=kinds,
        src=np.fromiter((e.src for e in edges), dtype=np.int64, count=len(edges)),
        dst=np.fromiter((e.dst for e in edges), dtype=np.int64, count=len(edges)),
        etype=etype,
        weight=weight,
        features=features,
        target=target,
        runtime_us=runtime_us,
        app_name=app_name,
    )


def apply_scaler(point: DataPoint, scaler: Scaler) -> ScaledGraph:
    return scale_graph(point.graph, scaler, point.runtime_us, point.app_name)


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

def validation_size(n: int) -> int:
    """round(0.1 * n) with halves rounded up."""
    return (n + 5) // 10


def split_dataset(points: Sequence[Any], seed: int) -> Split:
    """Seeded 9:1 train/validation split."""
    n = len(points)
    if n < 10:
        raise DatasetError(f"need at least 10 points to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_val = validation_size(n)
    return Split(
        train=tuple(int(i) for i in order[: n - n_val]),
        val=tuple(int(i) for i in order[n - n_val:]),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Labels
# ---------------------------------------------------------------------------

def parallel_factor(teams: int, threads: int) -> float:
    return math.sqrt(teams) * (1.0 + 0.05 * math.log2(threads))


def synthetic_label(
    graph: ParaGraph,
    noise_seed: Any = 0,
    sigma: float = PARAGRAPH_SYNTHETIC_SIGMA,
    kind_costs: Optional[Mapping[str, float]] = None,
) -> float:
    """Analytic runtime in microseconds: weighted kind costs over the parallel factor, times lognormal noise."""
    costs = dict(DEFAULT_KIND_COSTS)
    costs.update(kind_costs or {})
    kinds = {node.id: node.kind for node in graph.nodes}
    total = math.fsum(
        float(edge.weight) * costs.get(kinds[edge.dst], 1.0)
        for edge in graph.edges
        if edge.etype == EdgeType.CHILD
    )
    if total <= 0:
        raise DatasetError("synthetic cost is zero; graph has no costed Child edges")
    noise = 1.0
    if sigma:
        noise = math.exp(sigma * float(np.random.default_rng(noise_seed).standard_normal()))
    return total / parallel_factor(graph.num_teams, graph.num_threads) * noise


def _format(template: str, values: Mapping[str, Any]) -> List[str]:
    try:
        return shlex.split(template.format(**values))
    except (KeyError, IndexError) as e:
        raise InputError(f"executor template '{template}' uses an unknown placeholder {e}") from e


def parse_runtime(stdout: str) -> float:
    matches = _MARKER_RE.findall(stdout)
    if not matches:
        raise MeasureError("parse", "no KERNEL_TIME_US marker in run output")
    try:
        value = float(matches[-1])
    except ValueError:
        raise MeasureError("parse", f"marker value {matches[-1]!r} is not a number")
    if not (value > 0 and math.isfinite(value)):
        raise MeasureError("parse", f"marker value {matches[-1]!r} is not a positive runtime")
    return value


def _run(argv: List[str], stage: str, timeout_s: int, cwd: str) -> subprocess.CompletedProcess:
    try:
        result = subprocess.run(argv, capture_output=True, text=True, timeout=timeout_s, cwd=cwd)
    except subprocess.TimeoutExpired as e:
        stderr = e.stderr.decode(errors="replace") if isinstance(e.stderr, bytes) else (e.stderr or "")
        raise MeasureError("timeout", f"{stage} exceeded {timeout_s}s", stderr)
    except OSError as e:
        raise MeasureError(stage, f"cannot execute {argv[0]!r}: {e}")
    if result.returncode != 0:
        raise MeasureError(stage, f"exit status {result.returncode}", result.stderr)
    return result


def measure_runtime(
    variant: KernelVariant,
    executor: Union[ExecutorConfig, Mapping[str, Any]],
    spec: Optional[KernelSpec] = None,
    workdir: Optional[str] = None,
) -> float:
    """Compile and run the variant's timing harness; returns the reported runtime in microseconds."""
    if not isinstance(executor, ExecutorConfig):
        executor = ExecutorConfig.from_dict(executor)
    spec = spec or CATALOG.get(variant.kernel_name)
    if spec is None:
        raise VariantError(f"no kernel spec for '{variant.kernel_name}'; cannot build a timing harness "
                           f"for {variant.file_stem}")
    harness = harness_source(spec, variant)

    with tempfile.TemporaryDirectory(prefix="paragraph-", dir=workdir) as tmp:
        source_path = os.path.join(tmp, "kernel.c")
        harness_path = os.path.join(tmp, "harness.c")
        with open(source_path, "w", encoding="utf-8") as handle:
            handle.write(variant.source)
        with open(harness_path, "w", encoding="utf-8") as handle:
            handle.write(harness)
        values = {
            "source": source_path,
            "harness": harness_path,
            "binary": os.path.join(tmp, "kernel.bin"),
            "workdir": tmp,
            "teams": variant.num_teams,
            "threads": variant.num_threads,
            "kind": variant.kind.value,
        }
        if executor.compile.strip():
            _run(_format(executor.compile, values), "compile", executor.timeout_s, tmp)

        attempts = executor.retries + 1
        for attempt in range(1, attempts + 1):
            try:
                result = _run(_format(executor.run, values), "run", executor.timeout_s, tmp)
                return parse_runtime(result.stdout)
            except MeasureError as e:
                if e.stage == "parse" or attempt == attempts:
                    raise
                logger.warning(f"[MEASURE] {variant.file_stem}: {e} (attempt {attempt}/{attempts}); retrying")
    raise MeasureError("run", "no attempts made")  # pragma: no cover


# ---------------------------------------------------------------------------
# Labelers
# ---------------------------------------------------------------------------

Labeler = Callable[[KernelVariant, ParaGraph, int], float]


def synthetic_labeler(seed: int, sigma: float = PARAGRAPH_SYNTHETIC_SIGMA,
                      kind_costs: Optional[Mapping[str, float]] = None) -> Labeler:
    def label(variant: KernelVariant, graph: ParaGraph, index: int) -> float:
        return synthetic_label(graph, noise_seed=[seed, index], sigma=sigma, kind_costs=kind_costs)
    return label


def executor_labeler(executor: Union[ExecutorConfig, Mapping[str, Any]], workdir: Optional[str] = None,
                     specs: Optional[Mapping[str, KernelSpec]] = None) -> Labeler:
    """Label by measurement; specs (usually from load_manifest_specs) take precedence over the catalog."""
    config = executor if isinstance(executor, ExecutorConfig) else ExecutorConfig.from_dict(executor)
    known = dict(specs or {})

    def label(variant: KernelVariant, graph: ParaGraph, index: int) -> float:
        return measure_runtime(variant, config, spec=known.get(variant.kernel_name), workdir=workdir)
    return label


# ---------------------------------------------------------------------------
# Building, loading, saving
# ---------------------------------------------------------------------------

def point_to_record(point: DataPoint) -> Dict[str, Any]:
    return {
        "schema_version": DATASET_SCHEMA_VERSION,
        "app_name": point.app_name,
        "kernel_name": point.kernel_name,
        "variant_kind": point.variant_kind,
        "runtime_us": point.runtime_us,
        "platform": point.platform_tag,
        "params": dict(point.params),
        "graph": paragraph_to_json(point.graph),
    }


def point_from_record(record: Mapping[str, Any]) -> DataPoint:
    if not isinstance(record, Mapping):
        raise SchemaError("dataset record must be a JSON object")
    if record.get("schema_version") != DATASET_SCHEMA_VERSION:
        raise SchemaError(f"unsupported dataset schema_version {record.get('schema_version')}")
    try:
        return DataPoint(
            graph=paragraph_from_json(record["graph"]),
            app_name=str(record["app_name"]),
            variant_kind=str(record["variant_kind"]),
            runtime_us=float(record["runtime_us"]),
            platform_tag=str(record.get("platform", PARAGRAPH_PLATFORM)),
            kernel_name=str(record.get("kernel_name", "")),
            params=dict(record.get("params", {})),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"malformed dataset record: {e}") from e
    except DatasetError as e:
        raise SchemaError(f"invalid dataset record: {e}") from e


def save_dataset(path: str, points: Iterable[DataPoint]) -> int:
    return write_jsonl(path, (point_to_record(point) for point in points))


def load_dataset(path: str, exclude_apps: Iterable[str] = ()) -> List[DataPoint]:
    """Read a JSONL dataset, dropping points of excluded applications."""
    excluded = set(exclude_apps)
    points = [point_from_record(record) for record in read_jsonl(path)]
    kept = [point for point in points if point.app_name not in excluded]
    if excluded:
        logger.info(f"[DATASET] excluded {len(points) - len(kept)} points of {sorted(excluded)}")
    logger.info(f"[DATASET] loaded {len(kept)} points from {path}")
    return kept


def _read_manifest(variant_dir: str) -> Mapping[str, Any]:
    manifest = read_json(os.path.join(variant_dir, "manifest.json"))
    if not isinstance(manifest, Mapping) or manifest.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise SchemaError(f"{variant_dir}/manifest.json has an unsupported schema")
    return manifest


def load_manifest_specs(variant_dir: str) -> Dict[str, KernelSpec]:
    """Kernel specs stored with the variants, keyed by kernel name."""
    kernels = _read_manifest(variant_dir).get("kernels", {})
    if not isinstance(kernels, Mapping):
        raise SchemaError("malformed variant manifest: 'kernels' must be an object")
    return {str(name): kernel_spec_from_dict(data, base_dir=variant_dir) for name, data in kernels.items()}


def load_manifest(variant_dir: str) -> List[Tuple[str, KernelVariant]]:
    manifest = _read_manifest(variant_dir)
    entries = []
    try:
        for entry in manifest["variants"]:
            path = os.path.join(variant_dir, entry["file"])
            with open(path, "r", encoding="utf-8") as handle:
                source = handle.read()
            entries.append((entry["file"], KernelVariant(
                kind=VariantKind(entry["kind"]),
                source=source,
                params=dict(entry["params"]),
                kernel_name=str(entry.get("kernel_name", "")),
                app_name=str(entry.get("app_name", entry.get("kernel_name", ""))),
            )))
    except (KeyError, TypeError, ValueError, OSError) as e:
        raise SchemaError(f"malformed variant manifest: {e}") from e
    return entries


def variant_graph(variant: KernelVariant, bindings: Optional[Mapping[str, int]] = None,
                  default_trip: int = PARAGRAPH_DEFAULT_TRIP) -> ParaGraph:
    values = dict(bindings or {})
    values.update(variant.sizes)
    return build_paragraph(
        parse_source(variant.source),
        ParamBindings(values=values, default_trip=default_trip),
        num_teams=variant.num_teams,
        num_threads=variant.num_threads,
        mode="paragraph",
    )


def build_dataset(
    variant_dir: str,
    labeler: Labeler,
    out_path: str,
    bindings: Optional[Mapping[str, int]] = None,
    default_trip: int = PARAGRAPH_DEFAULT_TRIP,
    platform: str = PARAGRAPH_PLATFORM,
    jobs: int = PARAGRAPH_JOBS,
) -> Tuple[List[DataPoint], List[Dict[str, Any]]]:
    """Label every variant in a manifest and write the dataset in manifest order."""
    entries = load_manifest(variant_dir)

    def work(item: Tuple[int, Tuple[str, KernelVariant]]) -> Union[DataPoint, Dict[str, Any]]:
        index, (filename, variant) = item
        try:
            graph = variant_graph(variant, bindings, default_trip)
            runtime = labeler(variant, graph, index)
            return DataPoint(
                graph=graph,
                app_name=variant.app_name or variant.kernel_name,
                variant_kind=variant.kind.value,
                runtime_us=float(runtime),
                platform_tag=platform,
                kernel_name=variant.kernel_name,
                params=variant.params,
            )
        except ParaGraphError as e:
            logger.error(f"[MEASURE] {filename}: {e}")
            return {"file": filename, **e.to_record()}

    points: List[DataPoint] = []
    failures: List[Dict[str, Any]] = []
    # map() yields in submission order, so the main thread is the single ordered writer
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        for result in pool.map(work, enumerate(entries)):
            if isinstance(result, DataPoint):
                points.append(result)
            else:
                failures.append(result)

    save_dataset(out_path, points)
    failure_path = out_path + ".failures.jsonl"
    if failures:
        write_jsonl(failure_path, failures)
        logger.warning(f"[DATASET] {len(failures)} variants failed; see {failure_path}")
    elif os.path.exists(failure_path):
        os.remove(failure_path)
    logger.info(f"[DATASET] wrote {len(points)} points to {out_path}")
    return points, failures


def dataset_stats(points: Sequence[DataPoint]) -> Dict[str, Dict[str, float]]:
    """Per-platform point count, runtime range and standard deviation in milliseconds."""
    if not points:
        return {}
    frame = pd.DataFrame({
        "platform": [p.platform_tag for p in points],
        "runtime_ms": [p.runtime_ms for p in points],
    })
    grouped = frame.groupby("platform")["runtime_ms"].agg(
        count="count", min_ms="min", max_ms="max", std_ms=lambda s: float(np.std(s.to_numpy()))
    )
    return {
        platform: {
            "count": int(row["count"]),
            "min_ms": float(row["min_ms"]),
            "max_ms": float(row["max_ms"]),
            "std_ms": float(row["std_ms"]),
        }
        for platform, row in grouped.iterrows()
    }
