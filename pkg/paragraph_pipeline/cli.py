"""
Command-line entry point.

    parse     C file -> AST summary or AST JSON
    graph     C file -> ParaGraph JSON
    variants  kernel spec -> variant sources + manifest.json
    dataset   build (label variants) | stats
    train     dataset -> checkpoint
    eval      checkpoint + dataset -> metric report
    ablate    dataset -> raw/augmented/paragraph comparison
    predict   checkpoint + graph -> runtime in ms
    pipeline  every stage from one config file

Exit codes: 0 success, 1 usage error, 2 input error, 3 stage failure. Errors
are also written to stderr as one JSON line.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence

from . import __version__
from .config import (
    PARAGRAPH_DEFAULT_TRIP,
    PARAGRAPH_JOBS,
    PARAGRAPH_PLATFORM,
    PARAGRAPH_SEED,
    PARAGRAPH_SYNTHETIC_SIGMA,
    configure_logging,
    get_pipeline_config,
    load_config_file,
    load_executor_config,
    load_training_config,
)
from .dataset import (
    Dataset,
    build_dataset,
    dataset_stats,
    executor_labeler,
    load_dataset,
    load_manifest_specs,
    scale_graph,
    split_dataset,
    synthetic_labeler,
)
from .errors import ConfigError, InputError, ParaGraphError
from .evaluation import evaluate, report_to_csv, report_to_json, run_ablation
from .frontend import ast_to_json, parse_source
from .gnn import RgatModel, checkpoint_load, checkpoint_save, predict_runtime_us, save_curve_csv, train
from .jsonio import dumps, read_json, write_json
from .kernels import kernels_for
from .paragraph import ParaGraph, build_paragraph, graph_stats, paragraph_from_json, paragraph_to_json, parse_bindings
from .variantgen import (
    KernelSpec,
    enumerate_dataset_points,
    kernel_spec_to_dict,
    load_kernel_spec,
    variant_manifest_entry,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1


class UsageExit(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit status 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        sys.stderr.write(json.dumps({"error": "UsageError", "message": message}) + "\n")
        raise UsageExit(message)


# ---------------------------------------------------------------------------
# Pipeline configuration
# ---------------------------------------------------------------------------

@dataclass
class PipelineConfig:
    workdir: str
    kernels: List[str]
    grids: Dict[str, List[Any]]
    bindings: Dict[str, int] = field(default_factory=dict)
    default_trip: int = PARAGRAPH_DEFAULT_TRIP
    synthetic_seed: int = PARAGRAPH_SEED
    sigma: float = PARAGRAPH_SYNTHETIC_SIGMA
    executor: Optional[Dict[str, Any]] = None
    platform: str = PARAGRAPH_PLATFORM
    exclude_apps: List[str] = field(default_factory=list)
    training: Dict[str, Any] = field(default_factory=dict)
    ablate: bool = False

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]] = None, base_dir: str = ".") -> "PipelineConfig":
        config = get_pipeline_config(data)
        executor = config["executor"]
        if isinstance(executor, str):
            executor = load_executor_config(os.path.join(base_dir, executor))
        workdir = config["workdir"]
        if not os.path.isabs(workdir):
            workdir = os.path.join(base_dir, workdir)
        return cls(
            workdir=workdir,
            kernels=list(config["kernels"]),
            grids=config["grids"],
            bindings=dict(config["bindings"]),
            default_trip=int(config["default_trip"]),
            synthetic_seed=int(config["synthetic_seed"]),
            sigma=float(config["sigma"]),
            executor=executor,
            platform=str(config["platform"]),
            exclude_apps=list(config["exclude_apps"]),
            training=config["training"],
            ablate=bool(config["ablate"]),
        )

    @classmethod
    def from_file(cls, path: str) -> "PipelineConfig":
        return cls.from_dict(load_config_file(path), base_dir=os.path.dirname(os.path.abspath(path)))


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _size_entry(text: str) -> Any:
    """``64`` applies to every size parameter; ``N=64:M=32`` names them."""
    if "=" not in text:
        try:
            return int(text)
        except ValueError as e:
            raise ConfigError(f"size '{text}' must be an integer or NAME=VALUE pairs joined by ':'") from e
    entry = {}
    for pair in text.split(":"):
        name, _, value = pair.partition("=")
        try:
            entry[name.strip()] = int(value)
        except ValueError as e:
            raise ConfigError(f"size pair '{pair}' needs an integer value") from e
    return entry


def _read_text(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return handle.read()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from e


def _kernel_specs(names: Sequence[str]) -> List[KernelSpec]:
    specs = []
    for name in names:
        if os.path.exists(name):
            specs.append(load_kernel_spec(name))
        else:
            specs.extend(kernels_for([name]))
    return specs


def write_variants(specs: Sequence[KernelSpec], grids: Mapping[str, Sequence[Any]], out_dir: str) -> Dict[str, Any]:
    """Write one .c file per variant and a manifest listing the kernel specs and each (file, kind, params)."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for spec in specs:
        for variant in enumerate_dataset_points(spec, list(grids["sizes"]), list(grids["teams"]), list(grids["threads"])):
            filename = variant.file_stem + ".c"
            with open(os.path.join(out_dir, filename), "w", encoding="utf-8") as handle:
                handle.write(variant.source)
            entries.append(variant_manifest_entry(variant, filename))
    manifest = {
        "schema_version": 1,
        "kernels": {spec.kernel_name: kernel_spec_to_dict(spec) for spec in specs},
        "variants": entries,
    }
    write_json(os.path.join(out_dir, "manifest.json"), manifest)
    logger.info(f"[VARIANTS] wrote {len(entries)} variants to {out_dir}")
    return manifest


def _emit(args: argparse.Namespace, result: Mapping[str, Any], text: str) -> None:
    if args.json:
        sys.stdout.write(dumps(result))
    else:
        sys.stdout.write(text + "\n")


def _training_config(args: argparse.Namespace, path: Optional[str]) -> Dict[str, Any]:
    config = load_training_config(path)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.jobs is not None:
        config["jobs"] = args.jobs
    return config


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_parse(args: argparse.Namespace) -> int:
    ast = parse_source(_read_text(args.file))
    doc = ast_to_json(ast)
    if args.emit_ast:
        write_json(args.emit_ast, doc)
    summary = {"file": args.file, "nodes": len(ast.nodes), "terminals": len(ast.tokens)}
    message = f"{args.file}: {summary['nodes']} nodes, {summary['terminals']} terminals"
    _emit(args, doc if not args.emit_ast else summary, message)
    return EXIT_OK


def cmd_graph(args: argparse.Namespace) -> int:
    bindings = parse_bindings(args.bind, default_trip=args.default_trip)
    graph = build_paragraph(parse_source(_read_text(args.file)), bindings, args.teams, args.threads, args.mode)
    doc = paragraph_to_json(graph)
    if args.output:
        write_json(args.output, doc)
        _emit(args, graph_stats(graph), f"wrote {args.output}: {len(graph.nodes)} nodes, {len(graph.edges)} edges")
    else:
        sys.stdout.write(dumps(doc))
    return EXIT_OK


def cmd_variants(args: argparse.Namespace) -> int:
    grids = {
        "sizes": [_size_entry(size) for size in args.sizes],
        "teams": args.teams,
        "threads": args.threads,
    }
    manifest = write_variants(_kernel_specs(args.kernel), grids, args.output)
    _emit(args, {"variants": len(manifest["variants"]), "output": args.output},
          f"wrote {len(manifest['variants'])} variants to {args.output}")
    return EXIT_OK


def cmd_dataset_build(args: argparse.Namespace) -> int:
    if args.executor:
        labeler = executor_labeler(load_executor_config(args.executor), specs=load_manifest_specs(args.variants))
    else:
        seed = args.synthetic if args.synthetic is not None else (args.seed or 0)
        labeler = synthetic_labeler(seed, sigma=args.sigma)
    bindings = parse_bindings(args.bind, default_trip=args.default_trip)
    points, failures = build_dataset(
        args.variants, labeler, args.output,
        bindings=dict(bindings.values), default_trip=bindings.default_trip,
        platform=args.platform, jobs=args.jobs or PARAGRAPH_JOBS,
    )
    _emit(args, {"points": len(points), "failures": len(failures), "output": args.output},
          f"wrote {len(points)} points to {args.output} ({len(failures)} failures)")
    return EXIT_OK if points or not failures else 3


def cmd_dataset_stats(args: argparse.Namespace) -> int:
    stats = dataset_stats(load_dataset(args.data))
    lines = [
        f"{platform}: {row['count']} points, {row['min_ms']:.3f}-{row['max_ms']:.3f} ms, std {row['std_ms']:.3f} ms"
        for platform, row in stats.items()
    ]
    _emit(args, stats, "\n".join(lines) or "empty dataset")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = _training_config(args, args.config)
    points = load_dataset(args.data, exclude_apps=args.exclude_app)
    split = split_dataset(points, config["seed"])
    model, curve = train(RgatModel(config), Dataset(points), split, config)
    checkpoint_save(model, args.output)
    if args.curve:
        save_curve_csv(curve, args.curve)
    best = min((row["val_rmse_ms"] for row in curve), default=None)
    _emit(args, {"output": args.output, "epochs": len(curve), "best_val_rmse_ms": best, "curve": curve},
          f"wrote {args.output} (best val RMSE {best} ms)")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    model = checkpoint_load(args.model)
    report = evaluate(model, load_dataset(args.data, exclude_apps=args.exclude_app))
    doc = report_to_json(report)
    write_json(args.output, doc)
    if args.csv:
        report_to_csv(report, args.csv)
    _emit(args, doc, f"RMSE {report.rmse_ms:.4f} ms, normalized {report.norm_rmse}")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _training_config(args, args.config)
    result = run_ablation(load_dataset(args.data, exclude_apps=args.exclude_app), config, jobs=1)
    write_json(args.output, result)
    summary = {mode: row["final_val_rmse_ms"] for mode, row in result["modes"].items()}
    _emit(args, summary, " ".join(f"{mode}={value}" for mode, value in summary.items()))
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    model = checkpoint_load(args.model)
    stored = paragraph_from_json(read_json(args.graph))
    graph = ParaGraph(stored.nodes, stored.edges, args.teams, args.threads, stored.mode)
    runtime_us = float(predict_runtime_us(model, [scale_graph(graph, model.scaler)])[0])
    _emit(args, {"runtime_ms": runtime_us / 1000.0, "teams": args.teams, "threads": args.threads},
          f"{runtime_us / 1000.0:.6f}")
    return EXIT_OK


def run_pipeline(config: PipelineConfig, seed: Optional[int] = None, jobs: Optional[int] = None) -> Dict[str, Any]:
    """Run every stage, persisting each artifact under the work directory."""
    os.makedirs(config.workdir, exist_ok=True)
    training = dict(config.training)
    if seed is not None:
        training["seed"] = seed
    if jobs is not None:
        training["jobs"] = jobs
    synthetic_seed = seed if seed is not None else config.synthetic_seed

    variant_dir = os.path.join(config.workdir, "variants")
    logger.info(f"[PIPELINE] variants -> {variant_dir}")
    write_variants(_kernel_specs(config.kernels), config.grids, variant_dir)

    data_path = os.path.join(config.workdir, "dataset.jsonl")
    if config.executor is not None:
        labeler = executor_labeler(config.executor, workdir=config.workdir, specs=load_manifest_specs(variant_dir))
    else:
        labeler = synthetic_labeler(synthetic_seed, sigma=config.sigma)
    logger.info(f"[PIPELINE] dataset -> {data_path}")
    build_dataset(variant_dir, labeler, data_path, bindings=config.bindings, default_trip=config.default_trip,
                  platform=config.platform, jobs=training.get("jobs", PARAGRAPH_JOBS))

    points = load_dataset(data_path, exclude_apps=config.exclude_apps)
    model = RgatModel(training)
    split = split_dataset(points, model.config["seed"])
    model, curve = train(model, Dataset(points), split, model.config)
    model_path = os.path.join(config.workdir, "model.ckpt")
    checkpoint_save(model, model_path)
    save_curve_csv(curve, os.path.join(config.workdir, "curve.csv"))

    report = evaluate(model, [points[i] for i in split.val])
    report.extra = {"split": "val", "seed": split.seed}
    report_path = os.path.join(config.workdir, "report.json")
    write_json(report_path, report_to_json(report))
    report_to_csv(report, os.path.join(config.workdir, "report.csv"))

    summary = {
        "variants": variant_dir,
        "dataset": data_path,
        "points": len(points),
        "model": model_path,
        "report": report_path,
        "val_rmse_ms": report.rmse_ms,
        "val_norm_rmse": report.norm_rmse,
    }
    if config.ablate:
        ablation_path = os.path.join(config.workdir, "ablation.json")
        write_json(ablation_path, run_ablation(points, model.config))
        summary["ablation"] = ablation_path
    logger.info(f"[PIPELINE] done: {summary}")
    return summary


def cmd_pipeline(args: argparse.Namespace) -> int:
    config = PipelineConfig.from_file(args.config)
    summary = run_pipeline(config, seed=args.seed, jobs=args.jobs)
    _emit(args, summary, f"pipeline finished in {config.workdir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer")
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text!r} must be >= 1")
    return value


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="paragraph", description="ParaGraph runtime-prediction pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--json", action="store_true", help="Structured JSON on stdout")
    parser.add_argument("--jobs", type=_positive_int, default=None, help="Worker threads per stage")
    parser.add_argument("--seed", type=int, default=None, help="Seed for training, splitting and synthetic labels")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest="command", parser_class=ArgumentParser)
    sub.required = True

    p = sub.add_parser("parse", help="Parse a C file")
    p.add_argument("file")
    p.add_argument("--emit-ast", default=None, help="Write the AST JSON here")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("graph", help="Build a ParaGraph from a C file")
    p.add_argument("file")
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--teams", type=_positive_int, default=1)
    p.add_argument("--bind", default=None, help="Loop-bound bindings, e.g. N=1000,M=20")
    p.add_argument("--default-trip", type=_positive_int, default=PARAGRAPH_DEFAULT_TRIP)
    p.add_argument("--mode", choices=["raw", "aug", "para", "raw_ast", "augmented_ast", "paragraph"], default="para")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("variants", help="Generate OpenMP variants of a kernel")
    p.add_argument("kernel", nargs="+", help="Kernel spec file (JSON/YAML) or catalog kernel/app name")
    p.add_argument("--sizes", nargs="+", required=True)
    p.add_argument("--teams", nargs="+", type=_positive_int, required=True)
    p.add_argument("--threads", nargs="+", type=_positive_int, required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_variants)

    p = sub.add_parser("dataset", help="Build or inspect a dataset")
    dsub = p.add_subparsers(dest="dataset_command", parser_class=ArgumentParser)
    dsub.required = True
    b = dsub.add_parser("build", help="Label every variant of a manifest")
    b.add_argument("--variants", required=True)
    source = b.add_mutually_exclusive_group(required=True)
    source.add_argument("--executor", default=None, help="Executor config file")
    source.add_argument("--synthetic", type=int, default=None, metavar="SEED")
    b.add_argument("--sigma", type=float, default=PARAGRAPH_SYNTHETIC_SIGMA)
    b.add_argument("--platform", default=PARAGRAPH_PLATFORM)
    b.add_argument("--bind", default=None)
    b.add_argument("--default-trip", type=_positive_int, default=PARAGRAPH_DEFAULT_TRIP)
    b.add_argument("-o", "--output", required=True)
    b.set_defaults(func=cmd_dataset_build)
    s = dsub.add_parser("stats", help="Per-platform dataset statistics")
    s.add_argument("data")
    s.set_defaults(func=cmd_dataset_stats)

    p = sub.add_parser("train", help="Train a model")
    p.add_argument("data")
    p.add_argument("--config", default=None)
    p.add_argument("--curve", default=None, help="Write the per-epoch curve as CSV")
    p.add_argument("--exclude-app", action="append", default=[])
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Evaluate a checkpoint")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--csv", default=None)
    p.add_argument("--exclude-app", action="append", default=[])
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="Compare raw AST, augmented AST and ParaGraph")
    p.add_argument("data")
    p.add_argument("--config", default=None)
    p.add_argument("--exclude-app", action="append", default=[])
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("predict", help="Predict the runtime of one graph")
    p.add_argument("model")
    p.add_argument("graph")
    p.add_argument("--teams", type=_positive_int, required=True)
    p.add_argument("--threads", type=_positive_int, required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("pipeline", help="Run every stage from one config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageExit:
        return EXIT_USAGE
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except ParaGraphError as e:
        logger.error(f"[PIPELINE] {e}")
        sys.stderr.write(json.dumps(e.to_record(), sort_keys=True) + "\n")
        return e.exit_code
    except OSError as e:
        logger.error(f"[PIPELINE] {e}")
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e)}, sort_keys=True) + "\n")
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
