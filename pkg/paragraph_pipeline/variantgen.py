"""
Source-to-source generation of OpenMP kernel variants.

A serial kernel marks its outermost kernel loop with a ``// @kernel`` line.
Each variant replaces that marker with one directive:

    cpu               parallel for num_threads(T)
    cpu_collapse      parallel for collapse(2) num_threads(T)
    gpu               target teams distribute parallel for num_teams(G) num_threads(T)
    gpu_collapse      ... collapse(2) num_teams(G) num_threads(T)
    gpu_mem           gpu plus map clauses for the kernel's data arrays
    gpu_collapse_mem  gpu_collapse plus map clauses
"""

import itertools
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .config import load_config_file
from .errors import ConfigError, InputError, SchemaError, VariantError
from .frontend import Ast, AstNode, NodeKind, find_nodes, parse_source, subtree_ids

logger = logging.getLogger(__name__)

KERNEL_MARKER = "// @kernel"
DIRECTIONS = ("to", "from", "tofrom")

SizeEntry = Union[int, Mapping[str, int]]


class VariantKind(str, Enum):
    CPU = "cpu"
    CPU_COLLAPSE = "cpu_collapse"
    GPU = "gpu"
    GPU_COLLAPSE = "gpu_collapse"
    GPU_MEM = "gpu_mem"
    GPU_COLLAPSE_MEM = "gpu_collapse_mem"

    @property
    def needs_collapse(self) -> bool:
        return "collapse" in self.value

    @property
    def is_gpu(self) -> bool:
        return self.value.startswith("gpu")

    @property
    def maps_data(self) -> bool:
        return self.value.endswith("_mem")


@dataclass(frozen=True)
class DataArray:
    name: str
    element_type: str
    extent: Tuple[str, ...]
    direction: str = "tofrom"

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise SchemaError(f"array '{self.name}' direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if not self.extent:
            raise SchemaError(f"array '{self.name}' needs at least one extent")

    @property
    def section(self) -> str:
        return self.name + "".join(f"[0:{dim}]" for dim in self.extent)


@dataclass(frozen=True)
class KernelSpec:
    source: str
    kernel_name: str
    loop_nest_depth: int = 1
    collapsible: bool = False
    data_arrays: Tuple[DataArray, ...] = ()
    app_name: str = ""
    size_params: Tuple[str, ...] = ("N",)

    def __post_init__(self):
        if self.loop_nest_depth < 1:
            raise VariantError(f"kernel '{self.kernel_name}': loop_nest_depth must be >= 1")
        if self.collapsible and self.loop_nest_depth < 2:
            raise VariantError(f"kernel '{self.kernel_name}': collapsible kernels need loop_nest_depth >= 2")

    @property
    def app(self) -> str:
        return self.app_name or self.kernel_name


@dataclass(frozen=True)
class KernelVariant:
    kind: VariantKind
    source: str
    params: Dict[str, Any] = field(default_factory=dict)
    kernel_name: str = ""
    app_name: str = ""

    @property
    def sizes(self) -> Dict[str, int]:
        return dict(self.params.get("sizes", {}))

    @property
    def num_teams(self) -> int:
        return int(self.params.get("num_teams", 1))

    @property
    def num_threads(self) -> int:
        return int(self.params.get("num_threads", 1))

    @property
    def file_stem(self) -> str:
        sizes = "_".join(f"{name}{value}" for name, value in sorted(self.sizes.items()))
        return f"{self.kernel_name}_{self.kind.value}_{sizes}_g{self.num_teams}_t{self.num_threads}"


# ---------------------------------------------------------------------------
# Analysis
# ---------------------------------------------------------------------------

def _loop_variable(ast: Ast, loop: AstNode) -> Optional[int]:
    init = ast.node(loop.children[0])
    if init.kind == NodeKind.DECL_STMT and init.children:
        return init.children[0]
    if init.kind == NodeKind.BINARY_OPERATOR and init.spelling == "=":
        lhs = ast.node(init.children[0])
        if lhs.kind == NodeKind.IMPLICIT_CAST_EXPR:
            lhs = ast.node(lhs.children[0])
        return lhs.decl_ref
    return None


def detect_collapsible(ast: Ast, kernel_loop: int) -> bool:
    """True iff the loop's body holds exactly one ForStmt whose header ignores the outer induction variable."""
    loop = ast.node(kernel_loop)
    if loop.kind != NodeKind.FOR_STMT:
        return False
    body = ast.node(loop.children[2])
    if body.kind != NodeKind.COMPOUND_STMT or len(body.children) != 1:
        return False
    inner = ast.node(body.children[0])
    if inner.kind != NodeKind.FOR_STMT:
        return False
    outer_var = _loop_variable(ast, loop)
    header = [inner.children[0], inner.children[1], inner.children[3]]
    for part in header:
        for node_id in subtree_ids(ast, part):
            if ast.node(node_id).decl_ref is not None and ast.node(node_id).decl_ref == outer_var:
                return False
    return True


def _marker_line(source: str) -> int:
    lines = [index for index, line in enumerate(source.splitlines()) if line.strip() == KERNEL_MARKER]
    if not lines:
        raise VariantError(f"kernel source has no '{KERNEL_MARKER}' marker line")
    if len(lines) > 1:
        raise VariantError(f"kernel source has {len(lines)} '{KERNEL_MARKER}' markers; expected one")
    return lines[0]


def find_kernel_loop(ast: Ast, source: str) -> AstNode:
    """The first ForStmt starting after the marker line."""
    marker = _marker_line(source) + 1
    candidates = [node for node in find_nodes(ast, NodeKind.FOR_STMT) if node.line > marker]
    if not candidates:
        raise VariantError(f"no for-loop follows the '{KERNEL_MARKER}' marker")
    return min(candidates, key=lambda node: (node.line, node.column))


def _parse_kernel(source: str, kernel_name: str) -> Ast:
    try:
        return parse_source(source)
    except InputError as e:
        raise VariantError(f"kernel '{kernel_name}' does not parse: {e}") from e


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def resolve_sizes(spec: KernelSpec, size: SizeEntry) -> Dict[str, int]:
    """Expand a size-grid entry into one value per size parameter."""
    if isinstance(size, Mapping):
        missing = [name for name in spec.size_params if name not in size]
        if missing:
            raise VariantError(f"size entry for '{spec.kernel_name}' is missing {missing}")
        return {name: int(size[name]) for name in spec.size_params}
    return {name: int(size) for name in spec.size_params}


def build_directive(spec: KernelSpec, kind: VariantKind, num_teams: int, num_threads: int) -> str:
    parts = ["#pragma omp"]
    parts.append("target teams distribute parallel for" if kind.is_gpu else "parallel for")
    if kind.needs_collapse:
        parts.append("collapse(2)")
    if kind.is_gpu:
        parts.append(f"num_teams({num_teams})")
    parts.append(f"num_threads({num_threads})")
    if kind.maps_data:
        parts.extend(f"map({array.direction}: {array.section})" for array in spec.data_arrays)
    return " ".join(parts)


def generate_variant(spec: KernelSpec, kind: Union[VariantKind, str], params: Mapping[str, Any]) -> KernelVariant:
    """Insert the directive for ``kind`` at the kernel marker."""
    kind = VariantKind(kind)
    if kind.needs_collapse and not spec.collapsible:
        raise VariantError(f"variant {kind.value} needs a collapsible loop nest; '{spec.kernel_name}' is not")

    num_threads = int(params.get("num_threads", 1))
    num_teams = int(params.get("num_teams", 1)) if kind.is_gpu else 1
    if num_threads < 1 or num_teams < 1:
        raise VariantError("num_teams and num_threads must be positive")
    sizes = dict(params.get("sizes") or {})

    marker = _marker_line(spec.source)
    lines = spec.source.splitlines()
    indent = lines[marker][: len(lines[marker]) - len(lines[marker].lstrip())]
    directive = build_directive(spec, kind, num_teams, num_threads)
    lines[marker] = indent + directive
    source = "\n".join(lines) + ("\n" if spec.source.endswith("\n") else "")

    ast = _parse_kernel(source, spec.kernel_name)
    directives = find_nodes(ast, NodeKind.OMP_DIRECTIVE)
    if len(directives) != 1:
        raise VariantError(f"variant {kind.value} of '{spec.kernel_name}' has {len(directives)} directives; expected 1")
    if kind.needs_collapse and not detect_collapsible(ast, directives[0].children[0]):
        raise VariantError(f"kernel '{spec.kernel_name}' is declared collapsible but its loop nest is not")

    logger.debug(f"[VARIANTS] {spec.kernel_name} {kind.value} teams={num_teams} threads={num_threads}")
    return KernelVariant(
        kind=kind,
        source=source,
        params={"sizes": sizes, "num_teams": num_teams, "num_threads": num_threads},
        kernel_name=spec.kernel_name,
        app_name=spec.app,
    )


def applicable_kinds(spec: KernelSpec) -> List[VariantKind]:
    return [kind for kind in VariantKind if spec.collapsible or not kind.needs_collapse]


def enumerate_dataset_points(
    spec: KernelSpec,
    size_grid: Sequence[SizeEntry],
    teams_grid: Sequence[int],
    threads_grid: Sequence[int],
) -> List[KernelVariant]:
    """Every applicable kind crossed with the grids; cpu kinds run with one team."""
    if not size_grid or not teams_grid or not threads_grid:
        return []
    points: List[KernelVariant] = []
    for kind in applicable_kinds(spec):
        teams = teams_grid if kind.is_gpu else [1]
        for size, num_teams, num_threads in itertools.product(size_grid, teams, threads_grid):
            params = {"sizes": resolve_sizes(spec, size), "num_teams": num_teams, "num_threads": num_threads}
            points.append(generate_variant(spec, kind, params))
    logger.info(f"[VARIANTS] {spec.kernel_name}: {len(points)} variants")
    return points


# ---------------------------------------------------------------------------
# Timing harness
# ---------------------------------------------------------------------------

def _element_type(type_name: str) -> str:
    return type_name.replace("const ", "").split("[", 1)[0].strip()


def _extents(type_name: str) -> List[str]:
    return [dim.rstrip("]") for dim in type_name.split("[")[1:]]


def harness_source(spec: KernelSpec, variant: KernelVariant) -> str:
    """A compilable program that times one kernel call and prints ``KERNEL_TIME_US=<us>``."""
    ast = _parse_kernel(variant.source, spec.kernel_name)
    functions = [node for node in find_nodes(ast, NodeKind.FUNCTION_DECL) if node.spelling == spec.kernel_name]
    if not functions:
        raise VariantError(f"kernel function '{spec.kernel_name}' not found in source")
    params = [ast.node(child) for child in functions[0].children if ast.node(child).kind == NodeKind.PARM_VAR_DECL]
    sizes = variant.sizes

    body: List[str] = []
    for name in spec.size_params:
        if name not in sizes:
            raise VariantError(f"variant of '{spec.kernel_name}' has no value for size '{name}'")
        body.append(f"    int {name} = {sizes[name]};")
    arrays: List[str] = []
    args: List[str] = []
    for param in params:
        extents = _extents(param.type_name)
        if extents:
            count = " * ".join(f"(size_t)({dim})" for dim in extents)
            body.append(f"    void *{param.spelling} = calloc({count}, sizeof({_element_type(param.type_name)}));")
            arrays.append(param.spelling)
            args.append(param.spelling)
        elif param.spelling in sizes:
            args.append(param.spelling)
        else:
            args.append("1")

    lines = [
        f"/* timing harness: {spec.kernel_name} {variant.kind.value} */",
        "#include <math.h>",
        "#include <stdio.h>",
        "#include <stdlib.h>",
        "#include <sys/time.h>",
        "",
        variant.source.rstrip("\n"),
        "",
        "int main(void) {",
        *body,
        "    struct timeval start, end;",
        "    gettimeofday(&start, NULL);",
        f"    {spec.kernel_name}({', '.join(args)});",
        "    gettimeofday(&end, NULL);",
        "    long long elapsed = (end.tv_sec - start.tv_sec) * 1000000LL + (end.tv_usec - start.tv_usec);",
        '    printf("KERNEL_TIME_US=%lld\\n", elapsed);',
        *(f"    free({name});" for name in arrays),
        "    return 0;",
        "}",
        "",
    ]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Kernel spec files
# ---------------------------------------------------------------------------

def kernel_spec_from_dict(data: Mapping[str, Any], base_dir: str = ".") -> KernelSpec:
    try:
        source = data.get("source")
        if source is None and "source_file" in data:
            with open(os.path.join(base_dir, data["source_file"]), "r", encoding="utf-8") as handle:
                source = handle.read()
        if not source:
            raise SchemaError("kernel spec needs 'source' or 'source_file'")
        arrays = []
        for entry in data.get("data_arrays", []):
            extent = entry["extent"]
            arrays.append(DataArray(
                name=str(entry["name"]),
                element_type=str(entry.get("type", entry.get("element_type", "double"))),
                extent=tuple(str(dim) for dim in (extent if isinstance(extent, list) else [extent])),
                direction=str(entry.get("direction", "tofrom")),
            ))
        return KernelSpec(
            source=source,
            kernel_name=str(data["kernel_name"]),
            loop_nest_depth=int(data.get("loop_nest_depth", 1)),
            collapsible=bool(data.get("collapsible", False)),
            data_arrays=tuple(arrays),
            app_name=str(data.get("app_name", "")),
            size_params=tuple(str(name) for name in data.get("size_params", ["N"])),
        )
    except (KeyError, TypeError, ValueError, OSError) as e:
        raise SchemaError(f"malformed kernel spec: {e}") from e


def kernel_spec_to_dict(spec: KernelSpec) -> Dict[str, Any]:
    return {
        "kernel_name": spec.kernel_name,
        "app_name": spec.app,
        "source": spec.source,
        "loop_nest_depth": spec.loop_nest_depth,
        "collapsible": spec.collapsible,
        "size_params": list(spec.size_params),
        "data_arrays": [
            {"name": a.name, "type": a.element_type, "extent": list(a.extent), "direction": a.direction}
            for a in spec.data_arrays
        ],
    }


def load_kernel_spec(path: str) -> KernelSpec:
    try:
        data = load_config_file(path)
    except ConfigError as e:
        raise SchemaError(str(e)) from e
    return kernel_spec_from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))


def variant_manifest_entry(variant: KernelVariant, filename: str) -> Dict[str, Any]:
    return {
        "file": filename,
        "kind": variant.kind.value,
        "kernel_name": variant.kernel_name,
        "app_name": variant.app_name,
        "params": variant.params,
    }
