"""
ParaGraph construction.

A ParaGraph is the AST plus seven augmentation edge types, with execution-count
weights on the Child edges only:

    Child      parent -> child (weighted)
    NextToken  terminal -> next terminal in source order
    NextSib    child -> next child of the same parent
    Ref        DeclRefExpr -> its VarDecl/ParmVarDecl
    ForExec    init -> cond, cond -> body
    ForNext    body -> inc, inc -> cond
    ConTrue    if-cond -> then branch
    ConFalse   if-cond -> else branch

The weight of a Child edge is the execution context of its destination: 1 at
the top level, multiplied by the trip count inside a loop (divided by the
thread count for a statically scheduled parallel loop) and halved inside each
branch of an if statement.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction
from typing import Any, Dict, List, Mapping, Optional, Tuple

from .config import PARAGRAPH_DEFAULT_TRIP, VALID_MODES
from .errors import ConfigError, SchemaError, WeightError
from .frontend import Ast, AstNode, NodeKind

logger = logging.getLogger(__name__)

GRAPH_SCHEMA_VERSION = 1

MODE_ALIASES = {"raw": "raw_ast", "aug": "augmented_ast", "para": "paragraph"}


class EdgeType(IntEnum):
    CHILD = 0
    NEXT_TOKEN = 1
    NEXT_SIB = 2
    REF = 3
    FOR_EXEC = 4
    FOR_NEXT = 5
    CON_TRUE = 6
    CON_FALSE = 7

    @property
    def label(self) -> str:
        return EDGE_TYPE_NAMES[self]


EDGE_TYPE_NAMES = {
    EdgeType.CHILD: "Child",
    EdgeType.NEXT_TOKEN: "NextToken",
    EdgeType.NEXT_SIB: "NextSib",
    EdgeType.REF: "Ref",
    EdgeType.FOR_EXEC: "ForExec",
    EdgeType.FOR_NEXT: "ForNext",
    EdgeType.CON_TRUE: "ConTrue",
    EdgeType.CON_FALSE: "ConFalse",
}
NUM_EDGE_TYPES = len(EdgeType)


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    etype: EdgeType
    weight: Fraction = Fraction(0)

    @property
    def sort_key(self) -> Tuple[int, int, int]:
        return (self.src, self.dst, int(self.etype))


@dataclass(frozen=True)
class GraphNode:
    id: int
    kind: str
    token_text: str = ""


@dataclass(frozen=True)
class ParaGraph:
    nodes: Tuple[GraphNode, ...]
    edges: Tuple[Edge, ...]
    num_teams: int = 1
    num_threads: int = 1
    mode: str = "paragraph"

    @property
    def features(self) -> Dict[str, int]:
        return {"num_teams": self.num_teams, "num_threads": self.num_threads}

    def edges_of(self, etype: EdgeType) -> List[Edge]:
        return [edge for edge in self.edges if edge.etype == etype]

    def child_weights(self) -> Dict[Tuple[int, int], Fraction]:
        return {(e.src, e.dst): e.weight for e in self.edges if e.etype == EdgeType.CHILD}


@dataclass(frozen=True)
class ParamBindings:
    values: Mapping[str, int] = field(default_factory=dict)
    default_trip: int = PARAGRAPH_DEFAULT_TRIP

    def __post_init__(self):
        if int(self.default_trip) < 1:
            raise ConfigError(f"default_trip must be >= 1, got {self.default_trip}")
        for name, value in self.values.items():
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"binding {name}={value!r} must be a positive integer")

    def lookup(self, name: str) -> Optional[int]:
        return self.values.get(name)


def parse_bindings(text: Optional[str], default_trip: int = PARAGRAPH_DEFAULT_TRIP) -> ParamBindings:
    """Parse ``N=1000,M=20`` into bindings."""
    values: Dict[str, int] = {}
    for item in filter(None, (part.strip() for part in (text or "").split(","))):
        name, sep, raw = item.partition("=")
        if not sep or not name.strip():
            raise ConfigError(f"binding '{item}' must look like NAME=VALUE")
        try:
            values[name.strip()] = int(raw)
        except ValueError as e:
            raise ConfigError(f"binding '{item}' needs an integer value") from e
    return ParamBindings(values=values, default_trip=default_trip)


def normalize_mode(mode: str) -> str:
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in VALID_MODES:
        raise ConfigError(f"mode must be one of {VALID_MODES} (or raw/aug/para), got {mode!r}")
    return mode


# ---------------------------------------------------------------------------
# Augmentation edges
# ---------------------------------------------------------------------------

def add_next_token_edges(ast: Ast) -> List[Edge]:
    tokens = ast.tokens
    return [Edge(a, b, EdgeType.NEXT_TOKEN) for a, b in zip(tokens, tokens[1:])]


def add_next_sib_edges(ast: Ast) -> List[Edge]:
    edges: List[Edge] = []
    for node in ast.nodes:
        edges.extend(Edge(a, b, EdgeType.NEXT_SIB) for a, b in zip(node.children, node.children[1:]))
    return edges


def add_ref_edges(ast: Ast) -> List[Edge]:
    return [
        Edge(node.id, node.decl_ref, EdgeType.REF)
        for node in ast.nodes
        if node.kind == NodeKind.DECL_REF_EXPR and node.decl_ref is not None
    ]


def add_for_edges(ast: Ast) -> List[Edge]:
    """ForExec/ForNext edges for every ForStmt, plus the cond/body pair of every WhileStmt."""
    edges: List[Edge] = []
    for node in ast.nodes:
        if node.kind == NodeKind.FOR_STMT:
            init, cond, body, inc = node.children
            edges.extend((
                Edge(init, cond, EdgeType.FOR_EXEC),
                Edge(cond, body, EdgeType.FOR_EXEC),
                Edge(body, inc, EdgeType.FOR_NEXT),
                Edge(inc, cond, EdgeType.FOR_NEXT),
            ))
        elif node.kind == NodeKind.WHILE_STMT:
            cond, body = node.children
            edges.append(Edge(cond, body, EdgeType.FOR_EXEC))
            edges.append(Edge(body, cond, EdgeType.FOR_NEXT))
    return edges


def add_if_edges(ast: Ast) -> List[Edge]:
    edges: List[Edge] = []
    for node in ast.nodes:
        if node.kind != NodeKind.IF_STMT:
            continue
        cond, then_body = node.children[0], node.children[1]
        edges.append(Edge(cond, then_body, EdgeType.CON_TRUE))
        if len(node.children) == 3:
            edges.append(Edge(cond, node.children[2], EdgeType.CON_FALSE))
    return edges


# ---------------------------------------------------------------------------
# Trip counts
# ---------------------------------------------------------------------------

class _NotFoldable(Exception):
    def __init__(self, reason: str, symbol: Optional[str] = None):
        super().__init__(reason)
        self.symbol = symbol


def _strip_cast(ast: Ast, node_id: int) -> AstNode:
    node = ast.node(node_id)
    while node.kind == NodeKind.IMPLICIT_CAST_EXPR:
        node = ast.node(node.children[0])
    return node


def _fold(ast: Ast, node_id: int, bindings: ParamBindings) -> Fraction:
    node = _strip_cast(ast, node_id)
    if node.kind == NodeKind.INTEGER_LITERAL:
        return Fraction(int(node.token_text))
    if node.kind == NodeKind.DECL_REF_EXPR:
        value = bindings.lookup(node.token_text)
        if value is None:
            raise _NotFoldable(f"symbol '{node.token_text}' is not bound", node.token_text)
        return Fraction(value)
    if node.kind == NodeKind.UNARY_OPERATOR and node.spelling == "-":
        return -_fold(ast, node.children[0], bindings)
    if node.kind == NodeKind.BINARY_OPERATOR and node.spelling in ("+", "-", "*", "/"):
        lhs = _fold(ast, node.children[0], bindings)
        rhs = _fold(ast, node.children[1], bindings)
        if node.spelling == "+":
            return lhs + rhs
        if node.spelling == "-":
            return lhs - rhs
        if node.spelling == "*":
            return lhs * rhs
        if rhs == 0:
            raise _NotFoldable("division by zero in loop bound")
        # C integer division truncates toward zero
        return Fraction(int(lhs / rhs))
    raise _NotFoldable(f"{node.kind.value} is not a constant expression")


def _induction_var(ast: Ast, node_id: int) -> Optional[int]:
    """Declaration id referenced by an (optionally cast) DeclRefExpr, else None."""
    node = _strip_cast(ast, node_id)
    return node.decl_ref if node.kind == NodeKind.DECL_REF_EXPR else None


def _loop_init(ast: Ast, init: AstNode, bindings: ParamBindings) -> Tuple[int, Fraction]:
    if init.kind == NodeKind.DECL_STMT and len(init.children) == 1:
        decl = ast.node(init.children[0])
        if decl.kind == NodeKind.VAR_DECL and len(decl.children) == 1:
            return decl.id, _fold(ast, decl.children[0], bindings)
    if init.kind == NodeKind.BINARY_OPERATOR and init.spelling == "=":
        var = _induction_var(ast, init.children[0])
        if var is not None:
            return var, _fold(ast, init.children[1], bindings)
    raise _NotFoldable("loop initializer is not 'i = a'")


def _loop_step(ast: Ast, inc: AstNode, var: int, bindings: ParamBindings) -> Fraction:
    if inc.kind == NodeKind.UNARY_OPERATOR and _induction_var(ast, inc.children[0]) == var:
        if inc.spelling in ("++", "post++"):
            return Fraction(1)
        if inc.spelling in ("--", "post--"):
            return Fraction(-1)
    if inc.kind == NodeKind.BINARY_OPERATOR and _induction_var(ast, inc.children[0]) == var:
        if inc.spelling == "+=":
            return _fold(ast, inc.children[1], bindings)
        if inc.spelling == "-=":
            return -_fold(ast, inc.children[1], bindings)
        if inc.spelling == "=":
            rhs = _strip_cast(ast, inc.children[1])
            if rhs.kind == NodeKind.BINARY_OPERATOR and rhs.spelling in ("+", "-") \
                    and _induction_var(ast, rhs.children[0]) == var:
                step = _fold(ast, rhs.children[1], bindings)
                return step if rhs.spelling == "+" else -step
    raise _NotFoldable("loop increment is not a constant step of the induction variable")


def _canonical_trip(ast: Ast, for_node: AstNode, bindings: ParamBindings) -> int:
    init_id, cond_id, _, inc_id = for_node.children
    var, start = _loop_init(ast, ast.node(init_id), bindings)
    cond = ast.node(cond_id)
    if cond.kind != NodeKind.BINARY_OPERATOR or cond.spelling not in ("<", "<=", ">", ">="):
        raise _NotFoldable("loop condition is not a relational comparison")
    if _induction_var(ast, cond.children[0]) != var:
        raise _NotFoldable("loop condition does not test the induction variable")
    bound = _fold(ast, cond.children[1], bindings)
    step = _loop_step(ast, ast.node(inc_id), var, bindings)
    if cond.spelling in ("<", "<=") and step > 0:
        span, stride = bound - start, step
    elif cond.spelling in (">", ">=") and step < 0:
        span, stride = start - bound, -step
    else:
        raise _NotFoldable("loop step moves away from its bound")
    if cond.spelling in ("<", ">"):
        return math.ceil(span / stride)
    return math.floor(span / stride) + 1


def trip_count(ast: Ast, loop: AstNode, bindings: ParamBindings) -> Fraction:
    """Estimated iteration count of a ForStmt or WhileStmt; never below 1."""
    if loop.kind == NodeKind.WHILE_STMT:
        logger.debug(f"[PARAGRAPH] while-loop at line {loop.line} uses default trip {bindings.default_trip}")
        return Fraction(bindings.default_trip)
    if loop.kind != NodeKind.FOR_STMT:
        raise WeightError(f"trip_count needs a ForStmt or WhileStmt, got {loop.kind.value}")
    try:
        trips = _canonical_trip(ast, loop, bindings)
    except _NotFoldable as e:
        logger.warning(
            f"[PARAGRAPH] loop at line {loop.line}: {e}; using default trip {bindings.default_trip}"
        )
        return Fraction(bindings.default_trip)
    if trips < 1:
        logger.warning(f"[PARAGRAPH] loop at line {loop.line} computes {trips} iterations; clamped to 1")
        return Fraction(1)
    return Fraction(trips)


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------

def _is_static(directive: AstNode) -> bool:
    for name, argument in directive.clauses:
        if name == "schedule":
            return argument.replace(" ", "").lower().startswith("static")
    return True


def assign_weights(ast: Ast, bindings: ParamBindings, num_threads: int) -> Dict[Tuple[int, int], Fraction]:
    """Weight of every Child edge (parent, child), computed top-down from execution contexts."""
    if isinstance(num_threads, bool) or not isinstance(num_threads, int) or num_threads < 1:
        raise WeightError(f"num_threads must be a positive integer, got {num_threads!r}")

    weights: Dict[Tuple[int, int], Fraction] = {}
    # Loops whose iterations are shared among threads, mapped to their divided trip count
    divided: Dict[int, Fraction] = {}
    stack: List[Tuple[int, Fraction]] = [(ast.root, Fraction(1))]
    while stack:
        node_id, context = stack.pop()
        node = ast.node(node_id)
        child_contexts: List[Fraction]

        if node.kind == NodeKind.FOR_STMT:
            trips = divided.get(node.id)
            if trips is None:
                trips = trip_count(ast, node, bindings)
            inner = context * trips
            child_contexts = [context, inner, inner, inner]
        elif node.kind == NodeKind.WHILE_STMT:
            inner = context * trip_count(ast, node, bindings)
            child_contexts = [inner, inner]
        elif node.kind == NodeKind.IF_STMT:
            child_contexts = [context] + [context / 2] * (len(node.children) - 1)
        else:
            if node.kind == NodeKind.OMP_DIRECTIVE:
                _mark_parallel_loop(ast, node, bindings, num_threads, divided)
            child_contexts = [context] * len(node.children)

        for child, child_context in zip(node.children, child_contexts):
            weights[(node.id, child)] = child_context
        for child, child_context in reversed(list(zip(node.children, child_contexts))):
            stack.append((child, child_context))
    return weights


def _mark_parallel_loop(ast: Ast, directive: AstNode, bindings: ParamBindings, num_threads: int,
                        divided: Dict[int, Fraction]) -> None:
    loop = ast.node(directive.children[0])
    if loop.kind != NodeKind.FOR_STMT:
        return
    if not _is_static(directive):
        logger.debug(f"[PARAGRAPH] non-static schedule at line {directive.line}; iterations not divided")
        return
    # collapse(k) splits the fused n1*...*nk space once, but every inner loop still runs
    # its own trip count per outer iteration, so only the outermost count is divided
    divided[loop.id] = trip_count(ast, loop, bindings) / num_threads


# ---------------------------------------------------------------------------
# Graph assembly
# ---------------------------------------------------------------------------

def build_paragraph(
    ast: Ast,
    bindings: Optional[ParamBindings] = None,
    num_teams: int = 1,
    num_threads: int = 1,
    mode: str = "paragraph",
) -> ParaGraph:
    """Build the graph in one of the three representation modes."""
    mode = normalize_mode(mode)
    bindings = bindings or ParamBindings()
    if isinstance(num_teams, bool) or not isinstance(num_teams, int) or num_teams < 1:
        raise WeightError(f"num_teams must be a positive integer, got {num_teams!r}")

    if mode == "paragraph":
        weights = assign_weights(ast, bindings, num_threads)
    else:
        if isinstance(num_threads, bool) or not isinstance(num_threads, int) or num_threads < 1:
            raise WeightError(f"num_threads must be a positive integer, got {num_threads!r}")
        weights = {}

    edges = [
        Edge(node.id, child, EdgeType.CHILD, weights.get((node.id, child), Fraction(1)))
        for node in ast.nodes
        for child in node.children
    ]
    if mode != "raw_ast":
        edges += add_next_token_edges(ast)
        edges += add_next_sib_edges(ast)
        edges += add_ref_edges(ast)
        edges += add_for_edges(ast)
        edges += add_if_edges(ast)

    nodes = tuple(GraphNode(node.id, node.kind.value, node.token_text) for node in ast.nodes)
    graph = ParaGraph(
        nodes=nodes,
        edges=tuple(sorted(edges, key=lambda edge: edge.sort_key)),
        num_teams=num_teams,
        num_threads=num_threads,
        mode=mode,
    )
    logger.debug(f"[PARAGRAPH] built {mode} graph: {len(nodes)} nodes, {len(graph.edges)} edges")
    return graph


def convert_mode(graph: ParaGraph, mode: str) -> ParaGraph:
    """Derive the raw_ast or augmented_ast view of a stored graph."""
    mode = normalize_mode(mode)
    if mode == graph.mode:
        return graph
    if mode == "paragraph" or (mode == "augmented_ast" and graph.mode == "raw_ast"):
        raise ConfigError(f"cannot derive {mode} from a {graph.mode} graph")
    edges = []
    for edge in graph.edges:
        if edge.etype == EdgeType.CHILD:
            edges.append(Edge(edge.src, edge.dst, edge.etype, Fraction(1)))
        elif mode == "augmented_ast":
            edges.append(edge)
    return ParaGraph(graph.nodes, tuple(edges), graph.num_teams, graph.num_threads, mode)


def graph_stats(graph: ParaGraph) -> Dict[str, Any]:
    counts = {name: 0 for name in EDGE_TYPE_NAMES.values()}
    for edge in graph.edges:
        counts[edge.etype.label] += 1
    total = sum((edge.weight for edge in graph.edges if edge.etype == EdgeType.CHILD), Fraction(0))
    return {
        "nodes": len(graph.nodes),
        "edges": counts,
        "child_weight_total": float(total),
        "mode": graph.mode,
    }


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def paragraph_to_json(graph: ParaGraph) -> Dict[str, Any]:
    nodes = []
    for node in graph.nodes:
        entry: Dict[str, Any] = {"id": node.id, "kind": node.kind}
        if node.token_text:
            entry["text"] = node.token_text
        nodes.append(entry)
    edges = [
        {"src": e.src, "dst": e.dst, "type": int(e.etype), "w": float(e.weight)}
        for e in sorted(graph.edges, key=lambda edge: edge.sort_key)
    ]
    return {
        "schema_version": GRAPH_SCHEMA_VERSION,
        "mode": graph.mode,
        "edge_types": [EDGE_TYPE_NAMES[t] for t in EdgeType],
        "nodes": nodes,
        "edges": edges,
        "features": {"teams": graph.num_teams, "threads": graph.num_threads},
    }


def _weight_from_double(value: float) -> Fraction:
    """Weights are stored as doubles; small-denominator rationals are recovered exactly,
    anything else keeps the exact value of the double so tiny weights never round to 0."""
    exact = Fraction(value)
    simple = exact.limit_denominator(1_000_000)
    return simple if float(simple) == value else exact


def paragraph_from_json(doc: Mapping[str, Any]) -> ParaGraph:
    if not isinstance(doc, Mapping):
        raise SchemaError("graph document must be a JSON object")
    if doc.get("schema_version", GRAPH_SCHEMA_VERSION) != GRAPH_SCHEMA_VERSION:
        raise SchemaError(f"unsupported graph schema_version {doc.get('schema_version')}")
    try:
        nodes = tuple(GraphNode(int(n["id"]), str(n["kind"]), str(n.get("text", ""))) for n in doc["nodes"])
        features = doc["features"]
        teams, threads = int(features["teams"]), int(features["threads"])
        edges = []
        for e in doc["edges"]:
            weight = _weight_from_double(float(e["w"]))
            edges.append(Edge(int(e["src"]), int(e["dst"]), EdgeType(int(e["type"])), weight))
    except (KeyError, TypeError, ValueError, OverflowError) as e:
        raise SchemaError(f"malformed graph document: {e}") from e

    for index, node in enumerate(nodes):
        if node.id != index:
            raise SchemaError(f"graph node ids must be dense and ordered; got {node.id} at position {index}")
    for edge in edges:
        if not (0 <= edge.src < len(nodes) and 0 <= edge.dst < len(nodes)):
            raise SchemaError(f"edge {edge.src}->{edge.dst} references an unknown node")
        if (edge.etype == EdgeType.CHILD) != (edge.weight > 0):
            raise SchemaError(f"edge {edge.src}->{edge.dst}: only Child edges carry a positive weight")
    if teams < 1 or threads < 1:
        raise SchemaError("graph features teams/threads must be positive")
    mode = str(doc.get("mode", "paragraph"))
    if mode not in VALID_MODES:
        raise SchemaError(f"unknown graph mode {mode!r}")
    return ParaGraph(nodes, tuple(sorted(edges, key=lambda edge: edge.sort_key)), teams, threads, mode)
