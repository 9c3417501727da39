"""
Mini C front end.

Lexes and parses a C subset with OpenMP pragmas into an AST whose node kinds
mirror Clang's (TranslationUnit, FunctionDecl, ForStmt, DeclRefExpr, ...).
Variable references are resolved to their declarations while parsing.

The increment node of a for-loop is the Clang ``UnaryOperator``; some
drawings label it ``UnaryStmt``.
"""

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

from .errors import LexError, ParseError, SchemaError, UnresolvedRefError

logger = logging.getLogger(__name__)

AST_SCHEMA_VERSION = 1


class TokenKind(str, Enum):
    KEYWORD = "keyword"
    IDENTIFIER = "identifier"
    INTEGER = "integer-literal"
    FLOAT = "float-literal"
    PUNCTUATOR = "punctuator"
    PRAGMA = "pragma-line"


class NodeKind(str, Enum):
    TRANSLATION_UNIT = "TranslationUnit"
    FUNCTION_DECL = "FunctionDecl"
    PARM_VAR_DECL = "ParmVarDecl"
    COMPOUND_STMT = "CompoundStmt"
    DECL_STMT = "DeclStmt"
    VAR_DECL = "VarDecl"
    BINARY_OPERATOR = "BinaryOperator"
    UNARY_OPERATOR = "UnaryOperator"
    IMPLICIT_CAST_EXPR = "ImplicitCastExpr"
    INTEGER_LITERAL = "IntegerLiteral"
    FLOATING_LITERAL = "FloatingLiteral"
    DECL_REF_EXPR = "DeclRefExpr"
    ARRAY_SUBSCRIPT_EXPR = "ArraySubscriptExpr"
    CALL_EXPR = "CallExpr"
    FOR_STMT = "ForStmt"
    WHILE_STMT = "WhileStmt"
    IF_STMT = "IfStmt"
    RETURN_STMT = "ReturnStmt"
    OMP_DIRECTIVE = "OmpDirective"


# Stable vocabulary order; model embeddings index into it
NODE_KINDS: Tuple[NodeKind, ...] = tuple(NodeKind)

TYPE_KEYWORDS = ("int", "float", "double", "void")
KEYWORDS = frozenset(TYPE_KEYWORDS + ("const", "for", "while", "if", "else", "return"))
# Lexed as keywords so that using them is a clean parse error instead of an unresolved name
UNSUPPORTED_KEYWORDS = frozenset((
    "struct", "union", "enum", "typedef", "char", "short", "long", "unsigned", "signed",
    "switch", "case", "default", "break", "continue", "do", "goto", "sizeof", "static", "extern",
))

PUNCTUATORS = (
    "<<=", ">>=", "++", "--", "+=", "-=", "*=", "/=", "%=", "==", "!=", "<=", ">=", "&&", "||", "<<", ">>",
    "+", "-", "*", "/", "%", "<", ">", "=", "!", "&", "|", "^", "~", "?", ":", ";", ",", "(", ")", "{", "}", "[", "]",
)

_TOKEN_RE = re.compile(
    r"(?P<pragma>\#[ \t]*pragma[ \t]+omp\b(?:\\\r?\n|[^\n])*)"
    r"|(?P<comment>//[^\n]*|/\*.*?\*/)"
    r"|(?P<ws>\s+)"
    r"|(?P<float>(?:\d+\.\d*|\.\d+)(?:[eE][+-]?\d+)?[fF]?|\d+[eE][+-]?\d+[fF]?)"
    r"|(?P<int>\d+)"
    r"|(?P<ident>[A-Za-z_]\w*)"
    r"|(?P<punct>" + "|".join(re.escape(p) for p in PUNCTUATORS) + r")",
    re.DOTALL,
)

CONSTRUCTS = ("parallel for", "target teams distribute parallel for")
CLAUSE_NAMES = frozenset((
    "collapse", "num_teams", "num_threads", "thread_limit", "map", "schedule", "private",
    "firstprivate", "lastprivate", "shared", "reduction", "default", "nowait",
))
_CLAUSE_RE = re.compile(r"([A-Za-z_]\w*)\s*(\((?:[^()]|\([^()]*\))*\))?")

ASSIGN_OPS = ("=", "+=", "-=", "*=", "/=", "%=")
BINARY_PRECEDENCE = (
    ("||",),
    ("&&",),
    ("==", "!="),
    ("<", ">", "<=", ">="),
    ("+", "-"),
    ("*", "/", "%"),
)


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str
    line: int
    column: int


@dataclass(frozen=True)
class AstNode:
    id: int
    kind: NodeKind
    children: Tuple[int, ...] = ()
    token_text: str = ""
    decl_ref: Optional[int] = None
    directive_text: Optional[str] = None
    spelling: str = ""
    type_name: str = ""
    clauses: Tuple[Tuple[str, str], ...] = ()
    line: int = 0
    column: int = 0

    @property
    def is_terminal(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class Ast:
    nodes: Tuple[AstNode, ...]
    root: int = 0
    tokens: Tuple[int, ...] = ()

    def node(self, node_id: int) -> AstNode:
        return self.nodes[node_id]

    def __len__(self) -> int:
        return len(self.nodes)

    @cached_property
    def parents(self) -> Dict[int, int]:
        """Maps every non-root node id to its parent id."""
        return {child: node.id for node in self.nodes for child in node.children}


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

def tokenize(source: str) -> List[Token]:
    """Split C source into tokens; ``#pragma omp`` lines become one pragma-line token each."""
    tokens: List[Token] = []
    pos = 0
    line = 1
    line_start = 0
    length = len(source)
    while pos < length:
        match = _TOKEN_RE.match(source, pos)
        if match is None:
            raise LexError(f"unrecognized character {source[pos]!r}", line, pos - line_start + 1)
        kind = match.lastgroup
        text = match.group(0)
        column = pos - line_start + 1
        if kind == "pragma":
            directive = " ".join(text.replace("\\\r\n", " ").replace("\\\n", " ").split())
            directive = "#pragma omp" + directive.split("omp", 1)[1] if not directive.startswith("#pragma omp") else directive
            tokens.append(Token(TokenKind.PRAGMA, directive, line, column))
        elif kind == "float":
            tokens.append(Token(TokenKind.FLOAT, text, line, column))
        elif kind == "int":
            tokens.append(Token(TokenKind.INTEGER, text, line, column))
        elif kind == "ident":
            is_keyword = text in KEYWORDS or text in UNSUPPORTED_KEYWORDS
            tokens.append(Token(TokenKind.KEYWORD if is_keyword else TokenKind.IDENTIFIER, text, line, column))
        elif kind == "punct":
            tokens.append(Token(TokenKind.PUNCTUATOR, text, line, column))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            line_start = pos + text.rfind("\n") + 1
        pos = match.end()
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _Draft:
    """Mutable node used while parsing; frozen into AstNode with pre-order ids."""

    __slots__ = ("kind", "children", "text", "decl", "directive", "spelling", "type_name", "clauses", "line", "column")

    def __init__(self, kind: NodeKind, token: Token, children=None, text: str = "", spelling: str = ""):
        self.kind = kind
        self.children: List["_Draft"] = list(children or [])
        self.text = text
        self.decl: Optional["_Draft"] = None
        self.directive: Optional[str] = None
        self.spelling = spelling
        self.type_name = ""
        self.clauses: Tuple[Tuple[str, str], ...] = ()
        self.line = token.line
        self.column = token.column


def parse_directive(text: str) -> Tuple[str, Tuple[Tuple[str, str], ...]]:
    """Split a ``#pragma omp`` line into its construct words and ordered clause list."""
    body = text.split("omp", 1)[1].strip() if "omp" in text else ""
    words: List[str] = []
    clauses: List[Tuple[str, str]] = []
    for match in _CLAUSE_RE.finditer(body):
        name, args = match.group(1), match.group(2)
        if not clauses and args is None and name not in CLAUSE_NAMES:
            words.append(name)
            continue
        argument = " ".join(args[1:-1].split()) if args else ""
        clauses.append((name, argument))
    return " ".join(words), tuple(clauses)


class Parser:
    """Recursive descent parser producing a Clang-shaped AST."""

    def __init__(self, tokens: Sequence[Token]):
        self._tokens = list(tokens)
        self._pos = 0
        self._scopes: List[Dict[str, _Draft]] = [{}]

    # -- token helpers -----------------------------------------------------

    def _peek(self, offset: int = 0) -> Optional[Token]:
        index = self._pos + offset
        return self._tokens[index] if index < len(self._tokens) else None

    def _at(self, text: str, offset: int = 0) -> bool:
        token = self._peek(offset)
        return token is not None and token.text == text and token.kind in (TokenKind.PUNCTUATOR, TokenKind.KEYWORD)

    def _advance(self) -> Token:
        token = self._peek()
        if token is None:
            self._error("more input")
        self._pos += 1
        return token

    def _expect(self, text: str) -> Token:
        if not self._at(text):
            self._error(f"'{text}'")
        return self._advance()

    def _expect_identifier(self) -> Token:
        token = self._peek()
        if token is None or token.kind != TokenKind.IDENTIFIER:
            self._error("identifier")
        return self._advance()

    def _error(self, expected: str):
        token = self._peek()
        if token is None:
            last = self._tokens[-1] if self._tokens else Token(TokenKind.PUNCTUATOR, "", 1, 1)
            raise ParseError(expected, "end of input", last.line, last.column + len(last.text))
        raise ParseError(expected, token.text, token.line, token.column)

    # -- scopes ------------------------------------------------------------

    def _declare(self, name: str, decl: _Draft) -> None:
        self._scopes[-1][name] = decl

    def _resolve(self, token: Token) -> _Draft:
        for scope in reversed(self._scopes):
            if token.text in scope:
                return scope[token.text]
        raise UnresolvedRefError(token.text, token.line, token.column)

    # -- top level ---------------------------------------------------------

    def parse(self) -> _Draft:
        first = self._peek() or Token(TokenKind.PUNCTUATOR, "", 1, 1)
        unit = _Draft(NodeKind.TRANSLATION_UNIT, first)
        while self._peek() is not None:
            if self._is_function_start():
                unit.children.append(self._function())
            else:
                unit.children.extend(self._declaration(global_scope=True))
        return unit

    def _is_function_start(self) -> bool:
        offset = 1 if self._at("const") else 0
        token = self._peek(offset + 1)
        return token is not None and token.kind == TokenKind.IDENTIFIER and self._at("(", offset + 2)

    def _type(self) -> str:
        qualifier = ""
        if self._at("const"):
            self._advance()
            qualifier = "const "
        token = self._peek()
        if token is None or token.kind != TokenKind.KEYWORD or token.text not in TYPE_KEYWORDS:
            self._error("type name (int, float, double or void)")
        return qualifier + self._advance().text

    def _extents(self) -> str:
        suffix = ""
        while self._at("["):
            self._advance()
            parts: List[str] = []
            while not self._at("]"):
                token = self._advance()
                if token.kind == TokenKind.IDENTIFIER:
                    self._resolve(token)
                parts.append(token.text)
            self._expect("]")
            suffix += "[" + "".join(parts) + "]"
        return suffix

    def _function(self) -> _Draft:
        return_type = self._type()
        name = self._expect_identifier()
        function = _Draft(NodeKind.FUNCTION_DECL, name, spelling=name.text)
        function.type_name = return_type
        self._expect("(")
        self._scopes.append({})
        if self._at("void") and self._at(")", 1):
            self._advance()
        elif not self._at(")"):
            while True:
                param_type = self._type()
                param_name = self._expect_identifier()
                param = _Draft(NodeKind.PARM_VAR_DECL, param_name, text=param_name.text, spelling=param_name.text)
                param.type_name = param_type + self._extents()
                self._declare(param_name.text, param)
                function.children.append(param)
                if not self._at(","):
                    break
                self._advance()
        self._expect(")")
        function.children.append(self._compound())
        self._scopes.pop()
        return function

    # -- statements --------------------------------------------------------

    def _compound(self) -> _Draft:
        brace = self._expect("{")
        block = _Draft(NodeKind.COMPOUND_STMT, brace)
        self._scopes.append({})
        while not self._at("}"):
            if self._peek() is None:
                self._error("'}'")
            block.children.append(self._block_item())
        self._expect("}")
        self._scopes.pop()
        if not block.children:
            block.text = "{}"
        return block

    def _starts_declaration(self) -> bool:
        token = self._peek()
        return token is not None and token.kind == TokenKind.KEYWORD and (token.text in TYPE_KEYWORDS or token.text == "const")

    def _block_item(self) -> _Draft:
        if self._starts_declaration():
            first = self._peek()
            stmt = _Draft(NodeKind.DECL_STMT, first)
            stmt.children.extend(self._declaration())
            return stmt
        return self._statement()

    def _declaration(self, global_scope: bool = False) -> List[_Draft]:
        base_type = self._type()
        decls: List[_Draft] = []
        while True:
            name = self._expect_identifier()
            decl = _Draft(NodeKind.VAR_DECL, name, spelling=name.text)
            decl.type_name = base_type + self._extents()
            if self._at("="):
                self._advance()
                decl.children.append(self._rvalue(self._assignment()))
            else:
                decl.text = name.text
            # A declaration is visible from its own initializer onwards, as in C
            self._declare(name.text, decl)
            decls.append(decl)
            if not self._at(","):
                break
            self._advance()
        self._expect(";")
        if global_scope:
            logger.debug(f"[FRONTEND] global declaration(s): {[d.spelling for d in decls]}")
        return decls

    def _statement(self) -> _Draft:
        token = self._peek()
        if token is None:
            self._error("statement")
        if token.kind == TokenKind.PRAGMA:
            return self._pragma()
        if token.kind == TokenKind.KEYWORD:
            if token.text == "for":
                return self._for()
            if token.text == "while":
                return self._while()
            if token.text == "if":
                return self._if()
            if token.text == "return":
                return self._return()
            if token.text in UNSUPPORTED_KEYWORDS:
                raise ParseError("supported statement", token.text, token.line, token.column,
                                 message=f"'{token.text}' is outside the supported C subset")
        if self._at("{"):
            return self._compound()
        expr = self._expression()
        self._expect(";")
        return expr

    def _pragma(self) -> _Draft:
        token = self._advance()
        construct, clauses = parse_directive(token.text)
        if construct not in CONSTRUCTS:
            raise ParseError("supported OpenMP construct", construct or token.text, token.line, token.column,
                             message=f"unsupported OpenMP construct '{construct}'")
        body = self._statement()
        if body.kind not in (NodeKind.FOR_STMT, NodeKind.COMPOUND_STMT):
            raise ParseError("for-loop or compound statement after directive", body.kind.value, body.line, body.column)
        directive = _Draft(NodeKind.OMP_DIRECTIVE, token, [body], spelling=construct)
        directive.directive = token.text
        directive.clauses = clauses
        return directive

    def _for(self) -> _Draft:
        keyword = self._expect("for")
        self._expect("(")
        self._scopes.append({})
        if self._starts_declaration():
            init = _Draft(NodeKind.DECL_STMT, self._peek())
            init.children.extend(self._declaration())
        else:
            if self._at(";"):
                self._error("loop initializer")
            init = self._expression()
            self._expect(";")
        if self._at(";"):
            self._error("loop condition")
        cond = self._rvalue(self._expression())
        self._expect(";")
        if self._at(")"):
            self._error("loop increment")
        inc = self._expression()
        self._expect(")")
        body = self._statement()
        self._scopes.pop()
        # Stored as (init, cond, body, inc)
        return _Draft(NodeKind.FOR_STMT, keyword, [init, cond, body, inc])

    def _while(self) -> _Draft:
        keyword = self._expect("while")
        self._expect("(")
        cond = self._rvalue(self._expression())
        self._expect(")")
        body = self._statement()
        return _Draft(NodeKind.WHILE_STMT, keyword, [cond, body])

    def _if(self) -> _Draft:
        keyword = self._expect("if")
        self._expect("(")
        cond = self._rvalue(self._expression())
        self._expect(")")
        children = [cond, self._statement()]
        if self._at("else"):
            self._advance()
            children.append(self._statement())
        return _Draft(NodeKind.IF_STMT, keyword, children)

    def _return(self) -> _Draft:
        keyword = self._expect("return")
        stmt = _Draft(NodeKind.RETURN_STMT, keyword)
        if self._at(";"):
            stmt.text = "return"
        else:
            stmt.children.append(self._rvalue(self._expression()))
        self._expect(";")
        return stmt

    # -- expressions -------------------------------------------------------

    @staticmethod
    def _rvalue(expr: _Draft) -> _Draft:
        if expr.kind in (NodeKind.DECL_REF_EXPR, NodeKind.ARRAY_SUBSCRIPT_EXPR):
            cast = _Draft(NodeKind.IMPLICIT_CAST_EXPR, Token(TokenKind.PUNCTUATOR, "", expr.line, expr.column), [expr])
            return cast
        return expr

    def _expression(self) -> _Draft:
        return self._assignment()

    def _assignment(self) -> _Draft:
        lhs = self._binary(0)
        token = self._peek()
        if token is not None and token.kind == TokenKind.PUNCTUATOR and token.text in ASSIGN_OPS:
            if lhs.kind not in (NodeKind.DECL_REF_EXPR, NodeKind.ARRAY_SUBSCRIPT_EXPR):
                raise ParseError("assignable expression", lhs.kind.value, token.line, token.column)
            self._advance()
            rhs = self._assignment()
            return _Draft(NodeKind.BINARY_OPERATOR, token, [self._rvalue(lhs), self._rvalue(rhs)], spelling=token.text)
        return lhs

    def _binary(self, level: int) -> _Draft:
        if level == len(BINARY_PRECEDENCE):
            return self._unary()
        lhs = self._binary(level + 1)
        while True:
            token = self._peek()
            if token is None or token.kind != TokenKind.PUNCTUATOR or token.text not in BINARY_PRECEDENCE[level]:
                return lhs
            self._advance()
            rhs = self._binary(level + 1)
            lhs = _Draft(NodeKind.BINARY_OPERATOR, token, [self._rvalue(lhs), self._rvalue(rhs)], spelling=token.text)

    def _unary(self) -> _Draft:
        token = self._peek()
        if token is not None and token.kind == TokenKind.PUNCTUATOR and token.text in ("-", "!", "++", "--"):
            self._advance()
            operand = self._unary()
            if token.text in ("++", "--") and operand.kind not in (NodeKind.DECL_REF_EXPR, NodeKind.ARRAY_SUBSCRIPT_EXPR):
                raise ParseError("assignable operand", operand.kind.value, token.line, token.column)
            return _Draft(NodeKind.UNARY_OPERATOR, token, [self._rvalue(operand)], spelling=token.text)
        return self._postfix()

    def _postfix(self) -> _Draft:
        expr = self._primary()
        while True:
            if self._at("["):
                bracket = self._advance()
                index = self._rvalue(self._expression())
                self._expect("]")
                subscript = _Draft(NodeKind.ARRAY_SUBSCRIPT_EXPR, bracket, [expr, index])
                subscript.line, subscript.column = expr.line, expr.column
                expr = subscript
            elif self._at("++") or self._at("--"):
                op = self._advance()
                if expr.kind not in (NodeKind.DECL_REF_EXPR, NodeKind.ARRAY_SUBSCRIPT_EXPR):
                    raise ParseError("assignable operand", expr.kind.value, op.line, op.column)
                unary = _Draft(NodeKind.UNARY_OPERATOR, op, [self._rvalue(expr)], spelling="post" + op.text)
                unary.line, unary.column = expr.line, expr.column
                expr = unary
            else:
                return expr

    def _primary(self) -> _Draft:
        token = self._peek()
        if token is None:
            self._error("expression")
        if token.kind == TokenKind.INTEGER:
            self._advance()
            return _Draft(NodeKind.INTEGER_LITERAL, token, text=token.text)
        if token.kind == TokenKind.FLOAT:
            self._advance()
            return _Draft(NodeKind.FLOATING_LITERAL, token, text=token.text)
        if token.kind == TokenKind.IDENTIFIER:
            self._advance()
            if self._at("("):
                return self._call(token)
            ref = _Draft(NodeKind.DECL_REF_EXPR, token, text=token.text, spelling=token.text)
            ref.decl = self._resolve(token)
            return ref
        if self._at("("):
            self._advance()
            expr = self._expression()
            self._expect(")")
            return expr
        self._error("expression")

    def _call(self, name: Token) -> _Draft:
        self._expect("(")
        call = _Draft(NodeKind.CALL_EXPR, name, spelling=name.text)
        if not self._at(")"):
            while True:
                call.children.append(self._rvalue(self._assignment()))
                if not self._at(","):
                    break
                self._advance()
        self._expect(")")
        if not call.children:
            call.text = name.text
        return call


def _freeze(root: _Draft) -> Ast:
    order: List[_Draft] = []
    stack = [root]
    while stack:
        draft = stack.pop()
        order.append(draft)
        stack.extend(reversed(draft.children))
    ids = {id(draft): index for index, draft in enumerate(order)}
    nodes = []
    for index, draft in enumerate(order):
        nodes.append(AstNode(
            id=index,
            kind=draft.kind,
            children=tuple(ids[id(child)] for child in draft.children),
            token_text=draft.text if not draft.children else "",
            decl_ref=ids[id(draft.decl)] if draft.decl is not None else None,
            directive_text=draft.directive,
            spelling=draft.spelling,
            type_name=draft.type_name,
            clauses=draft.clauses,
            line=draft.line,
            column=draft.column,
        ))
    return _make_ast(nodes)


def _make_ast(nodes: Sequence[AstNode], root: int = 0) -> Ast:
    terminals = [node for node in nodes if node.is_terminal and node.id != root]
    terminals.sort(key=lambda node: (node.line, node.column, node.id))
    return Ast(nodes=tuple(nodes), root=root, tokens=tuple(node.id for node in terminals))


def parse(tokens: Sequence[Token]) -> Ast:
    """Parse a token list into an Ast (node ids in pre-order, root 0)."""
    ast = _freeze(Parser(tokens).parse())
    logger.debug(f"[FRONTEND] parsed {len(ast.nodes)} nodes, {len(ast.tokens)} terminals")
    return ast


def parse_source(source: str) -> Ast:
    return parse(tokenize(source))


def iter_nodes(ast: Ast, kind: Optional[NodeKind] = None) -> Iterator[AstNode]:
    for node in ast.nodes:
        if kind is None or node.kind == kind:
            yield node


def find_nodes(ast: Ast, kind: NodeKind) -> List[AstNode]:
    return list(iter_nodes(ast, kind))


def parent_map(ast: Ast) -> Dict[int, int]:
    return ast.parents


def subtree_ids(ast: Ast, node_id: int) -> List[int]:
    """Pre-order ids of the subtree rooted at node_id."""
    out: List[int] = []
    stack = [node_id]
    while stack:
        current = stack.pop()
        out.append(current)
        stack.extend(reversed(ast.nodes[current].children))
    return out


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def ast_to_json(ast: Ast) -> Dict[str, Any]:
    """Serialize an Ast; ids are pre-order and optional fields are omitted when unset."""
    nodes = []
    for node in ast.nodes:
        entry: Dict[str, Any] = {"id": node.id, "kind": node.kind.value, "children": list(node.children)}
        if node.token_text:
            entry["text"] = node.token_text
        if node.decl_ref is not None:
            entry["decl_ref"] = node.decl_ref
        if node.directive_text is not None:
            entry["directive"] = node.directive_text
            entry["clauses"] = [[name, arg] for name, arg in node.clauses]
        if node.spelling:
            entry["spelling"] = node.spelling
        if node.type_name:
            entry["type"] = node.type_name
        entry["line"] = node.line
        entry["column"] = node.column
        nodes.append(entry)
    return {"schema_version": AST_SCHEMA_VERSION, "root": ast.root, "nodes": nodes}


def ast_from_json(doc: Mapping[str, Any]) -> Ast:
    if not isinstance(doc, Mapping) or "nodes" not in doc or "root" not in doc:
        raise SchemaError("AST document needs 'root' and 'nodes'")
    if doc.get("schema_version", AST_SCHEMA_VERSION) != AST_SCHEMA_VERSION:
        raise SchemaError(f"unsupported AST schema_version {doc.get('schema_version')}")
    nodes: List[AstNode] = []
    try:
        for index, entry in enumerate(doc["nodes"]):
            if entry["id"] != index:
                raise SchemaError(f"AST node ids must be dense and ordered; got {entry['id']} at position {index}")
            nodes.append(AstNode(
                id=entry["id"],
                kind=NodeKind(entry["kind"]),
                children=tuple(int(c) for c in entry.get("children", [])),
                token_text=entry.get("text", ""),
                decl_ref=entry.get("decl_ref"),
                directive_text=entry.get("directive"),
                spelling=entry.get("spelling", ""),
                type_name=entry.get("type", ""),
                clauses=tuple((str(n), str(a)) for n, a in entry.get("clauses", [])),
                line=int(entry.get("line", 0)),
                column=int(entry.get("column", 0)),
            ))
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"malformed AST node: {e}") from e
    for node in nodes:
        for child in node.children:
            if not 0 <= child < len(nodes):
                raise SchemaError(f"node {node.id} has unknown child {child}")
    return _make_ast(nodes, root=int(doc["root"]))
