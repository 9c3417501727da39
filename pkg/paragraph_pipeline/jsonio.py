"""Deterministic JSON reading and writing shared by every stage."""

import json
import os
from typing import Any, Iterable, Iterator, Mapping

from .errors import SchemaError


def dumps(doc: Any) -> str:
    """Canonical text form: sorted keys, two-space indent, trailing newline."""
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def dumps_line(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def write_json(path: str, doc: Any) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(dumps(doc))


def read_json(path: str) -> Any:
    if not os.path.exists(path):
        raise SchemaError(f"file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path} is not valid JSON: {e}") from e


def write_jsonl(path: str, records: Iterable[Mapping[str, Any]]) -> int:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(dumps_line(record) + "\n")
            count += 1
    return count


def read_jsonl(path: str) -> Iterator[Any]:
    if not os.path.exists(path):
        raise SchemaError(f"file not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(f"{path}:{number} is not valid JSON: {e}") from e
