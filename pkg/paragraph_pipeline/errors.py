"""
Exception hierarchy for the ParaGraph pipeline.

Input errors (bad source text, malformed files, bad configuration) map to CLI
exit code 2; stage failures (measurement, training, metrics) map to exit code 3.
Every error can render itself as a one-line machine-parsable record.
"""

from typing import Any, Dict, Optional


class ParaGraphError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 3

    def to_record(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {"error": type(self).__name__, "message": str(self)}
        record.update(self.details())
        return record

    def details(self) -> Dict[str, Any]:
        return {}


class InputError(ParaGraphError):
    exit_code = 2


class StageError(ParaGraphError):
    exit_code = 3


class ConfigError(InputError):
    pass


class SchemaError(InputError):
    pass


class LexError(InputError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column

    def details(self) -> Dict[str, Any]:
        return {"line": self.line, "column": self.column}


class ParseError(InputError):
    def __init__(self, expected: str, found: str, line: int, column: int, message: Optional[str] = None):
        text = message or f"expected {expected}, found {found!r}"
        super().__init__(f"{text} at line {line}, column {column}")
        self.expected = expected
        self.found = found
        self.line = line
        self.column = column

    def details(self) -> Dict[str, Any]:
        return {"expected": self.expected, "found": self.found, "line": self.line, "column": self.column}


class UnresolvedRefError(ParseError):
    def __init__(self, name: str, line: int, column: int):
        super().__init__(
            "declared identifier", name, line, column,
            message=f"use of undeclared identifier '{name}'",
        )
        self.name = name


class VariantError(InputError):
    pass


class ChecksumError(InputError):
    pass


class VersionError(InputError):
    def __init__(self, found: int, expected: int, what: str = "checkpoint"):
        super().__init__(f"{what} version {found} is not supported (expected version {expected})")
        self.found = found
        self.expected = expected

    def details(self) -> Dict[str, Any]:
        return {"found": self.found, "expected": self.expected}


class WeightError(StageError):
    pass


class MeasureError(StageError):
    STAGES = ("compile", "run", "parse", "timeout")

    def __init__(self, stage: str, message: str, stderr: str = ""):
        if stage not in self.STAGES:
            raise ValueError(f"unknown measurement stage {stage!r}")
        super().__init__(f"{stage} failed: {message}")
        self.stage = stage
        self.stderr = stderr

    def details(self) -> Dict[str, Any]:
        return {"stage": self.stage, "stderr": self.stderr[-2000:]}


class DatasetError(StageError):
    pass


class ShapeError(StageError):
    pass


class MetricError(StageError):
    pass
