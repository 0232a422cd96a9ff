"""
Exception hierarchy for moesearch.

Every error raised by the library derives from ``MoESearchError`` and from the
closest builtin so callers catching ``ValueError``/``KeyError`` keep working.
The CLI maps these onto exit codes (see ``moesearch.cli``).
"""

from typing import Any


class MoESearchError(Exception):
    """Base class for all moesearch errors."""


class DimensionError(MoESearchError, ValueError):
    """Tensor shapes do not agree for an operation."""


class ParameterError(MoESearchError, ValueError):
    """A numeric parameter is outside its valid range."""


class SpecError(MoESearchError, ValueError):
    """A block spec, backbone or search space is invalid."""


class DataError(MoESearchError, ValueError):
    """Corpus or target data is unusable (unknown symbol, split too small, ...)."""


class ConfigError(MoESearchError, ValueError):
    """A run configuration field failed validation."""

    def __init__(self, field: str, value: Any, reason: str):
        self.field = field
        self.value = value
        self.reason = reason
        super().__init__(f"Invalid config field '{field}' = {value!r}: {reason}")


class CoverageError(MoESearchError, KeyError):
    """A latency table is missing an entry required by the search space."""

    def __init__(self, key: str, context: str = ""):
        self.key = key
        suffix = f" ({context})" if context else ""
        super().__init__(f"Latency table has no entry for block key '{key}'{suffix}")

    def __str__(self) -> str:
        # KeyError.__str__ would repr() the message and add quotes
        return self.args[0]


class NumericAbort(MoESearchError, RuntimeError):
    """Training produced a non-finite loss; ``snapshot`` holds diagnostics."""

    def __init__(self, message: str, snapshot: dict[str, Any] | None = None):
        self.snapshot = snapshot or {}
        super().__init__(message)
