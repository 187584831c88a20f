"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class InvalidPolygonError(PipelineError, ValueError):
    """Polygon has fewer than 3 vertices or non-finite coordinates."""


class InvalidBoxError(PipelineError, ValueError):
    """Box is inverted or lies outside the image bounds."""


class DimensionMismatchError(PipelineError, ValueError):
    """Masks or grids that must share dimensions do not."""


class ConfigError(PipelineError, ValueError):
    """Bad configuration; carries the offending key and line when known."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        parts = [message]
        if key is not None:
            parts.append(f"key {key!r}")
        if line is not None:
            parts.append(f"line {line}")
        super().__init__(": ".join(parts) if len(parts) > 1 else message)
        self.key = key
        self.line = line


class NumericError(PipelineError, ArithmeticError):
    """Non-finite values appeared where finite arithmetic was required."""


class DivergenceError(PipelineError, RuntimeError):
    """Training loss became non-finite; carries the history so far."""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history


class MissingPredictionError(PipelineError, LookupError):
    """A listed sample has no prediction file; names the sample."""


class PromptGenerationError(PipelineError, RuntimeError):
    """The prompt generator client failed; carries the attempt count."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(f"{message} (after {attempts} attempt(s))")
        self.attempts = attempts
