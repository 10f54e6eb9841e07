from typing import Iterable, List, Optional


class TraceFormatError(ValueError):
    """Raised when a trace file does not follow the trace format."""

    def __init__(self, message: str, lineno: Optional[int] = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class SchemaMismatchError(ValueError):
    """Raised when the channel schema of a signal or bundle does not match what is required."""

    def __init__(self, missing: Iterable[str] = (), extra: Iterable[str] = ()):
        self.missing = sorted(missing)
        self.extra = sorted(extra)
        parts = []
        if self.missing:
            parts.append(f"missing channels: {', '.join(self.missing)}")
        if self.extra:
            parts.append(f"unexpected channels: {', '.join(self.extra)}")
        super().__init__("Channel schema mismatch (" + "; ".join(parts) + ")")


class NonFiniteValueError(ValueError):
    """Raised when a signal value is NaN or infinite."""


class UnknownChannelError(KeyError):
    """Raised when a formula references a channel the signal does not carry."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ''


class HorizonError(ValueError):
    """Raised when a temporal window reaches outside the signal horizon."""


class PropertyIndexError(ValueError):
    """Raised when robustness values and thresholds refer to different properties."""


class SpecSyntaxError(ValueError):
    """Raised for grammar errors in a property specification."""

    def __init__(self, message: str, lineno: int, column: int):
        self.lineno = lineno
        self.column = column
        super().__init__(f"line {lineno}, column {column}: {message}")


class ThresholdRangeError(ValueError):
    """Raised when a predicate or robustness threshold is outside its admissible range."""


class ArchitectureError(ValueError):
    """Raised for inconsistent model architectures or mismatching models."""


class CoverageError(ValueError):
    """Raised when a compression configuration does not cover a model exactly once."""


class BitWidthError(ValueError):
    """Raised for bit-widths outside [2, 16]."""


class PruningRatioError(ValueError):
    """Raised for pruning ratios outside [0, P_max]."""


class SearchSpaceError(ValueError):
    """Raised for invalid search spaces or designs that cannot be drawn from them."""


class SearchExhaustedError(RuntimeError):
    """Raised when every configuration of the search space has already been evaluated."""


class SurrogateFitError(RuntimeError):
    """Raised when a Gaussian process cannot be fitted even with the maximum jitter."""


class RecordLogError(ValueError):
    """Raised when an existing record log cannot be used to resume a search."""


class RunConfigError(ValueError):
    """Raised when a run configuration violates one or more constraints.

    Attributes:
        violations (List[str]): One message per violation, each prefixed with the field path.
    """

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("Invalid run configuration:\n" + "\n".join(f"  {v}" for v in self.violations))
