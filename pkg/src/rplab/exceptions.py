"""Exception hierarchy shared by the laboratory modules."""

from typing import Any, Dict, List, Optional


class RplabError(Exception):
    """Base class for every error raised by rplab."""

    pass


class ConfigurationError(RplabError):
    """Raised when an experiment or a construction is configured inconsistently.

    Carries every violated constraint, not only the first one found.
    """

    def __init__(self, violations: List[str]) -> None:
        assert violations, "ConfigurationError needs at least one violation."
        self.violations: List[str] = [str(v) for v in violations]
        super().__init__("; ".join(self.violations))


class NumericalFailure(RplabError):
    """Raised when a numerical routine cannot deliver a result within tolerance.

    Args:
        message: Human readable description of the failure.
        context: Diagnostic values (seed, time, residual, iterations, ...).
        partial: Optional partial result, e.g. the trajectory integrated so far.
    """

    def __init__(
        self,
        message: str,
        context: Optional[Dict[str, Any]] = None,
        partial: Any = None,
    ) -> None:
        self.message = message
        self.context: Dict[str, Any] = dict(context or {})
        self.partial = partial
        super().__init__(message)

    def __str__(self) -> str:
        if not self.context:
            return self.message
        details = ", ".join(f"{k}={v}" for k, v in sorted(self.context.items()))
        return f"{self.message} ({details})"


class ReportError(RplabError):
    """Raised when run directories cannot be aggregated into one report."""

    def __init__(self, message: str, diff: Optional[Dict[str, List[Any]]] = None) -> None:
        self.diff: Dict[str, List[Any]] = dict(diff or {})
        if self.diff:
            lines = [f"  {key}: {values}" for key, values in sorted(self.diff.items())]
            message = message + "\n" + "\n".join(lines)
        super().__init__(message)
