from typing import Any, Dict, List, Optional


class FairRateError(Exception):
    """Base class for every error raised by the toolkit."""


class ScenarioParseError(FairRateError, ValueError):
    """Scenario file could not be read into an instance."""


class InvalidInstanceError(FairRateError, ValueError):
    """Instance violates the model assumptions."""

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("invalid instance: " + "; ".join(self.violations))


class InvalidPathsError(InvalidInstanceError):
    """Routing paths do not fit the instance."""

    def __init__(self, violations: List[str]):
        super().__init__(violations)
        self.args = ("invalid paths: " + "; ".join(self.violations),)


class DimensionMismatchError(FairRateError, ValueError):
    """A rate, flow or harvest matrix has the wrong shape."""


class InfeasibleProblemError(FairRateError):
    """A trial rate or linear program admits no feasible point."""


class NonConvergenceError(FairRateError):
    """An iterative solver ran out of its iteration budget."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InstanceTooLargeError(FairRateError):
    """Exact oracle or enumeration refused an instance above its size guard."""


class DecompositionError(FairRateError):
    """A flow is not integral in the requested unit."""
