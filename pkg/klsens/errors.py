from typing import Any, Dict, Optional


class KLSensError(Exception):
    """Base class for every error raised by klsens."""

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"error": type(self).__name__, "message": str(self)}
        for key, value in vars(self).items():
            if not key.startswith("_"):
                out[key] = value
        return out


class ValidationError(KLSensError, ValueError):
    pass


class AbsoluteContinuityError(ValidationError):
    pass


class BiasError(ValidationError):
    """The randomized-horizon pmf misses part of the support of the stopping time."""


class ConfigError(ValidationError):
    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        super().__init__(message)
        self.field = field
        self.line = line


class DegeneracyError(KLSensError):
    """
    A non-degeneracy assumption failed: the cost (or its symmetrization) is
    constant under the benchmark model, so no ascent direction exists.
    """

    def __init__(self, message: str, assumption: str):
        super().__init__(message)
        self.assumption = assumption


class NumericRangeError(KLSensError):
    pass


class RegimeError(KLSensError):
    pass


class ContractionError(RegimeError):
    def __init__(self, message: str, factor: float, iterations: int):
        super().__init__(message)
        self.factor = factor
        self.iterations = iterations


class BudgetError(KLSensError):
    def __init__(self, message: str, required: float, budget: float):
        super().__init__(message)
        self.required = required
        self.budget = budget
