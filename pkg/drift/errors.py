"""Exception types raised by the sampling toolkit."""


class DriftError(Exception):
    """Base class for all toolkit errors."""


class SamplerValidationError(DriftError, ValueError):
    """A precondition on an input failed. The message names the field."""

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")

    def __reduce__(self):
        # survives the trip back from a worker process
        return (self.__class__, (self.field, self.message))


class NumericalFailure(DriftError, ArithmeticError):
    """Divergence, degenerate draws, or a computation with no valid result."""
