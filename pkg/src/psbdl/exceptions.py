"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an argument is non-finite, out of range or mis-shaped."""


class ContractViolation(ValueError):
    """Raised when a caller breaks an operation's precondition (e.g. out-of-bounds offsets)."""


class SolverDivergence(RuntimeError):
    """Raised when the solver produces non-finite evidence; carries the trace so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []
