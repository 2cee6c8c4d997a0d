"""Exception hierarchy shared by all modules."""


class MixplapError(Exception):
    """Base class for library errors."""


class InvalidInput(MixplapError, ValueError):
    pass


class SingularPoint(MixplapError, ValueError):
    """Evaluation requested at a point where the quantity is undefined."""


class NumericalIntegrationError(MixplapError, RuntimeError):
    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class NonConvergence(MixplapError, RuntimeError):
    def __init__(self, message, residual_trace=(), n=None):
        super().__init__(message)
        self.residual_trace = list(residual_trace)
        self.n = n


class Divergence(MixplapError, RuntimeError):
    pass


class InvariantViolation(MixplapError, AssertionError):
    """A structural property that the theory guarantees was observed to fail."""

    def __init__(self, message, clause=None, details=None):
        super().__init__(message)
        self.clause = clause
        self.details = details or {}


class StructuralFailure(InvariantViolation):
    pass


class ConfigError(MixplapError, ValueError):
    def __init__(self, message, line=None, column=None, key=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}, column {column})"
        super().__init__(f"{message}{loc}")
        self.line = line
        self.column = column
        self.key = key
