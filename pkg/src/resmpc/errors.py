class ResmpcError(Exception):
    """Base class for all package errors."""


class InvalidInputError(ResmpcError, ValueError):
    pass


class ParseError(ResmpcError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GapError(ResmpcError, ValueError):
    pass


class ValidationError(ResmpcError, ValueError):
    pass


class InsufficientDataError(ResmpcError, ValueError):
    pass


class ConfigError(ResmpcError, ValueError):
    pass


class FitError(ResmpcError, RuntimeError):
    pass


class SolverDivergedError(ResmpcError, RuntimeError):
    pass


class MassBalanceError(ResmpcError, RuntimeError):
    pass


class StepError(ResmpcError, RuntimeError):
    """Failure inside the receding-horizon loop, tagged with the step index."""

    def __init__(self, step, cause):
        self.step = step
        self.cause = cause
        super().__init__(f"step {step}: {cause}")
