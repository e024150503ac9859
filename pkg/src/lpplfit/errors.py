"""Exception hierarchy shared by every stage of the pipeline."""


class LPPLError(Exception):
    """Base class for all errors raised by lpplfit."""


class ValidationError(LPPLError, ValueError):
    """Input violates a documented invariant."""


class ParseError(ValidationError):
    """A CSV row could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyInputError(ValidationError):
    pass


class InsufficientDataError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class DomainError(LPPLError, ValueError):
    """Model evaluated at or beyond the critical time."""


class DegenerateBasisError(LPPLError, ArithmeticError):
    """The linear basis {1, f, g} is numerically rank deficient."""

    def __init__(self, message: str, condition: float = float("inf")):
        self.condition = condition
        super().__init__(message)


class JacobianError(LPPLError, ArithmeticError):
    pass


class SearchFailure(LPPLError, RuntimeError):
    pass


class FitFailure(LPPLError, RuntimeError):
    """Local refinement could not start; carries the offending start point."""

    def __init__(self, message: str, init=None):
        self.init = init
        super().__init__(message)


class WindowFitFailure(LPPLError, RuntimeError):
    def __init__(self, message: str, causes: list[str] | None = None):
        self.causes = list(causes or [])
        super().__init__(message)


class CoverageError(ValidationError):
    """Requested t2 / window span lies outside the data support."""


class EnsembleFailure(LPPLError, RuntimeError):
    pass
