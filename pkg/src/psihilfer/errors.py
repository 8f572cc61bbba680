"""Exception types shared across the package."""


class PsiHilferError(Exception):
    """Base class for all package errors."""


class DomainError(PsiHilferError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigurationError(PsiHilferError, ValueError):
    """A problem or run configuration violates a structural invariant.

    ``field`` names the offending configuration entry when known.
    """

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class AccuracyLossError(PsiHilferError, ArithmeticError):
    """A series or quadrature could not reach the requested accuracy."""


class EvaluationError(PsiHilferError, RuntimeError):
    """A user supplied right-hand side failed at a specific mesh node."""


class HypothesisViolation(PsiHilferError, RuntimeError):
    """A hypothesis of an iteration theorem was found violated numerically.

    ``diagnostic`` carries the numbers that triggered the abort.
    """

    def __init__(self, message, diagnostic=None):
        self.diagnostic = diagnostic or {}
        super().__init__(message)
