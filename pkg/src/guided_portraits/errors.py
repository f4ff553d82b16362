"""Exception hierarchy shared across the package."""


class GuidedPortraitsError(Exception):
    """Base class for all package errors."""


class ContractViolation(GuidedPortraitsError, ValueError):
    """Inputs break an operation's preconditions (shapes, arity, ordering)."""


class NumericDomainError(GuidedPortraitsError, ArithmeticError):
    """A computation would divide by zero or leave its numeric domain."""


class StepRangeError(GuidedPortraitsError, IndexError):
    """A diffusion step index lies outside the schedule."""


class ValidationError(GuidedPortraitsError, ValueError):
    """User-supplied text or configuration is invalid."""


class UnknownEntryError(GuidedPortraitsError, LookupError):
    """A named template, expert or category does not exist."""


class InitializationError(GuidedPortraitsError, RuntimeError):
    """Persona initialization could not produce a detectable portrait."""

    def __init__(self, message: str, best_confidence: float):
        super().__init__(message)
        self.best_confidence = best_confidence
