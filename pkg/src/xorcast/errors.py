"""Exception types shared across the package."""


class XorcastError(Exception):
    """Base class for all package-specific errors."""


class StructuralError(XorcastError):
    """Model arrays have incoherent shapes or types."""


class ModelFormatError(XorcastError):
    """A model or distribution file violates the documented schema.

    The message names the offending field (e.g. ``transition[1][2]``).
    """


class TraceFormatError(XorcastError):
    """A trace file line cannot be parsed; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class NoUniqueStationary(XorcastError):
    """The chain is reducible, so no unique stationary distribution exists."""


class ZeroLikelihood(XorcastError):
    """A conditioning event has probability zero under the model."""


class ResourceLimit(XorcastError):
    """A requested computation would exceed a hard size cap."""


class NumericalFailure(XorcastError):
    """An iterative numerical routine stalled; carries diagnostics."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ContractViolation(XorcastError):
    """An argument violates a documented precondition."""
