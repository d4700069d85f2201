"""Exception types shared across the package."""


class AdhesionError(Exception):
    """Base class for package errors."""


class WrongRegime(AdhesionError):
    """Parameters are outside the regime an operation requires."""


RegimeError = WrongRegime


class OutOfRange(AdhesionError):
    """A flux level lies outside the admissible interval."""


class IndexOutOfRange(AdhesionError):
    pass


class StabilityViolation(AdhesionError):
    """Explicit time step exceeds the stability bound."""


class NonFiniteState(AdhesionError):
    pass


class BadProfile(AdhesionError):
    pass


class NewtonDivergence(AdhesionError):
    """Newton iteration failed even after the allowed step halvings."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class StepTooLarge(AdhesionError):
    pass


class InsufficientTail(AdhesionError):
    pass


class EmptyRegion(AdhesionError):
    pass


class PackingFailure(AdhesionError):
    pass


class AnchorOutsideU(AdhesionError):
    pass


class GridMismatch(AdhesionError):
    pass


class WindowOutside(AdhesionError):
    pass


class MissingArtifacts(AdhesionError):
    pass
