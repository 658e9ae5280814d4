"""Exception types shared across the package."""


class MeaError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgument(MeaError, ValueError):
    pass


class ConfigError(MeaError, ValueError):
    pass


class StateError(MeaError, RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class NumericalFailure(MeaError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class TrainingFailure(MeaError, RuntimeError):
    """Raised when the loss diverges; carries the last finite checkpoint."""

    def __init__(self, message, last_good=None, epoch=None):
        super().__init__(message)
        self.last_good = last_good
        self.epoch = epoch


class PreconditionError(MeaError, RuntimeError):
    pass


class FormatError(MeaError, ValueError):
    """Malformed MEAF / MEAD / MEAC payload."""
