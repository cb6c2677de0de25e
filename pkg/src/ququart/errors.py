"""Exception hierarchy shared by all ququart modules."""


class QuquartError(Exception):
    """Base class for every error raised by this package."""


class InputError(QuquartError, ValueError):
    """Malformed or out-of-range argument (unknown label, wrong shape, ...)."""


class DomainError(QuquartError, ValueError):
    """A state lies outside the subspace an operation is defined on."""


class TruncationError(QuquartError):
    """An operator pushed amplitude beyond the truncated OAM ladder."""


class CalibrationError(QuquartError):
    """No pipeline hypothesis reproduces one or more target states."""

    def __init__(self, message, failures=()):
        super().__init__(message)
        self.failures = tuple(failures)


class ConfigurationError(QuquartError):
    """A required asset or configuration file is missing or invalid."""


class InsufficientDataError(QuquartError):
    """Counts are too sparse to form the requested estimate."""
