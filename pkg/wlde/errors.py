"""Exception and warning types shared across the toolkit."""


class WLDEError(Exception):
    """Base class for every error raised by the toolkit."""

    exit_code = 1


class ConfigError(WLDEError):
    """Invalid or inconsistent experiment configuration."""

    exit_code = 2

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class DomainError(WLDEError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""

    exit_code = 2


class BracketError(WLDEError):
    """A bisection interval does not bracket the success boundary."""

    exit_code = 3


class ConvergenceError(WLDEError):
    """Not enough data or iterations to produce an estimate."""

    exit_code = 3


class NotFoundError(WLDEError):
    """A scan finished without meeting its target condition."""

    exit_code = 3


class ResourceError(WLDEError):
    """A memory or compute budget would be exceeded."""

    exit_code = 3


class ArtifactIOError(WLDEError):
    """Writing or reading an output artifact failed."""

    exit_code = 4


class DegenerateThresholdWarning(UserWarning):
    """The Allee threshold sits so close to 1 that invasion is practically impossible."""


class ClippingWarning(UserWarning):
    """A lattice update produced values outside [0, 1] that had to be clipped."""
