"""Exception types raised across the digitizer."""


class DigitizerError(Exception):
    """Base class for all digitizer failures."""


class DecodeFailure(DigitizerError):
    pass


class DimensionMismatch(DigitizerError):
    pass


class NoAxesFound(DigitizerError):
    pass


class RecognizerUnavailable(DigitizerError):
    pass


class ParseFailure(DigitizerError, ValueError):
    pass


class InsufficientTicks(DigitizerError):
    pass


class NonMonotonic(DigitizerError):
    pass


class EmptyMask(DigitizerError):
    pass


class NoValidColumn(DigitizerError):
    pass


class InsufficientOverlap(DigitizerError):
    pass


class LengthMismatch(DigitizerError):
    pass


class InvalidScene(DigitizerError, ValueError):
    """A scene description violates its invariants (e.g. a curve leaves the plot)."""
