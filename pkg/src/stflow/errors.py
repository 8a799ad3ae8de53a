"""Exception hierarchy shared by all stflow modules."""


class StflowError(ValueError):
    """Base class for every error raised by stflow."""


class MalformedHeader(StflowError):
    pass


class OutOfBounds(StflowError):
    pass


class BadPolarity(StflowError):
    pass


class UnsortedTimestamps(StflowError):
    pass


class EmptyInterval(StflowError):
    pass


class InvalidSpec(StflowError):
    pass


class TooSmall(StflowError):
    pass


class DimensionMismatch(StflowError):
    pass


class BadWindow(StflowError):
    pass


class BadRange(StflowError):
    pass


class BadThresholds(StflowError):
    pass


class BinMismatch(StflowError):
    pass


class BadProbability(StflowError):
    pass


class EmptyTemplate(StflowError):
    pass


class DegenerateK(StflowError):
    pass


class EmptyInput(StflowError):
    pass


class NoTracks(StflowError):
    pass


class BadExponent(StflowError):
    pass


class NonFinite(StflowError):
    pass


class EmptyMask(StflowError):
    pass


class LengthMismatch(StflowError):
    pass


class ConfigError(StflowError):
    """Bad configuration key or value; the CLI maps this to exit status 2."""
