"""Exception types shared across the simulator.

Config problems derive from :class:`ConfigError` (CLI exit code 2), numerical
breakdowns from :class:`NumericalError` (exit code 3).
"""


class IsacError(Exception):
    """Base class for all simulator errors."""


class ConfigError(IsacError, ValueError):
    """Invalid parameters or scenario content."""


class NumericalError(IsacError, ArithmeticError):
    """A computation left its numerically valid regime."""


# frame
class NotDownlink(ConfigError):
    pass


class NonUniformSpacing(ConfigError):
    pass


# waveform
class TooManySubcarriers(ConfigError):
    pass


# scene
class RangeBeyondWindow(ConfigError):
    pass


# rdproc / clutter
class WrongOrigin(ConfigError):
    pass


class TooFewNoiseCells(ConfigError):
    pass


class DimensionMismatch(ConfigError):
    pass


class TooFewPulses(ConfigError):
    pass


class Diverged(NumericalError):
    pass


# detect
class WindowTooLarge(ConfigError):
    pass


class NoPeaksFound(IsacError):
    pass


class TooFewSamples(ConfigError):
    pass


class DegenerateGeometry(NumericalError):
    pass


# track
class InvalidArray(ConfigError):
    pass


class AmbiguousAngle(ConfigError):
    pass


class NonPsdCovariance(NumericalError):
    pass
