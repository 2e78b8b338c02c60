"""Exception types raised across the package."""


class FusionError(Exception):
    """Base class for every error raised by fusionslam."""


class NonPositiveDepth(FusionError):
    pass


class InsufficientSamples(FusionError):
    pass


class NonMonotonicTime(FusionError):
    pass


class EmptyWindow(FusionError):
    pass


class ZeroAverageAcceleration(FusionError):
    pass


class VoteFailed(FusionError):
    pass


class RankDeficient(FusionError):
    pass


class ImplausibleGravity(FusionError):
    pass


class PnPFailed(FusionError):
    pass


class WheelGap(FusionError):
    pass


class InsufficientSatellites(FusionError):
    pass


class DegenerateTrajectory(FusionError):
    pass


class OutOfBracket(FusionError):
    pass


class SpanMismatch(FusionError):
    pass


class DeadVariable(FusionError):
    pass


class LowParallax(FusionError):
    pass


class SolverDiverged(FusionError):
    pass


class BadScenario(FusionError):
    pass


class TooFewPairs(FusionError):
    pass


class ConfigError(FusionError):
    """Malformed or unknown configuration entry."""


class DatasetFormatError(FusionError):
    """A dataset or trajectory file is missing, truncated or malformed."""
