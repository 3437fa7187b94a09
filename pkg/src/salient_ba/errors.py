"""Exception types raised across the package."""


class SalientBAError(Exception):
    """Base class for all errors raised by salient_ba."""


class BehindCameraError(SalientBAError, ValueError):
    pass


class ZeroBaselineError(SalientBAError, ValueError):
    pass


class AngleNearPiError(SalientBAError, ValueError):
    pass


class DegenerateGeometryError(SalientBAError, ValueError):
    pass


class DimensionMismatchError(SalientBAError, ValueError):
    pass


class OutOfBoundsError(SalientBAError, ValueError):
    pass


class RasterFormatError(SalientBAError, ValueError):
    """Any problem decoding a PGM raster."""


class MalformedHeaderError(RasterFormatError):
    pass


class DimensionOverflowError(RasterFormatError):
    pass


class TruncatedPayloadError(RasterFormatError):
    pass


class InsufficientObservationsError(SalientBAError, ValueError):
    pass


class RankDeficiencyError(SalientBAError, ArithmeticError):
    pass


class GenerationError(SalientBAError, RuntimeError):
    pass


class NoMatchesError(SalientBAError, ValueError):
    pass


class TooFewPosesError(SalientBAError, ValueError):
    pass


class SnapshotFormatError(SalientBAError, ValueError):
    pass


class ConfigError(SalientBAError, ValueError):
    """Invalid configuration; the message names the offending section/field."""


class DatasetFormatError(SalientBAError, ValueError):
    pass
