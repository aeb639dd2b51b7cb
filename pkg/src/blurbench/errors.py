"""Exception hierarchy shared by every blurbench module."""


class BlurBenchError(Exception):
    """Base class; the CLI maps any subclass to exit code 1."""


class BadArgument(BlurBenchError, ValueError):
    pass


# imaging
class NoFramesError(BlurBenchError):
    pass


class InconsistentFramesError(BlurBenchError):
    pass


class BadFrameNameError(BlurBenchError):
    pass


class BadImageError(BlurBenchError):
    pass


class BadResizeError(BlurBenchError):
    pass


# blur synthesis
class WindowOutOfRangeError(BlurBenchError):
    pass


class SequenceTooShortError(BlurBenchError):
    pass


# dataset
class LevelUnavailableError(BlurBenchError):
    pass


class BadGroundTruthError(BlurBenchError):
    pass


class BadManifestError(BlurBenchError):
    pass


class MissingImageError(BlurBenchError):
    pass


# descriptors / evaluation
class BadConfigError(BlurBenchError):
    pass


class BadDimensionsError(BlurBenchError):
    pass


class BadFormatError(BlurBenchError):
    pass


class TruncatedError(BadFormatError):
    pass


class NoGroundTruthError(BlurBenchError):
    pass


class EmptyCurveError(BlurBenchError):
    pass


# blur detection
class TooSmallError(BlurBenchError):
    pass


class BadCalibrationError(BlurBenchError):
    pass


# adaptive pipeline
class DeblurError(BlurBenchError):
    """Raised by the deblur bridge.

    ``run_pipeline`` attaches ``partial_stats`` and ``query_index`` before
    re-raising so callers can report how far the run got.
    """

    partial_stats = None
    query_index = None


class DeblurFailedError(DeblurError):
    pass


class IncompleteOutputError(DeblurError):
    pass


class BadOutputError(DeblurError):
    pass


class DeblurTimeoutError(DeblurError):
    pass


class BadPowerLogError(BlurBenchError):
    pass
