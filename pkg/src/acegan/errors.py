"""Exception hierarchy shared by every stage of the pipeline."""


class AceGanError(Exception):
    """Base class; the CLI reports ``type(exc).__name__`` as the error code."""


# wfdb ingest
class MalformedHeader(AceGanError):
    pass


class UnsupportedFormat(AceGanError):
    pass


class TruncatedSignal(AceGanError):
    pass


class TruncatedAnnotations(AceGanError):
    pass


class UnknownCode(AceGanError):
    pass


class NonBeatCode(AceGanError):
    pass


class SampleOutOfRange(AceGanError):
    pass


# beat grid / estimator
class TooFewBeats(AceGanError):
    pass


class SegmentTooShort(AceGanError):
    pass


class DegenerateInput(AceGanError):
    pass


# networks
class ShapeMismatch(AceGanError):
    pass


class NoForwardCache(AceGanError):
    pass


class MissingClass(AceGanError):
    pass


class EmptyDataset(AceGanError):
    pass


# datasets / evaluation
class InsufficientSBearingRecords(AceGanError):
    pass


class SplitViolation(AceGanError):
    pass


class LengthMismatch(AceGanError):
    pass


class InsufficientSamples(AceGanError):
    pass


# cli
class MissingArtifact(AceGanError):
    pass


class ConfigError(AceGanError):
    pass


class StaleArtifact(AceGanError):
    """An upstream artifact was produced under a different configuration."""
