"""Exception types raised across statetrace."""


class StatetraceError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(StatetraceError, ValueError):
    pass


class FormatVersionError(StatetraceError):
    """A model file declares a format_version this build cannot read."""


class ModelParseError(StatetraceError):
    pass


class NoDetectionsError(StatetraceError):
    """Detection metrics are undefined because no change point was predicted."""


class DegenerateSegmentationError(StatetraceError):
    pass
