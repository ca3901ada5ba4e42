"""Exception hierarchy and process exit codes.

Exit codes: 0 success, 1 usage, 2 config, 3 data, 4 numerical failure.
"""


class NvcError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class UsageError(NvcError):
    """Bad command line invocation."""

    exit_code = 1


class ConfigError(NvcError):
    """Unknown key, type mismatch, or out-of-range configuration value."""

    exit_code = 2


class DataError(NvcError):
    """Problems with input data, files, or shapes."""

    exit_code = 3


class IngestionError(DataError):
    """Unreadable, corrupt, or missing input file."""


class EmptyClipError(DataError):
    """Audio is empty, or entirely below the silence threshold."""


class TooShortError(DataError):
    """Signal shorter than one analysis window."""


class ShapeError(DataError):
    """Array dimensions do not match the operation's contract."""


class DegenerateInputError(DataError):
    """Input too small for the statistic to be defined (e.g. variance of one frame)."""


class SamplingError(DataError):
    """Candidate pool too small to draw the requested negatives."""


class NumericalError(NvcError):
    """Non-finite loss or other numerical breakdown; names the offending term."""

    exit_code = 4
