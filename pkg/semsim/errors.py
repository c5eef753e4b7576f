"""
Error types raised across the semsim package
"""


class SemSimError(Exception):
    """Base class for every error raised by this package"""


class DimensionError(SemSimError):
    """Tensor shapes or vector extents do not agree"""


class NumericError(SemSimError):
    """NaN or otherwise invalid numbers reached an operation"""


class AutodiffError(SemSimError):
    """Misuse of the recorded graph (double backward, disconnected loss)"""


class VocabIndexError(SemSimError, IndexError):
    """Token id outside the vocabulary"""


class DataError(SemSimError):
    """Malformed or empty input data"""

    def __init__(self, message: str, line_number: int = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class LengthError(SemSimError):
    """Sequence longer than the configured maximum positions"""


class ConfigError(SemSimError):
    """Invalid configuration value or combination"""


class ValidationError(SemSimError):
    """Input violates a documented contract (e.g. rows not summing to 1)"""


class StatisticsError(SemSimError):
    """Degenerate samples for a statistical test"""


class CheckpointError(SemSimError):
    """Checkpoint container cannot be read or does not match"""
