"""Exception hierarchy shared by all pipeline stages.

Every error carries a stable machine-readable class name (the exception
class itself) so the CLI can emit one-line diagnostics and map failures
to exit codes: data problems exit 3, numeric failures exit 4.
"""

from __future__ import annotations


class StictionGuardError(Exception):
    """Base class for all library errors."""

    exit_code = 3


class DataError(StictionGuardError):
    """Malformed, inconsistent, or insufficient input data."""

    exit_code = 3


class NumericError(StictionGuardError):
    """A numeric procedure failed (singular system, divergence)."""

    exit_code = 4


class EmptyInput(DataError):
    """Input contained zero usable rows."""


class UnparseableTimestamp(DataError):
    """No row carried a timestamp in any accepted format."""


class NonNumericValue(DataError):
    """A value column entry could not be read as a finite real."""


class SeriesTooShort(DataError):
    """The series does not cover the requested window layout."""


class InsufficientHistory(DataError):
    """Not enough preceding windows for the requested statistic."""


class SingularCovariance(NumericError):
    """Feature covariance is singular even after ridge regularization."""


class LabelMisalignment(DataError):
    """Window labels were produced with a different window layout."""


class OverlappingEpisodes(DataError):
    """Two simulation episodes claim the same minutes."""


class ShapeMismatch(DataError):
    """Array dimensions disagree with the layer or model contract."""


class LengthMismatch(DataError):
    """Paired arrays have different lengths."""


class EmptySplit(DataError):
    """A train/validation split required by training is empty."""


class UnknownKind(DataError):
    """Unrecognized architecture or method name."""


class WrongKind(DataError):
    """Operation applied to an incompatible model kind."""


class SingleClass(DataError):
    """Classifier training requires both classes to be present."""


class IoFailure(DataError):
    """A file could not be read or written."""
