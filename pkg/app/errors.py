"""
Exception hierarchy for the panoptic edge evaluation toolkit.

Every error carries the process exit code the command-line interface
reports for it: 1 for usage errors, 2 for data/format errors and 3 for
internal invariant violations.
"""


class PedError(Exception):
    """Base class for all toolkit errors."""
    exit_code = 2


class ParamError(PedError):
    """An operation parameter is outside its documented range."""
    exit_code = 1


class ShapeError(PedError):
    """Raster dimensions do not agree."""


class EmptyMaskError(PedError):
    """A mask expected to contain at least one pixel is empty."""


class LabelError(PedError):
    """A label id is neither ignore nor a member of the category set."""


class ManifestError(PedError):
    """An instance id has no (or an invalid) manifest entry."""


class FormatError(PedError):
    """A file does not follow the expected format."""


class RangeError(PedError):
    """A probability value lies outside [0, 1]."""


class UndefinedError(PedError):
    """A metric is undefined for the given counts."""


class EmptyReportError(PedError):
    """No category could be evaluated."""


class IoError(PedError):
    """A file could not be read or written."""


class InvariantViolation(PedError):
    """An internal consistency check failed."""
    exit_code = 3
