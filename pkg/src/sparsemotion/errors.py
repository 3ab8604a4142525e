"""Exception types raised across the package."""


class SparseMotionError(Exception):
    """Base class for all package errors."""


class DegenerateInput(SparseMotionError, ValueError):
    pass


class NotARotation(SparseMotionError, ValueError):
    pass


class ShapeMismatch(SparseMotionError, ValueError):
    pass


class RangeError(SparseMotionError, ValueError):
    pass


class InvalidSchedule(SparseMotionError, ValueError):
    pass


class LengthMismatch(SparseMotionError, ValueError):
    pass


class TooShort(SparseMotionError, ValueError):
    pass


class SignalTooShort(TooShort):
    pass


class FormatError(SparseMotionError, ValueError):
    pass


class VersionError(FormatError):
    pass


class EmptyDataset(SparseMotionError, ValueError):
    pass


class EmptyDirectory(SparseMotionError, ValueError):
    pass


class NonFiniteLoss(SparseMotionError, FloatingPointError):
    pass


class ConfigMismatch(SparseMotionError, ValueError):
    pass
