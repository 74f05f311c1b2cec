"""Exception types raised across the package."""


class SnapfieldError(Exception):
    """Base class for all package errors."""


class AngleNearPi(SnapfieldError, ValueError):
    """Rotation angle too close to pi for a unique logarithm."""


class PixelOutOfBounds(SnapfieldError, IndexError):
    pass


class DimensionMismatch(SnapfieldError, ValueError):
    pass


class ShapeMismatch(SnapfieldError, ValueError):
    pass


class NonIntegerOnesCount(SnapfieldError, ValueError):
    """overlap_rate * N is not a positive integer."""


class ZeroMaskPixel(SnapfieldError, ValueError):
    """Some pixel is never sampled by any mask."""


class ImageTooSmall(SnapfieldError, ValueError):
    pass


class FileFormatError(SnapfieldError, ValueError):
    """Bad magic, version or payload length in a binary file."""
