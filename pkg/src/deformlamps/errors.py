"""Exception hierarchy.

Everything raised on purpose by the library derives from ``DeformLampsError``
so the CLI can map it to the data-error exit status.
"""

from __future__ import annotations


class DeformLampsError(Exception):
    """Base class for library errors."""


class DimensionMismatchError(DeformLampsError, ValueError):
    pass


class EmptySequenceError(DeformLampsError, ValueError):
    pass


class MalformedFieldFileError(DeformLampsError):
    """A DLF1 stream is truncated or carries a bad header."""


class NyquistError(DeformLampsError, ValueError):
    def __init__(self, axis: str, limit: float, nyquist: float):
        self.axis = axis
        self.limit = limit
        self.nyquist = nyquist
        super().__init__(
            f"{axis} band upper limit {limit:g} exceeds the Nyquist frequency {nyquist:g}"
        )


class ClippingError(DeformLampsError):
    def __init__(self, clipped_fraction: float, threshold: float):
        self.clipped_fraction = clipped_fraction
        self.threshold = threshold
        super().__init__(
            f"clipped fraction {clipped_fraction:.4f} exceeds allowed {threshold:.4f}"
        )


class MissingReflectanceError(DeformLampsError, ValueError):
    pass


class DegenerateDataError(DeformLampsError, ValueError):
    """Trial data cannot constrain a psychometric fit."""


class InvalidLevelError(DeformLampsError, ValueError):
    pass


class SegmentLengthError(DeformLampsError, ValueError):
    pass


class ConfigError(DeformLampsError):
    """Bad run configuration; ``key`` names the offending entry when known."""

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)
