"""Exception types shared across the package."""


class MlemError(Exception):
    """Base class for all package errors."""


class InvalidInputError(MlemError):
    """Malformed files, mismatched dimensions, or bad configuration."""


class DegenerateDataError(MlemError):
    """Data that admits no meaningful fit (e.g. all distances equal)."""
