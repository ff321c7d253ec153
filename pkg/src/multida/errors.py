"""Exception types shared across the package."""


class MultidaError(Exception):
    """Base class for all multida errors."""


class ValidationError(MultidaError):
    """Invalid user input: bad matrices, labels, flags, or shapes."""


class FormatError(MultidaError):
    """Malformed or incompatible file content (CSV cells, model documents)."""


class NumericError(MultidaError):
    """Numeric computation produced an unusable result."""
