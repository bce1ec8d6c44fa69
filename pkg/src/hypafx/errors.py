"""Exception types shared across the package."""


class UsageError(ValueError):
    """Invalid arguments, shapes, or inputs supplied by the caller."""


class TrainingError(RuntimeError):
    """Raised when optimisation hits a non-finite value."""


class FormatError(ValueError):
    """Malformed or unsupported on-disk file (manifest, checkpoint, WAV)."""
