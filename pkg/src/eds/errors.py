"""Exception types shared across the toolkit."""


class EdsError(Exception):
    """Base class for all toolkit errors; the CLI maps these to exit code 1."""


class ManifestError(EdsError):
    """Malformed or invariant-violating manifest content."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(EdsError):
    """Corrupt or mismatched binary file (bad magic, truncation, wrong dims)."""


class DimensionError(EdsError):
    """Vector or matrix dimensions do not agree."""


class EmptyCropError(EdsError):
    """ROI crop would retain zero rows."""


class PoolError(EdsError):
    """Requested sample size exceeds the eligible record pool."""
