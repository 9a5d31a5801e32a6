"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or malformed config text."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ShapeError(ValueError):
    """Array length or dimension does not match what an operation needs."""


class UndefinedMetricError(ValueError):
    """A metric was requested on data that cannot define it."""


class ClusteringError(RuntimeError):
    """Clustering produced an ambiguous benign cluster."""
