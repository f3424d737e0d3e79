"""Exception types shared across the package."""


class ZipboostError(Exception):
    """Base class for all package errors."""


class SchemaError(ZipboostError):
    """Schema definition problem or schema/file mismatch."""


class ValidationError(ZipboostError):
    """Row-level data validation failure.

    ``row`` is the 0-based index of the offending data row (header excluded),
    or None when the failure is not tied to a single row.
    """

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class PredictionError(ZipboostError):
    """Model/data mismatch at prediction time."""


class FitError(ZipboostError):
    """Estimation cannot proceed (rank deficiency, empty input, ...)."""


class MetricError(ZipboostError):
    """Requested statistic is undefined for the given inputs."""
