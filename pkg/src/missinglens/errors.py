"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so library code raises the most
specific class available instead of a bare ``ValueError``.
"""


class MissingLensError(Exception):
    """Base class for all library errors."""


class DataError(MissingLensError, ValueError):
    """Input data violates a precondition (empty, non-finite, wrong kind...)."""


class ParseError(DataError):
    """A CSV file could not be parsed."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class SchemaError(DataError):
    """Column names or kinds are inconsistent."""


class NothingToTest(DataError):
    """A diagnostic was requested on data that has nothing to diagnose."""


class StructuralMismatch(MissingLensError, ValueError):
    """Two models cannot be compared bin by bin."""


class ModelFormatError(MissingLensError, ValueError):
    """A serialized model is corrupt or has an unknown schema version."""
