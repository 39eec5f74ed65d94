"""Exception hierarchy shared by the whole package.

The CLI maps these onto its exit codes: InvalidInputError -> 2,
EstimationError -> 3, DataFormatError -> 4.
"""


class QdCascadeError(Exception):
    """Base class for all package errors."""


class InvalidInputError(QdCascadeError):
    """A parameter or input value violates a documented precondition."""


class EstimationError(QdCascadeError):
    """A quantity cannot be estimated from the given data (e.g. zero counts)."""


class DataFormatError(QdCascadeError):
    """A file or stream does not conform to its declared format."""

    def __init__(self, message, path=None, offset=None):
        super().__init__(message)
        self.path = path
        self.offset = offset
