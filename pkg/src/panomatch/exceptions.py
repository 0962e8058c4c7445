"""Exception hierarchy shared by all panomatch modules."""

import numpy as np


class PanomatchError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PanomatchError, ValueError):
    """Input failed a shape, finiteness or consistency check."""


class SingularityError(PanomatchError, np.linalg.LinAlgError):
    """A Gram (or general) matrix could not be factorized.

    ``pivot`` is the zero-based index of the failing pivot, when known.
    ``location_id`` is attached by callers that aggregate location groups.
    """

    def __init__(self, message, pivot=None, location_id=None):
        super().__init__(message)
        self.pivot = pivot
        self.location_id = location_id

    def __str__(self):
        msg = super().__str__()
        if self.location_id is not None:
            msg = f"location {self.location_id!r}: {msg}"
        return msg


class FormatError(PanomatchError, ValueError):
    """A binary or CSV file is malformed. ``offset`` is the byte offset."""

    def __init__(self, message, offset=None, path=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)
        self.offset = offset
        self.path = path
