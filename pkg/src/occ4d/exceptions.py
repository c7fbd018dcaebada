"""Exception types shared across the package."""


class InputError(ValueError):
    """Caller-supplied data violates a documented precondition."""


class DegenerateFitError(InputError):
    """A least-squares fit has no unique solution (too few or constant samples)."""


class FormatError(ValueError):
    """Serialized bytes are malformed.

    Parameters
    ----------
    message : str
        Human-readable description of the defect.
    offset : int, optional
        Byte offset into the buffer (or file) where the defect was detected.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
