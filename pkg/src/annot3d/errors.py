"""Exception types shared across the pipeline."""


class SceneError(Exception):
    """Base class for all annot3d errors."""


class FormatError(SceneError):
    """A file could not be parsed. Carries the byte offset of the defect
    when it is known (-1 otherwise)."""

    def __init__(self, message: str, offset: int = -1):
        if offset >= 0:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class ValidationError(SceneError):
    """An in-memory object violates one of its invariants."""


class MismatchError(SceneError):
    """Two artifacts that must refer to the same scene do not."""


class RayMissError(SceneError):
    """A paint ray did not hit any face; session state is unchanged."""
