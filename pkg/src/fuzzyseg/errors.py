"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Input violates a documented precondition (shape, range, finiteness)."""


class ShapeError(InvalidInputError):
    """Array shapes are inconsistent with each other or with a declared layout."""


class DegenerateClusterError(RuntimeError):
    """A cluster lost all membership mass; its centroid update is undefined."""


class ConfigurationError(ValueError):
    """A run configuration is incomplete or self-contradictory (CLI exit code 2)."""


class NumericFailureError(RuntimeError):
    """A non-finite value (NaN/inf loss) appeared during training (CLI exit code 3)."""


class PgmParseError(ValueError):
    """Malformed PGM file; carries the byte offset where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointError(RuntimeError):
    """Checkpoint file is malformed or does not match the model being loaded."""
