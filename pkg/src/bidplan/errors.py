class DomainError(ValueError):
    """Raised when an operation is called outside its domain."""


class EpisodeAborted(DomainError):
    """A policy emitted an invalid action during a rollout."""


class DatasetFormatError(DomainError):
    """A dataset file record failed validation."""

    def __init__(self, line, field, message):
        self.line = line
        self.field = field
        super().__init__(f"line {line}: field {field!r}: {message}")


class NonFiniteError(FloatingPointError):
    """A loss, score or gradient became non-finite during training."""
