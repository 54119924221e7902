"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: input problems exit with 2,
resource limits with 3.
"""


class EntrepError(Exception):
    """Base class for all library errors."""


class InvalidInputError(EntrepError, ValueError):
    """Input violates a documented precondition."""


class InvalidShapeError(InvalidInputError):
    """Array shapes are incompatible with the requested operation."""


class NotPSDError(InvalidInputError):
    """Matrix has an eigenvalue below the PSD clamping window."""


class ValidationError(InvalidInputError):
    """A domain object fails one of its invariants."""


class GameClassError(InvalidInputError):
    """Game lacks the structural property a protocol requires."""


class UnsupportedStrategyError(InvalidInputError):
    """Strategy is of a kind the operation does not handle (e.g. a POVM)."""


class FormatError(InvalidInputError):
    """A file could not be parsed; ``line`` points at the offending line."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ResourceLimitError(EntrepError):
    """Requested computation exceeds a configured size limit."""
