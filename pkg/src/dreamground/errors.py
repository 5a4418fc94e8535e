"""Error types shared across the package.

Every error carries a stable machine-readable ``code`` so the CLI can emit
single-line diagnostics of the form ``ERROR:<CODE>: <message>``.
"""


class DreamGroundError(Exception):
    """Base class for all package errors."""

    code = "ERROR"

    def __init__(self, message: str = ""):
        super().__init__(message)
        self.message = message


class MalformedOntologyError(DreamGroundError):
    code = "MALFORMED_ONTOLOGY"


class VocabEncodeError(DreamGroundError):
    """Raised when a string cannot be expressed with the vocabulary."""

    code = "VOCAB_CANNOT_ENCODE"


class UnknownStateError(DreamGroundError):
    code = "UNKNOWN_STATE"


class IllegalTransitionError(DreamGroundError):
    code = "ILLEGAL_TRANSITION"


class EmptyMaskError(DreamGroundError):
    code = "EMPTY_MASK"


class BudgetExceededError(DreamGroundError):
    code = "BUDGET_EXCEEDED"


class BackendFailureError(DreamGroundError):
    code = "BACKEND_FAILURE"


class BackendTimeoutError(DreamGroundError):
    code = "TIMEOUT"


class ContextOverflowError(DreamGroundError):
    code = "CONTEXT_OVERFLOW"


class ParseFailureError(DreamGroundError):
    code = "PARSE_FAILURE"


class FixtureConflictError(DreamGroundError):
    """Two scripted-fixture rules can never be told apart."""

    code = "SPEC_CONFLICT"


class IdMismatchError(DreamGroundError):
    code = "ID_MISMATCH"


class ShapeMismatchError(DreamGroundError):
    code = "SHAPE_MISMATCH"


class IoFailureError(DreamGroundError):
    code = "IO_FAILURE"


class ConfigError(DreamGroundError):
    code = "CONFIG"
