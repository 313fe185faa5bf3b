"""Exception taxonomy shared across the package."""


class StutterGateError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(StutterGateError, ValueError):
    """Unsupported audio or container format; message names the offending field."""


class EmptyInputError(StutterGateError, ValueError):
    """An operation received an empty signal, track, or stream."""


class TooShortError(StutterGateError, ValueError):
    """Input shorter than one analysis window."""


class ShapeError(StutterGateError, ValueError):
    """Array dimensions do not match what the operation requires."""


class DomainError(StutterGateError, ValueError):
    """A scalar argument lies outside its admissible range."""


class AnnotationError(StutterGateError, ValueError):
    """Malformed stutter annotation text."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class UnknownTagError(AnnotationError):
    """Annotation tag not present in the stutter-type table."""


class ConfigError(StutterGateError, ValueError):
    """Invalid run configuration; raised before any work starts."""


class DegenerateDataError(StutterGateError, ValueError):
    """Training data contains a single class."""


class TrainingFailureError(StutterGateError, RuntimeError):
    """Training diverged; carries the last finite state."""

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class NumericFailureError(StutterGateError, ArithmeticError):
    """A non-finite value appeared; message names the layer or lattice cell."""


class UndefinedMetricError(StutterGateError, ValueError):
    """Metric undefined for the given inputs (empty reference, no positives, ...)."""


class StageError(StutterGateError, RuntimeError):
    """A pipeline stage failed; message names the stage."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class AnnotationClipWarning(UserWarning):
    """An annotated event extended past the utterance end and was clipped."""


class EmptyStreamWarning(UserWarning):
    """Gating dropped every frame; the decoder will see an empty stream."""
