"""Exception types shared across the package."""


class EcgotError(Exception):
    """Base class for all package errors."""


class InvalidArgument(EcgotError, ValueError):
    """An argument violates a documented precondition."""


class ParseError(EcgotError):
    """A metadata file could not be parsed.

    Carries the 1-based line number where parsing failed, when known.
    """

    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class UnsupportedFormat(EcgotError):
    """A WFDB signal format other than 16 was requested."""


class TruncatedSignal(EcgotError):
    """Signal byte stream shorter or longer than the header promises."""


class EmptyDataset(EcgotError):
    """An operation that needs at least one record received none."""


class AllZeroSpectrum(EcgotError):
    """Frequency features are undefined on an all-zero spectrum."""


class ZeroMassRow(EcgotError):
    """Every row of a transport plan carries zero mass; nothing can be mapped."""


class NonFiniteActivation(EcgotError):
    """A NaN/Inf appeared inside an encoder layer."""

    def __init__(self, layer_index: int, where: str):
        self.layer_index = layer_index
        super().__init__(f"non-finite activation in layer {layer_index} ({where})")


class NonFiniteLoss(EcgotError):
    """The training loss evaluated to NaN/Inf."""


class DivergedTraining(EcgotError):
    """Training loss diverged; carries the per-epoch log collected so far."""

    def __init__(self, message: str, log: list):
        self.log = log
        super().__init__(message)


class EmptyEvaluation(EcgotError):
    """Metrics requested on a confusion matrix with zero total count."""


class IncomparableRuns(EcgotError):
    """Runs evaluated on different test sets cannot be compared."""


class StageFailure(EcgotError):
    """A pipeline stage failed; carries the stage name for the CLI exit message."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
