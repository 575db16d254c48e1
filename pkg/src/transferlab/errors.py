"""Exception types raised across the package."""


class TransferLabError(Exception):
    """Base class for every error raised by transferlab."""


class InvalidArgument(TransferLabError, ValueError):
    pass


class InvalidShape(TransferLabError, ValueError):
    pass


class ShapeError(TransferLabError, ValueError):
    pass


class NonFiniteError(TransferLabError, FloatingPointError):
    """A NaN or Inf appeared in the output of a primitive."""

    def __init__(self, op: str, phase: str = "forward"):
        super().__init__(f"non-finite values produced by {op!r} during {phase} pass")
        self.op = op
        self.phase = phase


class EmptyLoss(TransferLabError, ValueError):
    """Every position in the batch was padding."""


class InvalidId(TransferLabError, IndexError):
    pass


class InvalidConfig(TransferLabError, ValueError):
    pass


class SequenceTooLong(TransferLabError, ValueError):
    pass


class UnsupportedVersion(TransferLabError):
    pass


class CorruptCheckpoint(TransferLabError):
    pass


class PhaseError(TransferLabError):
    """A checkpoint was handed to a phase that cannot consume it."""


class FreezeViolation(TransferLabError, AssertionError):
    pass


class ParseError(TransferLabError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyCorpus(TransferLabError, ValueError):
    pass


class TooSmallToSplit(TransferLabError, ValueError):
    pass


class EmptyCommand(ParseError):
    pass


class ReferenceInvalid(TransferLabError, ValueError):
    pass


class TrainingDiverged(TransferLabError, FloatingPointError):
    def __init__(self, step: int, detail: str = ""):
        msg = f"training diverged at step {step}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.step = step


class ExperimentFailed(TransferLabError):
    """Wraps the error that stopped an experiment, tagged with the phase it hit."""

    def __init__(self, phase: str, cause: Exception):
        super().__init__(f"{phase} failed: {type(cause).__name__}: {cause}")
        self.phase = phase
        self.cause = cause
