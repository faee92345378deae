"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class VicnnError(Exception):
    exit_code = 1


class ShapeError(VicnnError, ValueError):
    """Operand shapes are inconsistent."""

    exit_code = 4


class ValidationError(VicnnError, ValueError):
    """A spec, stimulus or file failed validation."""

    exit_code = 4


class DataError(VicnnError):
    """Corpus or file could not be read or is unusable."""

    exit_code = 3


class NumericError(VicnnError, FloatingPointError):
    """Training diverged or produced non-finite values."""

    exit_code = 5

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
