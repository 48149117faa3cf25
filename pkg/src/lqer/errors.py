"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class LqerError(Exception):
    exit_code = 1


class ArgumentError(LqerError, ValueError):
    exit_code = 2


class ShapeError(ArgumentError):
    """Operand dimensions do not line up."""


class FormatError(LqerError):
    exit_code = 3

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(LqerError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class DegenerateInputError(NumericalError):
    """Input is valid but the requested quantity is undefined for it (e.g. zero error)."""


class CalibrationError(LqerError):
    exit_code = 5

    def __init__(self, message, channel=None):
        super().__init__(message)
        self.channel = channel
