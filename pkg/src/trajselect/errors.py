"""Exception hierarchy.

Each family maps onto one CLI exit code (see ``trajselect.cli``):
configuration problems exit 2, data problems exit 3, numeric failures exit 4.
"""


class TrajSelectError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(TrajSelectError, ValueError):
    pass


class DataError(TrajSelectError, ValueError):
    pass


class NumericError(TrajSelectError, ArithmeticError):
    pass


class StepAlignmentError(DataError):
    """A reasoning step could not be located in the token stream."""


class SchemaError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class EmptyClassError(DataError):
    pass


class EmptyTrajectoryError(DataError):
    pass


class EmptyCandidates(DataError):
    pass


class VocabError(DataError):
    pass


class SequenceTooLong(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class GradCheckFailure(NumericError):
    def __init__(self, message: str, report=None):
        self.report = report
        super().__init__(message)
