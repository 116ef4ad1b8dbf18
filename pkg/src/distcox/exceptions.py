"""Exception hierarchy.

Every error family carries a stable ``exit_code`` used by the command-line
front end. Codes are part of the public interface; do not renumber.
"""


class DistCoxError(Exception):
    exit_code = 1


# -- input / schema (exit 3) -------------------------------------------------

class InputError(DistCoxError):
    exit_code = 3


class ParseError(InputError):
    def __init__(self, row, column, message=""):
        self.row = row
        self.column = column
        text = f"row {row}, column {column!r}"
        if message:
            text += f": {message}"
        super().__init__(text)


class SchemaError(InputError):
    pass


class EmptyAfterFiltering(InputError):
    pass


# -- configuration (exit 4) --------------------------------------------------

class ConfigError(DistCoxError):
    exit_code = 4

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


# -- kernel smoothing and calibration (exit 5) -------------------------------

class SmoothingError(DistCoxError):
    exit_code = 5


class EmptySample(SmoothingError):
    pass


class DegenerateWeight(SmoothingError):
    pass


class IndexOutOfRange(SmoothingError):
    pass


class MeanNearZero(SmoothingError):
    pass


class PhiNearZero(SmoothingError):
    def __init__(self, index, value):
        self.index = index
        self.value = value
        super().__init__(f"estimated distortion {value!r} at subject {index} is too close to zero")


# -- Cox model fitting (exit 6) ----------------------------------------------

class FitError(DistCoxError):
    exit_code = 6


class NonFiniteLikelihood(FitError):
    pass


class SeparationDetected(FitError):
    pass


class SingularInformation(FitError):
    pass


class MaxIterations(FitError):
    pass


# -- simulation (exit 7) -----------------------------------------------------

class SimulationError(DistCoxError):
    exit_code = 7


class BracketFailure(SimulationError):
    pass


class TooManyFailures(SimulationError):
    pass
