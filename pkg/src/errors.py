"""Exception hierarchy. The CLI maps each family to a stable exit code."""


class RFIError(Exception):
    """Base class for all pipeline errors"""

    exit_code = 1


class ConfigError(RFIError):
    exit_code = 2


class ShapeError(ConfigError):
    """Tensor or vector dimensions do not line up"""


class DataError(RFIError):
    exit_code = 3


class StratificationError(DataError):
    pass


class FitError(DataError):
    pass


class WeightError(DataError):
    pass


class InputError(DataError):
    pass


class MetricError(DataError):
    pass


class NumericError(RFIError):
    exit_code = 4


class TrainingError(NumericError):
    pass
