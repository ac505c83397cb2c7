"""Exceptions for latency regression models."""

from .BaseProjectException import BaseProjectException


class FeatureArityException(BaseProjectException):
    """Exception raised when a feature vector does not match a regression's arity."""

    def __init__(self, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"Expected {expected} feature(s), got {actual}", error_code="FEATURE_ARITY_ERROR")


class MissingRegressionException(BaseProjectException):
    """Exception raised when a predictor side has no regression for a kind."""

    def __init__(self, side: str, kinds):
        self.side = side
        self.kinds = list(kinds)
        super().__init__(
            f"No {side} regression for: {', '.join(self.kinds)}",
            error_code="MISSING_REGRESSION"
        )


class UnderdeterminedFitException(BaseProjectException):
    """Exception raised when samples cannot determine a unique linear fit."""

    def __init__(self, kind: str, message: str):
        self.kind = kind
        super().__init__(f"Cannot fit '{kind}': {message}", error_code="UNDERDETERMINED_FIT")


class PredictorFileException(BaseProjectException):
    """Exception raised when a predictor file cannot be read, parsed or written."""

    def __init__(self, message: str, file_path: str):
        self.file_path = file_path
        error_msg = f"Predictor file {file_path}: {message}" if file_path else message
        super().__init__(error_msg, error_code="PREDICTOR_FILE_ERROR")
