"""Simulator exceptions."""

from .BaseProjectException import BaseProjectException


class PlanMismatchException(BaseProjectException):
    """Exception raised when a plan does not fit the model it is simulated on."""

    def __init__(self, message: str):
        super().__init__(message, error_code="PLAN_MISMATCH")


class SweepSpecException(BaseProjectException):
    """Exception raised when a sweep grid or scenario is invalid."""

    def __init__(self, message: str):
        super().__init__(message, error_code="SWEEP_SPEC_ERROR")


class ReportWriteException(BaseProjectException):
    """Exception raised when a CSV report or plot script cannot be written."""

    def __init__(self, message: str, file_path: str):
        self.file_path = file_path
        super().__init__(f"Failed to write {file_path}: {message}", error_code="REPORT_WRITE_ERROR")
