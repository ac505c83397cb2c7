from .BaseProjectException import BaseProjectException


class PlanIndexException(BaseProjectException):
    """Exception raised when an exit or partition index is out of range."""

    def __init__(self, message: str):
        super().__init__(message, error_code="PLAN_INDEX_ERROR")


class PlanRequestException(BaseProjectException):
    """Exception raised when a plan request violates its invariants."""

    def __init__(self, message: str):
        super().__init__(message, error_code="PLAN_REQUEST_ERROR")
