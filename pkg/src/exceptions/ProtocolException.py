"""Exceptions for the device/edge co-inference protocol."""

from .BaseProjectException import BaseProjectException


class FrameTooLargeException(BaseProjectException):
    """Exception raised when a frame header declares more than the allowed payload."""

    def __init__(self, declared: int, limit: int):
        self.declared = declared
        self.limit = limit
        super().__init__(f"Frame declares {declared} bytes, limit is {limit}", error_code="FRAME_TOO_LARGE")


class MalformedFrameException(BaseProjectException):
    """Exception raised when a frame or its payload cannot be decoded."""

    def __init__(self, message: str):
        super().__init__(message, error_code="MALFORMED_FRAME")


class RemoteErrorException(BaseProjectException):
    """Exception raised when the peer answers with an ERROR message."""

    def __init__(self, code: int, remote_message: str):
        self.code = code
        self.remote_message = remote_message
        super().__init__(f"Peer reported error {code}: {remote_message}", error_code="REMOTE_ERROR")


class ConnectionLostException(BaseProjectException):
    """Exception raised when the connection drops in the middle of a session."""

    def __init__(self, phase: str, partial_timings: dict, error: Exception = None):
        self.phase = phase
        self.partial_timings = dict(partial_timings)
        message = f"Connection lost during {phase}"
        if error:
            message += f": {str(error)}"
        super().__init__(message, error_code="CONNECTION_LOST")


class InfeasiblePlanException(BaseProjectException):
    """Exception raised when the device cannot find a plan meeting its budget."""

    def __init__(self, budget_ms: float, best_latency_ms: float):
        self.budget_ms = budget_ms
        self.best_latency_ms = best_latency_ms
        super().__init__(
            f"No exit/partition meets {budget_ms} ms (best predicted {best_latency_ms:.3f} ms)",
            error_code="INFEASIBLE_PLAN"
        )
