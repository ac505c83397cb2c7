"""Exceptions raised by reference kernels and the profiling harness."""

from .BaseProjectException import BaseProjectException


class KernelShapeException(BaseProjectException):
    """Exception raised when a kernel receives inconsistent shapes."""

    def __init__(self, kernel: str, message: str):
        self.kernel = kernel
        super().__init__(f"{kernel}: {message}", error_code="KERNEL_SHAPE_ERROR")


class EmptyTensorException(BaseProjectException):
    """Exception raised when a benchmark case would run on a zero-element tensor."""

    def __init__(self, kind: str):
        self.kind = kind
        super().__init__(f"Benchmark case for '{kind}' has an empty tensor", error_code="EMPTY_TENSOR")


class TimerResolutionException(BaseProjectException):
    """Exception raised when a case runs below the timer's resolution."""

    def __init__(self, kind: str):
        self.kind = kind
        super().__init__(
            f"Median runtime of '{kind}' case is below timer resolution; enlarge the case",
            error_code="TIMER_RESOLUTION"
        )


class MeasurementFileException(BaseProjectException):
    """Exception raised when a measurement CSV cannot be read or written."""

    def __init__(self, message: str, file_path: str):
        self.file_path = file_path
        super().__init__(f"Measurement file {file_path}: {message}", error_code="MEASUREMENT_FILE_ERROR")


class ProfileFitException(BaseProjectException):
    """Exception raised when one or more kinds cannot be fitted from measurements."""

    def __init__(self, failures: dict):
        """
        Initialize profile fit exception.

        Args:
            failures: Mapping of kind name to the reason it could not be fitted
        """
        self.failures = dict(failures)
        details = "; ".join(f"{kind}: {reason}" for kind, reason in self.failures.items())
        super().__init__(
            f"Failed to fit {len(self.failures)} kind(s): {details}",
            error_code="PROFILE_FIT_ERROR"
        )
