"""Exceptions raised while loading, validating and saving branchy models."""

from .BaseProjectException import BaseProjectException


class ModelParseException(BaseProjectException):
    """Exception raised when a model file is not well-formed JSON."""

    def __init__(self, message: str, file_path: str):
        self.file_path = file_path
        error_msg = f"Failed to parse model file {file_path}: {message}" if file_path else message
        super().__init__(error_msg, error_code="MODEL_PARSE_ERROR")


class ModelValidationException(BaseProjectException):
    """Exception raised when a model description breaks a structural rule."""

    def __init__(self, field: str, reason: str):
        """
        Initialize model validation exception.

        Args:
            field: Dotted location of the offending field (e.g. "layers.3.conv.stride")
            reason: Why the value was rejected
        """
        self.field = field
        self.reason = reason
        super().__init__(f"Invalid field '{field}': {reason}", error_code="MODEL_VALIDATION_ERROR")


class DanglingLayerReferenceException(BaseProjectException):
    """Exception raised when an exit references a layer missing from the layer table."""

    def __init__(self, exit_index: int, layer_name: str):
        self.exit_index = exit_index
        self.layer_name = layer_name
        super().__init__(
            f"Exit {exit_index} references unknown layer '{layer_name}'",
            error_code="DANGLING_LAYER_REFERENCE"
        )


class ModelRangeException(BaseProjectException):
    """Exception raised when an exit index or layer interval is out of range."""

    def __init__(self, message: str):
        super().__init__(message, error_code="MODEL_RANGE_ERROR")


class ModelSaveException(BaseProjectException):
    """Exception raised when writing a model file fails."""

    def __init__(self, message: str, file_path: str):
        self.file_path = file_path
        super().__init__(f"Failed to save model to {file_path}: {message}", error_code="MODEL_SAVE_ERROR")
