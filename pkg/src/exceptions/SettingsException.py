"""Configuration exceptions."""

from .BaseProjectException import BaseProjectException


class ConfigException(BaseProjectException):
    """Exception raised when a setting from flags or the environment is invalid."""

    def __init__(self, setting: str, reason: str):
        self.setting = setting
        self.reason = reason
        super().__init__(f"Invalid setting '{setting}': {reason}", error_code="CONFIG_ERROR")
