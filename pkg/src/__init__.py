"""Edgent: device-edge DNN co-inference planning with early exits and partitioning."""

__version__ = "0.1.0"

from .Logger import Logger, get_logger

__all__ = ["Logger", "get_logger", "__version__"]
