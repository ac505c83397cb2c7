"""Runtime configuration: CLI-wide settings, agent settings and environment defaults."""

import os
from pathlib import Path
from typing import Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .exceptions import ConfigException

load_dotenv()

REPO_ROOT = Path(__file__).resolve().parent.parent
BUNDLED_MODEL = REPO_ROOT / "data" / "models" / "branchy_alexnet.json"
BUNDLED_PREDICTORS = REPO_ROOT / "data" / "predictors" / "paper_predictors.json"

DEFAULT_PORT = 9000
DEFAULT_BANDWIDTH_KBPS = 1000.0


def default_model_path() -> Path:
    return Path(os.getenv("EDGENT_MODEL") or BUNDLED_MODEL)


def default_predictors_path() -> Path:
    return Path(os.getenv("EDGENT_PREDICTORS") or BUNDLED_PREDICTORS)


def resolve_seed(flag: Optional[int]) -> Optional[int]:
    """
    The --seed flag wins, then EDGENT_SEED.

    Raises:
        ConfigException: If EDGENT_SEED is not an integer
    """
    if flag is not None:
        return flag
    raw = os.getenv("EDGENT_SEED")
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigException("EDGENT_SEED", f"not an integer: '{raw}'") from e


def parse_endpoint(value: str, default_host: str = "127.0.0.1") -> Tuple[str, int]:
    """
    Split HOST:PORT; a bare port binds to `default_host`.

    Raises:
        ConfigException: If the port is missing or out of range
    """
    host, _, port = value.rpartition(":")
    try:
        number = int(port)
    except ValueError as e:
        raise ConfigException("endpoint", f"'{value}' has no numeric port") from e
    if not 0 <= number <= 65535:
        raise ConfigException("endpoint", f"port {number} is out of range")
    return (host or default_host), number


class GlobalConfig(BaseModel):
    """Settings shared by every subcommand."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    verbosity: int = Field(default=0, ge=-1, le=2)
    output_format: Literal["table", "json", "csv"] = "table"
    seed: Optional[int] = None


class AgentConfig(BaseModel):
    """One protocol endpoint: who it is, where it talks and how it executes segments."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    role: Literal["device", "edge"]
    host: str = "127.0.0.1"
    port: int = Field(default=DEFAULT_PORT, ge=0, le=65535)
    model_path: Path = Field(default_factory=default_model_path)
    predictors_path: Path = Field(default_factory=default_predictors_path)
    mode: Literal["kernels", "delay"] = "kernels"
    shape_bps: Optional[float] = None
    seed: int = 0

    @field_validator("shape_bps")
    @classmethod
    def _positive_rate(cls, value):
        if value is not None and value <= 0:
            raise ValueError("shaper rate must be > 0 when set")
        return value

    @classmethod
    def build(cls, **fields) -> "AgentConfig":
        """
        Raises:
            ConfigException: If a field is invalid
        """
        try:
            return cls(**fields)
        except ValidationError as e:
            first = e.errors()[0]
            location = ".".join(str(part) for part in first["loc"])
            raise ConfigException(location, first["msg"]) from e
