"""Branchy DNN model descriptions: layer table, exit branches and the JSON file format."""

import json
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .Logger import get_logger
from .exceptions import (
    DanglingLayerReferenceException,
    ModelParseException,
    ModelRangeException,
    ModelSaveException,
    ModelValidationException
)


class LayerKind(str, Enum):
    """The six layer kinds with a latency regression; values are the file-format names."""

    CONVOLUTION = "conv"
    RELU = "relu"
    POOLING = "pool"
    LOCAL_RESPONSE_NORMALIZATION = "lrn"
    DROPOUT = "dropout"
    FULLY_CONNECTED = "fc"


class ConvParams(BaseModel):
    """Convolution geometry used by the composite convolution feature."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    input_feature_maps: int = Field(gt=0)
    filter_size: int = Field(ge=1)
    stride: int = Field(ge=1)
    num_filters: int = Field(gt=0)


class LayerSpec(BaseModel):
    """One layer of a branchy model. output_bytes is the tensor that crosses the
    wire when the partition falls right after this layer."""

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    name: str = Field(min_length=1)
    kind: LayerKind
    input_bytes: int = Field(ge=0)
    output_bytes: int = Field(ge=0)
    param_bytes: int = Field(default=0, ge=0)
    conv_params: Optional[ConvParams] = Field(default=None, alias="conv")

    @model_validator(mode="after")
    def _conv_params_match_kind(self) -> "LayerSpec":
        if (self.kind == LayerKind.CONVOLUTION) != (self.conv_params is not None):
            raise ValueError("'conv' parameters are required for conv layers and forbidden otherwise")
        return self


class ExitBranch(BaseModel):
    """An exit point: the ordered chain of layer names executed to reach it."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    index: int = Field(ge=1)
    layers: Tuple[str, ...] = Field(min_length=1)
    accuracy: float = Field(ge=0.0, le=1.0)


def _layer_name(layer) -> Optional[str]:
    if isinstance(layer, LayerSpec):
        return layer.name
    if isinstance(layer, dict):
        return layer.get("name")
    return None


class BranchyModel(BaseModel):
    """A trunk of layer specs plus M exit branches.

    Exits are kept sorted by index; exit i resolves to N_i = len(exits[i-1].layers)
    layers through the shared layer table.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(min_length=1)
    input_bytes: int = Field(ge=0)
    layers: Dict[str, LayerSpec]
    exits: Tuple[ExitBranch, ...] = Field(min_length=1)
    comment: Optional[str] = None

    @field_validator("layers", mode="before")
    @classmethod
    def _index_layers_by_name(cls, value):
        if isinstance(value, dict):
            for key, layer in value.items():
                name = _layer_name(layer)
                if name is not None and name != key:
                    raise ValueError(f"layer keyed '{key}' is named '{name}'")
            return value
        if not isinstance(value, (list, tuple)):
            raise ValueError("layers must be an array of layer objects")

        table = {}
        for position, layer in enumerate(value):
            name = _layer_name(layer)
            if name is None:
                raise ValueError(f"layer at position {position} has no name")
            if name in table:
                raise ValueError(f"duplicate layer name '{name}'")
            table[name] = layer
        return table

    @field_validator("exits", mode="after")
    @classmethod
    def _sort_exits(cls, exits):
        return tuple(sorted(exits, key=lambda branch: branch.index))

    @model_validator(mode="after")
    def _check_structure(self) -> "BranchyModel":
        indices = [branch.index for branch in self.exits]
        if indices != list(range(1, len(indices) + 1)):
            raise ValueError(f"exit indices must be exactly 1..{len(indices)}, got {indices}")

        for branch in self.exits:
            for layer_name in branch.layers:
                if layer_name not in self.layers:
                    raise DanglingLayerReferenceException(branch.index, layer_name)

            first = self.layers[branch.layers[0]]
            if first.input_bytes != self.input_bytes:
                raise ValueError(
                    f"exit {branch.index} starts at '{first.name}' with input_bytes "
                    f"{first.input_bytes}, model input_bytes is {self.input_bytes}"
                )

        for previous, current in zip(self.exits, self.exits[1:]):
            if len(current.layers) <= len(previous.layers):
                raise ValueError(
                    f"exit {current.index} has {len(current.layers)} layers, "
                    f"not more than exit {previous.index} ({len(previous.layers)})"
                )

        for index in self.non_monotone_exits():
            get_logger().warning(
                f"Model '{self.name}': exit {index} is less accurate than exit {index - 1}"
            )
        return self

    @property
    def num_exits(self) -> int:
        """M, the number of exit points."""
        return len(self.exits)

    def exit(self, index: int) -> ExitBranch:
        """Return exit branch `index` (1-based).

        Raises:
            ModelRangeException: If index is outside 1..M
        """
        if not 1 <= index <= len(self.exits):
            raise ModelRangeException(f"Exit {index} is outside 1..{len(self.exits)}")
        return self.exits[index - 1]

    def chain(self, index: int) -> List[LayerSpec]:
        """Resolve exit `index` into its ordered list of LayerSpec."""
        return [self.layers[name] for name in self.exit(index).layers]

    def chain_length(self, index: int) -> int:
        """N_i for exit `index`."""
        return len(self.exit(index).layers)

    def non_monotone_exits(self) -> List[int]:
        """Exit indices whose accuracy is lower than the previous exit's."""
        return [
            current.index
            for previous, current in zip(self.exits, self.exits[1:])
            if current.accuracy < previous.accuracy
        ]

    def submodel_bytes(self, exit_index: int, start: int, end: int) -> int:
        """Sum param_bytes over positions start..end (1-based, inclusive) of an exit.

        start == end + 1 is the empty interval and yields 0.

        Raises:
            ModelRangeException: If the exit or interval is out of range
        """
        names = self.exit(exit_index).layers
        if start < 1 or end > len(names) or start > end + 1:
            raise ModelRangeException(
                f"Interval {start}..{end} is outside 1..{len(names)} for exit {exit_index}"
            )
        return sum(self.layers[name].param_bytes for name in names[start - 1:end])

    def to_file_dict(self) -> dict:
        """Render the model in the on-disk JSON layout."""
        document = {"name": self.name}
        if self.comment is not None:
            document["comment"] = self.comment
        document["input_bytes"] = self.input_bytes
        document["layers"] = [
            layer.model_dump(mode="json", by_alias=True, exclude_none=True)
            for layer in self.layers.values()
        ]
        document["exits"] = [branch.model_dump(mode="json") for branch in self.exits]
        return document

    @classmethod
    def from_file_dict(cls, document: dict) -> "BranchyModel":
        """Validate a parsed model document.

        Raises:
            ModelValidationException: If a field is missing or violates an invariant
            DanglingLayerReferenceException: If an exit names an unknown layer
        """
        try:
            return cls.model_validate(document)
        except ValidationError as e:
            first = e.errors()[0]
            field = ".".join(str(part) for part in first["loc"]) or "<model>"
            raise ModelValidationException(field, first["msg"]) from e


def load_model(path: Union[str, Path]) -> BranchyModel:
    """
    Load and validate a branchy model file.

    Args:
        path: Path to a UTF-8 JSON model file

    Returns:
        A fully validated BranchyModel

    Raises:
        ModelParseException: If the file is unreadable or not JSON
        ModelValidationException: If the document violates the model rules
        DanglingLayerReferenceException: If an exit references an unknown layer
    """
    logger = get_logger()
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        logger.error(f"Could not read model file {path}: {e}")
        raise ModelParseException(str(e), str(path)) from e

    if not isinstance(document, dict):
        raise ModelParseException("top-level value must be an object", str(path))

    try:
        model = BranchyModel.from_file_dict(document)
    except (ModelValidationException, DanglingLayerReferenceException) as e:
        logger.error(f"Invalid model file {path}: {e}")
        raise

    logger.debug(f"Loaded model '{model.name}' with {model.num_exits} exit(s) from {path}")
    return model


def save_model(model: BranchyModel, path: Union[str, Path]) -> None:
    """
    Write a model in the JSON file format.

    Raises:
        ModelSaveException: If the file cannot be written
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(model.to_file_dict(), indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        get_logger().error(f"Could not write model file {path}: {e}")
        raise ModelSaveException(str(e), str(path)) from e
    get_logger().debug(f"Saved model '{model.name}' to {path}")


def submodel_bytes(model: BranchyModel, exit_index: int, interval: Tuple[int, int]) -> int:
    """Parameter bytes of exit `exit_index` over the inclusive 1-based `interval`."""
    start, end = interval
    return model.submodel_bytes(exit_index, start, end)
