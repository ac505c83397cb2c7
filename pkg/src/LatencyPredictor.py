"""Per-layer-kind linear latency regressions for the device and the edge."""

import json
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .BranchyModel import LayerKind, LayerSpec
from .Logger import get_logger
from .exceptions import (
    FeatureArityException,
    MissingRegressionException,
    PredictorFileException,
    UnderdeterminedFitException
)

MODEL_LOADING = "loading"

# Number of independent variables per regression
FEATURE_ARITY: Dict[str, int] = {
    LayerKind.CONVOLUTION.value: 2,
    LayerKind.RELU.value: 1,
    LayerKind.POOLING.value: 2,
    LayerKind.LOCAL_RESPONSE_NORMALIZATION.value: 1,
    LayerKind.DROPOUT.value: 1,
    LayerKind.FULLY_CONNECTED.value: 2,
    MODEL_LOADING: 1,
}

REGRESSION_KINDS: Tuple[str, ...] = tuple(FEATURE_ARITY)

CONDITION_LIMIT = 1e12

RegressionKind = Union[LayerKind, str]


class Side(str, Enum):
    """Where a layer runs."""

    DEVICE = "device"
    EDGE = "edge"


def kind_name(kind: RegressionKind) -> str:
    """Normalize a LayerKind or the model-loading key to its file-format name."""
    return kind.value if isinstance(kind, Enum) else str(kind)


class FeatureVector(BaseModel):
    """Independent variables of one regression sample, in bytes or counts."""

    model_config = ConfigDict(frozen=True)

    values: Tuple[float, ...] = Field(min_length=1, max_length=2)

    @model_validator(mode="after")
    def _non_negative(self) -> "FeatureVector":
        if any(value < 0 for value in self.values):
            raise ValueError(f"feature values must be >= 0, got {self.values}")
        return self

    def __len__(self) -> int:
        return len(self.values)


class RegressionModel(BaseModel):
    """y = sum(w_i * x_i) + b, in milliseconds."""

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    weights: Tuple[float, ...] = Field(alias="w", min_length=1, max_length=2)
    intercept: float = Field(alias="b")

    @property
    def arity(self) -> int:
        return len(self.weights)

    def raw(self, x: Union[FeatureVector, Sequence[float]]) -> float:
        """Unclamped linear value.

        Raises:
            FeatureArityException: If x has the wrong number of features
        """
        values = x.values if isinstance(x, FeatureVector) else tuple(x)
        if len(values) != len(self.weights):
            raise FeatureArityException(len(self.weights), len(values))
        total = self.intercept
        for weight, value in zip(self.weights, values):
            total += weight * value
        return total

    def to_file_dict(self) -> dict:
        return {"w": list(self.weights), "b": self.intercept}


def predict(model: RegressionModel, x: Union[FeatureVector, Sequence[float]]) -> float:
    """Predicted latency in ms, clamped at zero after summation."""
    return max(0.0, model.raw(x))


def _feature_values(layer: LayerSpec) -> Tuple[float, ...]:
    if layer.kind == LayerKind.CONVOLUTION:
        conv = layer.conv_params
        # Real division before squaring: stride > filter must not collapse to 0
        composite = (conv.filter_size / conv.stride) ** 2 * conv.num_filters
        return (float(conv.input_feature_maps), composite)
    if layer.kind in (LayerKind.POOLING, LayerKind.FULLY_CONNECTED):
        return (float(layer.input_bytes), float(layer.output_bytes))
    return (float(layer.input_bytes),)


def extract_features(layer: LayerSpec) -> FeatureVector:
    """
    Build the regression inputs for a layer.

    Convolution uses [input feature maps, (filter/stride)^2 * filters]; relu, lrn and
    dropout use [input bytes]; pooling and fully-connected use [input bytes, output bytes].
    """
    return FeatureVector.model_construct(values=_feature_values(layer))


class PredictorSet(BaseModel):
    """Device and edge regressions: six layer kinds plus model loading on each side."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    device: Dict[str, RegressionModel]
    edge: Dict[str, RegressionModel]

    @model_validator(mode="after")
    def _covers_every_kind(self) -> "PredictorSet":
        for side_name in (Side.DEVICE.value, Side.EDGE.value):
            models = getattr(self, side_name)
            missing = [kind for kind in REGRESSION_KINDS if kind not in models]
            if missing:
                raise MissingRegressionException(side_name, missing)
            unknown = sorted(set(models) - set(REGRESSION_KINDS))
            if unknown:
                raise ValueError(f"{side_name} has unknown regression kind(s): {', '.join(unknown)}")
            for kind, model in models.items():
                if model.arity != FEATURE_ARITY[kind]:
                    raise ValueError(
                        f"{side_name}.{kind} has {model.arity} weight(s), expected {FEATURE_ARITY[kind]}"
                    )
        return self

    def side(self, side: Union[Side, str]) -> Dict[str, RegressionModel]:
        return self.device if Side(side) == Side.DEVICE else self.edge

    def regression(self, side: Union[Side, str], kind: RegressionKind) -> RegressionModel:
        """
        Look up one regression.

        Raises:
            MissingRegressionException: If the side has no model for the kind
        """
        models = self.side(side)
        name = kind_name(kind)
        if name not in models:
            raise MissingRegressionException(Side(side).value, [name])
        return models[name]

    def with_side(self, side: Union[Side, str], models: Dict[str, RegressionModel]) -> "PredictorSet":
        """Copy of this set with one side's regressions replaced or merged in."""
        side = Side(side)
        merged = {**self.side(side), **models}
        if side == Side.DEVICE:
            return PredictorSet(device=merged, edge=dict(self.edge))
        return PredictorSet(device=dict(self.device), edge=merged)

    def to_file_dict(self) -> dict:
        return {
            side_name: {kind: getattr(self, side_name)[kind].to_file_dict() for kind in REGRESSION_KINDS}
            for side_name in (Side.DEVICE.value, Side.EDGE.value)
        }


def predict_layer(predictors: PredictorSet, layer: LayerSpec, side: Union[Side, str]) -> float:
    """Latency in ms of `layer` on `side`: predict(side model for kind, features)."""
    model = predictors.regression(side, layer.kind)
    return predict(model, _feature_values(layer))


def predict_loading(predictors: PredictorSet, model_bytes: int, side: Union[Side, str]) -> float:
    """Model-loading latency in ms for a sub-model of `model_bytes` parameter bytes."""
    return predict(predictors.regression(side, MODEL_LOADING), (float(model_bytes),))


def fit(
    kind: RegressionKind,
    samples: Iterable[Tuple[Union[FeatureVector, Sequence[float]], float]]
) -> RegressionModel:
    """
    Ordinary-least-squares fit of one regression.

    Feature columns are scaled to unit max before solving the normal equations; a
    Gram matrix with condition number above 1e12 falls back to an SVD least-squares
    solve.

    Args:
        kind: Layer kind or MODEL_LOADING
        samples: (features, measured latency ms) pairs

    Returns:
        The fitted RegressionModel

    Raises:
        UnderdeterminedFitException: If there are too few samples or the features are collinear
        FeatureArityException: If a sample has the wrong number of features
    """
    logger = get_logger()
    name = kind_name(kind)
    if name not in FEATURE_ARITY:
        raise UnderdeterminedFitException(name, "unknown regression kind")
    arity = FEATURE_ARITY[name]

    rows, targets = [], []
    for features, latency in samples:
        values = features.values if isinstance(features, FeatureVector) else tuple(features)
        if len(values) != arity:
            raise FeatureArityException(arity, len(values))
        rows.append(values)
        targets.append(latency)

    if len(rows) < arity + 1:
        raise UnderdeterminedFitException(name, f"{len(rows)} sample(s), need at least {arity + 1}")

    x = np.asarray(rows, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)

    scale = np.abs(x).max(axis=0)
    if np.any(scale == 0.0):
        raise UnderdeterminedFitException(name, "a feature column is constant zero")
    design = np.column_stack([x / scale, np.ones(len(rows))])

    if np.linalg.matrix_rank(design) < arity + 1:
        raise UnderdeterminedFitException(name, "features are collinear")

    gram = design.T @ design
    if np.linalg.cond(gram) <= CONDITION_LIMIT:
        coefficients = np.linalg.solve(gram, design.T @ y)
    else:
        logger.debug(f"Gram matrix for '{name}' is ill-conditioned, using lstsq")
        coefficients = np.linalg.lstsq(design, y, rcond=None)[0]

    weights = tuple(float(value) for value in coefficients[:arity] / scale)
    intercept = float(coefficients[arity])
    logger.debug(f"Fitted '{name}' on {len(rows)} samples: w={weights}, b={intercept}")
    return RegressionModel(weights=weights, intercept=intercept)


def load_predictors(path: Union[str, Path]) -> PredictorSet:
    """
    Load a predictor file.

    Raises:
        PredictorFileException: If the file is unreadable or malformed
        MissingRegressionException: If a side lacks a regression
    """
    logger = get_logger()
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        logger.error(f"Could not read predictor file {path}: {e}")
        raise PredictorFileException(str(e), str(path)) from e

    try:
        predictors = PredictorSet.model_validate(document)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        logger.error(f"Invalid predictor file {path}: {location}: {first['msg']}")
        raise PredictorFileException(f"{location}: {first['msg']}", str(path)) from e
    except MissingRegressionException as e:
        logger.error(f"Incomplete predictor file {path}: {e}")
        raise

    logger.debug(f"Loaded predictors from {path}")
    return predictors


def save_predictors(predictors: PredictorSet, path: Union[str, Path]) -> None:
    """
    Write a predictor file.

    Raises:
        PredictorFileException: If the file cannot be written
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(predictors.to_file_dict(), indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        get_logger().error(f"Could not write predictor file {path}: {e}")
        raise PredictorFileException(str(e), str(path)) from e
