import sys
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
import pytest

# Add the project root to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.BranchyModel import BranchyModel, LayerKind, load_model
from src.LatencyPredictor import FEATURE_ARITY, MODEL_LOADING, PredictorSet, RegressionModel, load_predictors
from src.Logger import get_logger

BUNDLED_MODEL_PATH = project_root / "data" / "models" / "branchy_alexnet.json"
BUNDLED_PREDICTORS_PATH = project_root / "data" / "predictors" / "paper_predictors.json"


# ==================== BUILDERS ====================

def build_model(
    layers: Iterable[Tuple],
    exits: Iterable[Tuple[Sequence[str], float]],
    input_bytes: int,
    name: str = "toy"
) -> BranchyModel:
    """Build a model from (name, kind, input_bytes, output_bytes[, param_bytes[, conv]]) tuples."""
    layer_docs = []
    for spec in layers:
        layer_name, kind, in_bytes, out_bytes = spec[:4]
        doc = {"name": layer_name, "kind": kind, "input_bytes": in_bytes, "output_bytes": out_bytes}
        if len(spec) > 4:
            doc["param_bytes"] = spec[4]
        if len(spec) > 5:
            doc["conv"] = spec[5]
        layer_docs.append(doc)
    return BranchyModel.from_file_dict({
        "name": name,
        "input_bytes": input_bytes,
        "layers": layer_docs,
        "exits": [
            {"index": index, "layers": list(names), "accuracy": accuracy}
            for index, (names, accuracy) in enumerate(exits, start=1)
        ],
    })


def constant_predictors(
    device: Optional[Dict[str, float]] = None,
    edge: Optional[Dict[str, float]] = None,
    loading: Tuple[float, float] = (0.0, 0.0)
) -> PredictorSet:
    """Zero-weight regressions: every layer of a kind costs its intercept on that side."""
    device = device or {}
    edge = edge or {}

    def side(intercepts: Dict[str, float], loading_weight: float) -> Dict[str, RegressionModel]:
        models = {}
        for kind, arity in FEATURE_ARITY.items():
            if kind == MODEL_LOADING:
                models[kind] = RegressionModel(weights=(loading_weight,), intercept=0.0)
            else:
                models[kind] = RegressionModel(weights=(0.0,) * arity, intercept=intercepts.get(kind, 0.0))
        return models

    return PredictorSet(device=side(device, loading[0]), edge=side(edge, loading[1]))


def random_model_and_predictors(rng: np.random.Generator) -> Tuple[BranchyModel, PredictorSet]:
    """A random branchy chain (M <= 6, N_i <= 30) with random positive regressions."""
    kinds = [LayerKind.RELU, LayerKind.LOCAL_RESPONSE_NORMALIZATION, LayerKind.DROPOUT,
             LayerKind.POOLING, LayerKind.FULLY_CONNECTED, LayerKind.CONVOLUTION]
    num_exits = int(rng.integers(1, 7))
    trunk_length = int(rng.integers(num_exits, 30))
    cuts = sorted(rng.choice(np.arange(1, trunk_length + 1), size=num_exits, replace=False).tolist())

    input_bytes = int(rng.integers(1, 200_000))
    layers = []
    previous = input_bytes
    for position in range(trunk_length):
        kind = kinds[int(rng.integers(0, len(kinds)))]
        out_bytes = int(rng.integers(4, 200_000))
        conv = None
        if kind == LayerKind.CONVOLUTION:
            conv = {
                "input_feature_maps": int(rng.integers(1, 64)),
                "filter_size": int(rng.integers(1, 8)),
                "stride": int(rng.integers(1, 4)),
                "num_filters": int(rng.integers(1, 128)),
            }
        spec = (f"t{position}", kind.value, previous, out_bytes, int(rng.integers(0, 1_000_000)))
        layers.append(spec + (conv,) if conv else spec)
        previous = out_bytes

    exits = []
    for index, cut in enumerate(cuts, start=1):
        branch = f"b{index}"
        layers.append((branch, LayerKind.FULLY_CONNECTED.value, layers[cut - 1][3], 40, int(rng.integers(0, 100_000))))
        exits.append(([f"t{position}" for position in range(cut)] + [branch], min(1.0, 0.4 + 0.1 * index)))

    def side(scale: float) -> Dict[str, RegressionModel]:
        return {
            kind: RegressionModel(
                weights=tuple(float(w) for w in rng.uniform(0.0, 1e-4 * scale, size=arity)),
                intercept=float(rng.uniform(0.0, 5.0 * scale)),
            )
            for kind, arity in FEATURE_ARITY.items()
        }

    predictors = PredictorSet(device=side(1.0), edge=side(float(rng.uniform(0.05, 2.0))))
    return build_model(layers, exits, input_bytes, name="random"), predictors


# ==================== FIXTURES FOR BUNDLED DATA ====================

@pytest.fixture
def bundled_model_path():
    """Fixture providing the bundled branchy AlexNet file path."""
    return BUNDLED_MODEL_PATH


@pytest.fixture
def bundled_predictors_path():
    """Fixture providing the bundled coefficient file path."""
    return BUNDLED_PREDICTORS_PATH


@pytest.fixture
def bundled_model(bundled_model_path):
    """Fixture providing the bundled branchy AlexNet."""
    return load_model(bundled_model_path)


@pytest.fixture
def published_predictors(bundled_predictors_path):
    """Fixture providing the bundled per-kind regressions."""
    return load_predictors(bundled_predictors_path)


# ==================== FIXTURES FOR TOY MODELS ====================

@pytest.fixture
def minimal_model():
    """Fixture providing the smallest legal model: one layer, one exit."""
    return build_model(
        [("only", "relu", 400, 400, 1000)],
        [(["only"], 0.5)],
        input_bytes=400,
        name="minimal",
    )


@pytest.fixture
def three_layer_chain():
    """Fixture providing a single-exit 3-layer chain with D = [4000, 1000, 500] and 8000 input bytes."""
    return build_model(
        [
            ("l1", "relu", 8000, 4000),
            ("l2", "lrn", 4000, 1000),
            ("l3", "dropout", 1000, 500),
        ],
        [(["l1", "l2", "l3"], 0.9)],
        input_bytes=8000,
        name="chain",
    )


@pytest.fixture
def three_layer_predictors():
    """Fixture providing ED = [10, 20, 30] ms and ES = [1, 2, 3] ms for the 3-layer chain."""
    return constant_predictors(
        device={"relu": 10.0, "lrn": 20.0, "dropout": 30.0},
        edge={"relu": 1.0, "lrn": 2.0, "dropout": 3.0},
    )


@pytest.fixture
def two_exit_model():
    """Fixture providing exit 1 = [a] and exit 2 = [a, b, c]."""
    return build_model(
        [
            ("a", "relu", 8000, 4000),
            ("b", "lrn", 4000, 1000),
            ("c", "dropout", 1000, 500),
        ],
        [(["a"], 0.6), (["a", "b", "c"], 0.8)],
        input_bytes=8000,
        name="two-exit",
    )


@pytest.fixture
def two_exit_predictors():
    """Fixture making device-only best: exit 1 costs 40 ms, exit 2 costs 120 ms."""
    return constant_predictors(
        device={"relu": 40.0, "lrn": 30.0, "dropout": 50.0},
        edge={"relu": 1000.0, "lrn": 1000.0, "dropout": 1000.0},
    )


# ==================== LOGGER FIXTURE ====================

@pytest.fixture
def logger():
    """Fixture providing a logger instance."""
    return get_logger()
