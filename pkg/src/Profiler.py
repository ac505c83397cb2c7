"""Offline profiling: reference-kernel microbenchmarks, measurement CSVs and regression fitting."""

import os
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .Kernels import (
    FLOAT_BYTES,
    conv2d,
    dense,
    dropout,
    dropout_mask,
    local_response_norm,
    max_pool,
    relu
)
from .LatencyPredictor import (
    FEATURE_ARITY,
    MODEL_LOADING,
    REGRESSION_KINDS,
    FeatureVector,
    PredictorSet,
    RegressionModel,
    Side,
    fit
)
from .BranchyModel import LayerKind
from .Logger import get_logger
from .exceptions import (
    EmptyTensorException,
    FeatureArityException,
    KernelShapeException,
    MeasurementFileException,
    ProfileFitException,
    TimerResolutionException,
    UnderdeterminedFitException
)

CSV_COLUMNS = ["kind", "x1", "x2", "latency_ms"]


class BenchmarkCase(BaseModel):
    """One microbenchmark: a layer kind, its tensor geometry and the repetition plan.

    Geometry fields are read per kind: conv uses channels/side/filter_size/stride/
    num_filters; relu, lrn and dropout use channels/side; pool adds window; fc uses
    in_features/out_features; model loading uses blob_bytes.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: str
    channels: int = Field(default=1, ge=0)
    side: int = Field(default=0, ge=0)
    filter_size: int = Field(default=1, ge=1)
    stride: int = Field(default=1, ge=1)
    num_filters: int = Field(default=1, ge=0)
    window: int = Field(default=2, ge=1)
    in_features: int = Field(default=0, ge=0)
    out_features: int = Field(default=0, ge=0)
    blob_bytes: int = Field(default=0, ge=0)
    repetitions: int = Field(default=5, ge=3)
    warmup_runs: int = Field(default=1, ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def _known_kind(self) -> "BenchmarkCase":
        if self.kind not in FEATURE_ARITY:
            raise ValueError(f"unknown benchmark kind '{self.kind}'")
        return self

    def element_count(self) -> int:
        """Number of input elements (bytes for model loading)."""
        if self.kind == LayerKind.FULLY_CONNECTED.value:
            return self.in_features * self.out_features
        if self.kind == MODEL_LOADING:
            return self.blob_bytes // FLOAT_BYTES
        if self.kind == LayerKind.CONVOLUTION.value:
            return self.channels * self.side * self.side * self.num_filters
        return self.channels * self.side * self.side

    def input_bytes(self) -> int:
        if self.kind == LayerKind.FULLY_CONNECTED.value:
            return self.in_features * FLOAT_BYTES
        return self.channels * self.side * self.side * FLOAT_BYTES

    def features(self) -> FeatureVector:
        """Regression inputs for this case, matching extract_features on an equivalent layer."""
        if self.kind == LayerKind.CONVOLUTION.value:
            composite = (self.filter_size / self.stride) ** 2 * self.num_filters
            values = (float(self.channels), composite)
        elif self.kind == LayerKind.POOLING.value:
            out_side = self.side // self.window
            values = (float(self.input_bytes()), float(self.channels * out_side * out_side * FLOAT_BYTES))
        elif self.kind == LayerKind.FULLY_CONNECTED.value:
            values = (float(self.in_features * FLOAT_BYTES), float(self.out_features * FLOAT_BYTES))
        elif self.kind == MODEL_LOADING:
            values = (float(self.blob_bytes),)
        else:
            values = (float(self.input_bytes()),)
        return FeatureVector(values=values)

    def make_input(self) -> Union[np.ndarray, bytes]:
        """Seeded synthetic input: a float32 tensor, or a serialized blob for model loading."""
        rng = np.random.default_rng(self.seed)
        if self.kind == MODEL_LOADING:
            return rng.standard_normal(self.blob_bytes // FLOAT_BYTES).astype("<f4").tobytes()
        if self.kind == LayerKind.FULLY_CONNECTED.value:
            return rng.standard_normal(self.in_features).astype(np.float32)
        return rng.standard_normal((self.channels, self.side, self.side)).astype(np.float32)


class MeasurementRow(BaseModel):
    """Median latency of one case together with its regression features."""

    model_config = ConfigDict(frozen=True)

    kind: str
    features: FeatureVector
    latency_ms: float = Field(gt=0.0)

    @model_validator(mode="after")
    def _arity_matches_kind(self) -> "MeasurementRow":
        if self.kind not in FEATURE_ARITY:
            raise ValueError(f"unknown measurement kind '{self.kind}'")
        if len(self.features) != FEATURE_ARITY[self.kind]:
            raise ValueError(
                f"'{self.kind}' needs {FEATURE_ARITY[self.kind]} feature(s), got {len(self.features)}"
            )
        return self


def _prepare_kernel(case: BenchmarkCase) -> Callable:
    """Build the case's seeded parameters and return a one-argument kernel call."""
    rng = np.random.default_rng(case.seed + 1)
    if case.kind == LayerKind.CONVOLUTION.value:
        weights = rng.standard_normal(
            (case.num_filters, case.channels, case.filter_size, case.filter_size)
        ).astype(np.float32)
        bias = np.zeros(case.num_filters, dtype=np.float32)
        return lambda x: conv2d(x, weights, bias, stride=case.stride)
    if case.kind == LayerKind.RELU.value:
        return relu
    if case.kind == LayerKind.POOLING.value:
        return lambda x: max_pool(x, case.window)
    if case.kind == LayerKind.LOCAL_RESPONSE_NORMALIZATION.value:
        return local_response_norm
    if case.kind == LayerKind.DROPOUT.value:
        mask = dropout_mask(rng, case.channels * case.side * case.side).reshape(case.channels, case.side, case.side)
        return lambda x: dropout(x, mask)
    if case.kind == LayerKind.FULLY_CONNECTED.value:
        weights = rng.standard_normal((case.out_features, case.in_features)).astype(np.float32)
        bias = np.zeros(case.out_features, dtype=np.float32)
        return lambda x: dense(x, weights, bias)
    return lambda blob: np.frombuffer(blob, dtype="<f4").copy()


def run_kernel(case: BenchmarkCase, input_tensor: Union[np.ndarray, bytes]) -> np.ndarray:
    """
    Run the reference kernel of `case` once on `input_tensor`.

    Raises:
        KernelShapeException: If the input does not match the case geometry
    """
    if case.kind == MODEL_LOADING:
        if not isinstance(input_tensor, (bytes, bytearray, memoryview)) or len(input_tensor) % FLOAT_BYTES:
            raise KernelShapeException("loading", "model-loading input must be a float32 byte blob")
    elif case.kind == LayerKind.FULLY_CONNECTED.value:
        if np.asarray(input_tensor).size != case.in_features:
            raise KernelShapeException("fc", f"expected {case.in_features} input(s), got {np.asarray(input_tensor).size}")
    elif np.asarray(input_tensor).shape != (case.channels, case.side, case.side):
        raise KernelShapeException(
            case.kind, f"expected shape {(case.channels, case.side, case.side)}, got {np.asarray(input_tensor).shape}"
        )
    return _prepare_kernel(case)(input_tensor)


@contextmanager
def _pinned_to_one_cpu():
    """Pin the process to a single logical CPU for the duration, when supported."""
    if not hasattr(os, "sched_setaffinity"):
        yield
        return
    previous = os.sched_getaffinity(0)
    try:
        os.sched_setaffinity(0, {min(previous)})
    except OSError:
        yield
        return
    try:
        yield
    finally:
        os.sched_setaffinity(0, previous)


def benchmark(case: BenchmarkCase) -> MeasurementRow:
    """
    Time a case: warm up, then record the median of `repetitions` runs.

    Raises:
        EmptyTensorException: If the case would run on a zero-element tensor
        TimerResolutionException: If the median is not measurable
    """
    if case.element_count() == 0:
        raise EmptyTensorException(case.kind)

    kernel = _prepare_kernel(case)
    data = case.make_input()

    with _pinned_to_one_cpu():
        for _ in range(case.warmup_runs):
            kernel(data)
        samples = []
        for _ in range(case.repetitions):
            start = time.perf_counter_ns()
            kernel(data)
            samples.append(time.perf_counter_ns() - start)

    median_ms = float(np.median(samples)) / 1e6
    if median_ms <= 0.0:
        raise TimerResolutionException(case.kind)
    return MeasurementRow(kind=case.kind, features=case.features(), latency_ms=median_ms)


def _ladder_suite(
    relu_sides: Sequence[int],
    pool_sides: Sequence[int],
    conv_side: int,
    conv_channels: Sequence[int],
    conv_filters: Sequence[int],
    fc_inputs: Sequence[int],
    fc_outputs: Sequence[int],
    blob_sizes: Sequence[int],
    map_channels: int,
    repetitions: int,
    warmup_runs: int,
    seed: int
) -> List[BenchmarkCase]:
    common = {"repetitions": repetitions, "warmup_runs": warmup_runs}
    cases = []
    for point, side in enumerate(relu_sides):
        for kind in (LayerKind.RELU, LayerKind.LOCAL_RESPONSE_NORMALIZATION, LayerKind.DROPOUT):
            cases.append(BenchmarkCase(kind=kind.value, channels=map_channels, side=side, seed=seed + point, **common))
    for point, side in enumerate(pool_sides):
        # Alternating windows keep the input and output sizes from being collinear
        cases.append(BenchmarkCase(
            kind=LayerKind.POOLING.value, channels=map_channels, side=side,
            window=2 if point % 2 == 0 else 4, seed=seed + point, **common
        ))
    for point, (channels, filters) in enumerate(zip(conv_channels, conv_filters)):
        cases.append(BenchmarkCase(
            kind=LayerKind.CONVOLUTION.value, channels=channels, side=conv_side,
            filter_size=3, stride=1, num_filters=filters, seed=seed + point, **common
        ))
    for point, (inputs, outputs) in enumerate(zip(fc_inputs, fc_outputs)):
        cases.append(BenchmarkCase(
            kind=LayerKind.FULLY_CONNECTED.value, in_features=inputs, out_features=outputs,
            seed=seed + point, **common
        ))
    for point, size in enumerate(blob_sizes):
        cases.append(BenchmarkCase(kind=MODEL_LOADING, blob_bytes=size, seed=seed + point, **common))
    return cases


def default_suite(seed: int = 0) -> List[BenchmarkCase]:
    """Geometric size ladder, eight points per kind, sized like small CNN layers."""
    return _ladder_suite(
        relu_sides=[8, 11, 16, 23, 32, 45, 64, 90],
        pool_sides=[8, 12, 16, 24, 32, 48, 64, 96],
        conv_side=16,
        conv_channels=[2, 4, 8, 16, 2, 4, 8, 16],
        conv_filters=[4, 4, 8, 8, 16, 16, 32, 32],
        fc_inputs=[64 * 2 ** point for point in range(8)],
        fc_outputs=[16, 64, 32, 128, 16, 64, 32, 128],
        blob_sizes=[64 * 1024 * 2 ** point for point in range(8)],
        map_channels=16,
        repetitions=7,
        warmup_runs=2,
        seed=seed
    )


def small_suite(seed: int = 0) -> List[BenchmarkCase]:
    """Same ladder shape with tiny tensors, for quick runs and tests."""
    return _ladder_suite(
        relu_sides=[2, 3, 4, 5, 6, 8, 10, 12],
        pool_sides=[4, 8, 12, 16, 20, 24, 28, 32],
        conv_side=6,
        conv_channels=[1, 2, 3, 4, 1, 2, 3, 4],
        conv_filters=[1, 1, 2, 2, 3, 3, 4, 4],
        fc_inputs=[8 * 2 ** point for point in range(8)],
        fc_outputs=[4, 8, 16, 12, 4, 8, 16, 12],
        blob_sizes=[1024 * 2 ** point for point in range(8)],
        map_channels=4,
        repetitions=3,
        warmup_runs=0,
        seed=seed
    )


def measurements_frame(rows: Sequence[MeasurementRow]) -> pd.DataFrame:
    """Tabulate rows in the measurement CSV layout (x2 empty for 1-feature kinds)."""
    records = []
    for row in rows:
        values = row.features.values
        records.append({
            "kind": row.kind,
            "x1": values[0],
            "x2": values[1] if len(values) > 1 else np.nan,
            "latency_ms": row.latency_ms,
        })
    return pd.DataFrame.from_records(records, columns=CSV_COLUMNS)


def write_measurements(rows: Sequence[MeasurementRow], out: Union[str, Path]) -> None:
    """
    Write measurement rows as CSV.

    Raises:
        MeasurementFileException: If the file cannot be written
    """
    out = Path(out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        measurements_frame(rows).to_csv(out, index=False, na_rep="")
    except OSError as e:
        get_logger().error(f"Could not write measurements to {out}: {e}")
        raise MeasurementFileException(str(e), str(out)) from e


def profile_suite(plan: Sequence[BenchmarkCase], out: Union[str, Path], slowdown: float = 1.0) -> List[MeasurementRow]:
    """
    Benchmark every case sequentially and write the measurement CSV.

    Args:
        plan: Cases to run, in order
        out: CSV destination
        slowdown: Multiplier applied to every latency (emulates a slower host)

    Returns:
        The recorded rows
    """
    logger = get_logger()
    if slowdown <= 0:
        raise ValueError("slowdown must be positive")

    logger.info(f"Profiling {len(plan)} case(s) into {out}")
    rows = []
    for position, case in enumerate(plan, start=1):
        row = benchmark(case)
        if slowdown != 1.0:
            row = row.model_copy(update={"latency_ms": row.latency_ms * slowdown})
        logger.debug(f"[{position}/{len(plan)}] {case.kind} {row.features.values} -> {row.latency_ms:.6f} ms")
        rows.append(row)

    write_measurements(rows, out)
    logger.info(f"Wrote {len(rows)} measurement row(s) to {out}")
    return rows


def read_measurements(path: Union[str, Path]) -> List[MeasurementRow]:
    """
    Parse a measurement CSV.

    Raises:
        MeasurementFileException: If the file is missing, has the wrong header or bad rows
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype={"kind": str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        get_logger().error(f"Could not read measurements {path}: {e}")
        raise MeasurementFileException(str(e), str(path)) from e

    if list(frame.columns) != CSV_COLUMNS:
        raise MeasurementFileException(f"header must be {','.join(CSV_COLUMNS)}, got {','.join(frame.columns)}", str(path))

    rows = []
    for line, record in enumerate(frame.itertuples(index=False), start=2):
        kind = str(record.kind).strip()
        if kind not in FEATURE_ARITY:
            raise MeasurementFileException(f"line {line}: unknown kind '{kind}'", str(path))
        values = [record.x1] if FEATURE_ARITY[kind] == 1 else [record.x1, record.x2]
        if any(pd.isna(value) for value in values) or pd.isna(record.latency_ms):
            raise MeasurementFileException(f"line {line}: missing value for '{kind}'", str(path))
        try:
            rows.append(MeasurementRow(
                kind=kind,
                features=FeatureVector(values=tuple(float(value) for value in values)),
                latency_ms=float(record.latency_ms)
            ))
        except ValueError as e:
            raise MeasurementFileException(f"line {line}: {e}", str(path)) from e
    return rows


def fit_from_csv(
    measurements: Union[str, Path],
    side: Union[Side, str],
    existing: Optional[PredictorSet] = None
) -> PredictorSet:
    """
    Fit every regression kind from a measurement CSV and place it on `side`.

    Without `existing`, the fitted side is mirrored onto the other side.

    Raises:
        MeasurementFileException: If the CSV cannot be parsed
        ProfileFitException: Listing each kind that is missing or cannot be fitted
    """
    logger = get_logger()
    side = Side(side)
    rows = read_measurements(measurements)

    samples: Dict[str, List[Tuple[FeatureVector, float]]] = {kind: [] for kind in REGRESSION_KINDS}
    for row in rows:
        samples[row.kind].append((row.features, row.latency_ms))

    fitted: Dict[str, RegressionModel] = {}
    failures: Dict[str, str] = {}
    for kind in REGRESSION_KINDS:
        if not samples[kind]:
            failures[kind] = "no measurements"
            continue
        try:
            fitted[kind] = fit(kind, samples[kind])
        except (UnderdeterminedFitException, FeatureArityException) as e:
            failures[kind] = e.message

    if failures:
        logger.error(f"Fitting {measurements} failed for: {', '.join(failures)}")
        raise ProfileFitException(failures)

    logger.info(f"Fitted {len(fitted)} {side.value} regression(s) from {len(rows)} row(s)")
    if existing is not None:
        return existing.with_side(side, fitted)

    logger.warning(f"No existing predictor set given; mirroring {side.value} regressions onto both sides")
    return PredictorSet(device=dict(fitted), edge=dict(fitted))
