"""Online optimization: joint exit-point / partition-point search under a latency budget.

Partition convention: p is the number of layers executed on the edge. The edge runs
layers 1..p of the exit's chain, the device runs p+1..N_i; p = 0 is device-only and
p = N_i is edge-only.
"""

from typing import Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .BranchyModel import BranchyModel
from .LatencyPredictor import MODEL_LOADING, PredictorSet, Side, predict, predict_layer
from .Logger import get_logger
from .exceptions import ModelRangeException, PlanIndexException, PlanRequestException

# Order in which latency terms are summed everywhere
TERM_FIELDS = (
    "edge_compute_ms",
    "device_compute_ms",
    "input_transfer_ms",
    "intermediate_transfer_ms",
    "loading_ms",
    "result_transfer_ms",
)

Terms = Tuple[float, float, float, float, float, float]


class PlanRequest(BaseModel):
    """Inputs of one planning call: model, predictors, bandwidth B and the latency budget."""

    model_config = ConfigDict(frozen=True)

    model: BranchyModel
    predictors: PredictorSet
    bandwidth_bps: float = Field(gt=0)
    latency_budget_ms: float = Field(gt=0)
    include_loading: bool = False
    count_result_transfer: bool = False
    input_bytes: Optional[int] = Field(default=None, ge=0)

    @classmethod
    def build(cls, **fields) -> "PlanRequest":
        """
        Validate a request.

        Raises:
            PlanRequestException: If bandwidth or budget are not positive
        """
        try:
            return cls(**fields)
        except ValidationError as e:
            first = e.errors()[0]
            location = ".".join(str(part) for part in first["loc"])
            raise PlanRequestException(f"{location}: {first['msg']}") from e

    @property
    def payload_bytes(self) -> int:
        return self.model.input_bytes if self.input_bytes is None else self.input_bytes


class SegmentTimings(BaseModel):
    """Per-layer predictions along one exit's chain: ED_j, ES_j and D_j."""

    model_config = ConfigDict(frozen=True)

    device_ms: Tuple[float, ...]
    edge_ms: Tuple[float, ...]
    output_bytes: Tuple[int, ...]
    param_bytes: Tuple[int, ...]

    @model_validator(mode="after")
    def _aligned(self) -> "SegmentTimings":
        length = len(self.device_ms)
        if not (len(self.edge_ms) == len(self.output_bytes) == len(self.param_bytes) == length):
            raise ValueError("per-layer lists must share one length")
        if any(value < 0 for value in self.device_ms + self.edge_ms):
            raise ValueError("layer latencies must be >= 0")
        return self

    def __len__(self) -> int:
        return len(self.device_ms)


class LatencyBreakdown(BaseModel):
    """Components of a predicted end-to-end latency, in ms."""

    model_config = ConfigDict(frozen=True)

    edge_compute_ms: float = 0.0
    device_compute_ms: float = 0.0
    input_transfer_ms: float = 0.0
    intermediate_transfer_ms: float = 0.0
    loading_ms: float = 0.0
    result_transfer_ms: float = 0.0

    def terms(self) -> Terms:
        return tuple(getattr(self, field) for field in TERM_FIELDS)

    def total(self) -> float:
        return sum(self.terms())


class PartitionPlan(BaseModel):
    """A selected (exit, partition) pair with its predicted latency."""

    model_config = ConfigDict(frozen=True)

    exit_index: int = Field(ge=1)
    partition: int = Field(ge=0)
    predicted_latency_ms: float
    accuracy: float
    breakdown: LatencyBreakdown

    @property
    def feasible(self) -> bool:
        return True


class Infeasible(BaseModel):
    """No pair meets the budget; `best` is the smallest-latency pair found."""

    model_config = ConfigDict(frozen=True)

    best: PartitionPlan
    latency_budget_ms: float

    @property
    def feasible(self) -> bool:
        return False


PlanOutcome = Union[PartitionPlan, Infeasible]


def transfer_ms(num_bytes: float, bandwidth_bps: float) -> float:
    """Time to push `num_bytes` over a link of `bandwidth_bps` bits per second."""
    return 8.0 * num_bytes / bandwidth_bps * 1000.0


def _layer_latencies(model: BranchyModel, predictors: PredictorSet, names) -> Dict[str, Tuple[float, float]]:
    return {
        name: (
            predict_layer(predictors, model.layers[name], Side.DEVICE),
            predict_layer(predictors, model.layers[name], Side.EDGE),
        )
        for name in names
    }


def _check_exit(model: BranchyModel, exit_index: int) -> None:
    try:
        model.exit(exit_index)
    except ModelRangeException as e:
        raise PlanIndexException(e.message) from e


def segment_timings(model: BranchyModel, predictors: PredictorSet, exit_index: int) -> SegmentTimings:
    """
    Predict ED_j and ES_j for every layer of an exit's chain.

    Raises:
        PlanIndexException: If the exit does not exist
    """
    _check_exit(model, exit_index)
    return _timings_from_cache(model, exit_index, _layer_latencies(model, predictors, model.exit(exit_index).layers))


def _timings_from_cache(model: BranchyModel, exit_index: int, cache: Dict[str, Tuple[float, float]]) -> SegmentTimings:
    chain = model.chain(exit_index)
    return SegmentTimings.model_construct(
        device_ms=tuple(cache[layer.name][0] for layer in chain),
        edge_ms=tuple(cache[layer.name][1] for layer in chain),
        output_bytes=tuple(layer.output_bytes for layer in chain),
        param_bytes=tuple(layer.param_bytes for layer in chain),
    )


def partition_latencies(
    timings: SegmentTimings,
    predictors: PredictorSet,
    input_bytes: int,
    bandwidth_bps: float,
    include_loading: bool = False,
    count_result_transfer: bool = False
) -> List[Terms]:
    """
    Latency terms of every partition p = 0..N_i of one exit.

    This is the single latency kernel: planner, oracle and simulator all read
    their numbers from here, so equal inputs give bit-identical latencies.
    """
    n = len(timings)

    edge_prefix = [0.0] * (n + 1)
    param_prefix = [0] * (n + 1)
    for j in range(n):
        edge_prefix[j + 1] = edge_prefix[j] + timings.edge_ms[j]
        param_prefix[j + 1] = param_prefix[j] + timings.param_bytes[j]

    device_suffix = [0.0] * (n + 1)
    for j in range(n - 1, -1, -1):
        device_suffix[j] = timings.device_ms[j] + device_suffix[j + 1]

    input_transfer = transfer_ms(input_bytes, bandwidth_bps)
    result_transfer = transfer_ms(timings.output_bytes[-1], bandwidth_bps) if count_result_transfer else 0.0
    if include_loading:
        device_loader = predictors.regression(Side.DEVICE, MODEL_LOADING)
        edge_loader = predictors.regression(Side.EDGE, MODEL_LOADING)

    candidates = []
    for p in range(n + 1):
        intermediate = transfer_ms(timings.output_bytes[p - 1], bandwidth_bps) if 0 < p < n else 0.0
        loading = 0.0
        if include_loading:
            if p < n:
                loading += predict(device_loader, (float(param_prefix[n] - param_prefix[p]),))
            if p > 0:
                loading += predict(edge_loader, (float(param_prefix[p]),))
        candidates.append((
            edge_prefix[p],
            device_suffix[p],
            input_transfer if p > 0 else 0.0,
            intermediate,
            loading,
            result_transfer if p > 0 else 0.0,
        ))
    return candidates


def _make_plan(model: BranchyModel, exit_index: int, partition: int, terms: Terms) -> PartitionPlan:
    breakdown = LatencyBreakdown(**dict(zip(TERM_FIELDS, terms)))
    return PartitionPlan(
        exit_index=exit_index,
        partition=partition,
        predicted_latency_ms=breakdown.total(),
        accuracy=model.exit(exit_index).accuracy,
        breakdown=breakdown,
    )


def _argmin_partition(candidates: List[Terms]) -> Tuple[int, float]:
    best_p, best_latency = 0, sum(candidates[0])
    for p in range(1, len(candidates)):
        latency = sum(candidates[p])
        if latency < best_latency:
            best_p, best_latency = p, latency
    return best_p, best_latency


def evaluate(
    model: BranchyModel,
    predictors: PredictorSet,
    exit_index: int,
    partition: int,
    bandwidth_bps: float,
    include_loading: bool = False,
    count_result_transfer: bool = False,
    input_bytes: Optional[int] = None
) -> PartitionPlan:
    """
    Predicted latency of one (exit, partition) pair, with its breakdown.

    Raises:
        PlanIndexException: If the exit or partition is out of range
    """
    _check_exit(model, exit_index)
    n = model.chain_length(exit_index)
    if not 0 <= partition <= n:
        raise PlanIndexException(f"Partition {partition} is outside 0..{n} for exit {exit_index}")
    candidates = partition_latencies(
        segment_timings(model, predictors, exit_index),
        predictors,
        model.input_bytes if input_bytes is None else input_bytes,
        bandwidth_bps,
        include_loading,
        count_result_transfer,
    )
    return _make_plan(model, exit_index, partition, candidates[partition])


def best_partition(
    model: BranchyModel,
    predictors: PredictorSet,
    exit_index: int,
    bandwidth_bps: float,
    include_loading: bool = False,
    count_result_transfer: bool = False,
    input_bytes: Optional[int] = None
) -> PartitionPlan:
    """
    The partition of one exit with the smallest predicted latency; ties go to the smaller p.

    Raises:
        PlanIndexException: If the exit does not exist
    """
    _check_exit(model, exit_index)
    candidates = partition_latencies(
        segment_timings(model, predictors, exit_index),
        predictors,
        model.input_bytes if input_bytes is None else input_bytes,
        bandwidth_bps,
        include_loading,
        count_result_transfer,
    )
    p, _ = _argmin_partition(candidates)
    return _make_plan(model, exit_index, p, candidates[p])


def exit_candidates(request: PlanRequest) -> Dict[int, List[Terms]]:
    """Latency terms of every (exit, partition) pair, keyed by exit index."""
    model = request.model
    cache = _layer_latencies(model, request.predictors, model.layers)
    return {
        branch.index: partition_latencies(
            _timings_from_cache(model, branch.index, cache),
            request.predictors,
            request.payload_bytes,
            request.bandwidth_bps,
            request.include_loading,
            request.count_result_transfer,
        )
        for branch in model.exits
    }


def plan(request: PlanRequest) -> PlanOutcome:
    """
    Exit point and partition point search.

    Exits are tried from M down to 1; the first whose best partition meets the
    budget is returned, which maximizes the exit index and hence accuracy.

    Returns:
        The selected PartitionPlan, or Infeasible carrying the smallest-latency pair
    """
    model = request.model
    cache = _layer_latencies(model, request.predictors, model.layers)

    best: Optional[Tuple[float, int, int, Terms]] = None
    for exit_index in range(model.num_exits, 0, -1):
        candidates = partition_latencies(
            _timings_from_cache(model, exit_index, cache),
            request.predictors,
            request.payload_bytes,
            request.bandwidth_bps,
            request.include_loading,
            request.count_result_transfer,
        )
        p, latency = _argmin_partition(candidates)
        if latency <= request.latency_budget_ms:
            return _make_plan(model, exit_index, p, candidates[p])
        # Descending exits: strict < keeps the larger exit on ties
        if best is None or latency < best[0]:
            best = (latency, exit_index, p, candidates[p])

    get_logger().debug(
        f"No plan for '{model.name}' meets {request.latency_budget_ms} ms at {request.bandwidth_bps} bps"
    )
    _, exit_index, p, terms = best
    return Infeasible(best=_make_plan(model, exit_index, p, terms), latency_budget_ms=request.latency_budget_ms)


def brute_force_plan(request: PlanRequest) -> PlanOutcome:
    """
    Exhaustive oracle: enumerate every (exit, partition), keep those within budget,
    then pick the largest exit, the smallest latency and the smallest p.
    """
    everything = [
        (exit_index, p, sum(terms), terms)
        for exit_index, candidates in exit_candidates(request).items()
        for p, terms in enumerate(candidates)
    ]
    feasible = [entry for entry in everything if entry[2] <= request.latency_budget_ms]
    if feasible:
        exit_index, p, _, terms = min(feasible, key=lambda entry: (-entry[0], entry[2], entry[1]))
        return _make_plan(request.model, exit_index, p, terms)

    exit_index, p, _, terms = min(everything, key=lambda entry: (entry[2], -entry[0], entry[1]))
    return Infeasible(best=_make_plan(request.model, exit_index, p, terms), latency_budget_ms=request.latency_budget_ms)


def forced_plan(
    request: PlanRequest,
    force_exit: Optional[int] = None,
    force_partition: Optional[int] = None
) -> PlanOutcome:
    """
    Plan with the exit, the partition or both pinned.

    Both pinned: that pair. Exit pinned: its best partition. Partition pinned: the
    largest exit whose chain holds that partition and meets the budget. Nothing
    pinned: plan(request). Every variant is checked against the budget; when it is
    missed, Infeasible carries the smallest-latency candidate (larger exit on ties).

    Raises:
        PlanIndexException: If a pinned index does not exist
    """
    if force_exit is None and force_partition is None:
        return plan(request)

    model = request.model
    options = dict(
        bandwidth_bps=request.bandwidth_bps,
        include_loading=request.include_loading,
        count_result_transfer=request.count_result_transfer,
        input_bytes=request.input_bytes,
    )
    if force_exit is not None and force_partition is not None:
        candidates = [evaluate(model, request.predictors, force_exit, force_partition, **options)]
    elif force_exit is not None:
        candidates = [best_partition(model, request.predictors, force_exit, **options)]
    else:
        exits = [
            index for index in range(model.num_exits, 0, -1)
            if force_partition <= model.chain_length(index)
        ]
        if not exits:
            raise PlanIndexException(f"Partition {force_partition} exceeds every exit's chain")
        candidates = [evaluate(model, request.predictors, index, force_partition, **options) for index in exits]

    for candidate in candidates:
        if candidate.predicted_latency_ms <= request.latency_budget_ms:
            return candidate
    best = min(candidates, key=lambda candidate: candidate.predicted_latency_ms)
    return Infeasible(best=best, latency_budget_ms=request.latency_budget_ms)
