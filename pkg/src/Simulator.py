"""Deterministic co-inference latency simulation, parameter sweeps and method comparison reports."""

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .BranchyModel import BranchyModel
from .LatencyPredictor import PredictorSet
from .Logger import get_logger
from .Planner import (
    PartitionPlan,
    PlanOutcome,
    PlanRequest,
    exit_candidates,
    partition_latencies,
    plan,
    segment_timings,
    transfer_ms
)
from .exceptions import PlanIndexException, PlanMismatchException, ReportWriteException, SweepSpecException

SWEEP_COLUMNS = ["axis_value", "exit", "partition", "latency_ms", "accuracy", "feasible"]
COMPARE_COLUMNS = ["budget_ms", "device_only", "edge_only", "partition_only", "edgent"]

INFEASIBLE_ACCURACY = -1.0


class ScenarioConfig(BaseModel):
    """Fixed-server-time scenario for the edge-only latency curve."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    server_compute_ms: float = Field(default=10.0, ge=0)
    input_bytes: int = Field(ge=0)
    bandwidth_bps: float = Field(gt=0)
    jitter: float = Field(default=0.0, ge=0.0, lt=1.0)
    seed: Optional[int] = None


class SweepSpec(BaseModel):
    """One-axis sweep: bandwidth grid in kbps at a fixed budget, or budget grid in ms at a fixed bandwidth."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    axis: Literal["bandwidth", "budget"]
    grid: Tuple[float, ...] = Field(min_length=1)
    fixed: float = Field(gt=0)
    model: BranchyModel
    predictors: PredictorSet
    include_loading: bool = False
    count_result_transfer: bool = False
    workers: int = Field(default=1, ge=1)

    @field_validator("grid")
    @classmethod
    def _strictly_increasing_positive(cls, grid):
        if any(value <= 0 for value in grid):
            raise ValueError("grid values must be positive")
        if any(later <= earlier for earlier, later in zip(grid, grid[1:])):
            raise ValueError("grid must be strictly increasing")
        return grid

    @classmethod
    def build(cls, **fields) -> "SweepSpec":
        """
        Validate a sweep.

        Raises:
            SweepSpecException: If the grid or fixed value is invalid
        """
        try:
            return cls(**fields)
        except ValidationError as e:
            first = e.errors()[0]
            location = ".".join(str(part) for part in first["loc"])
            raise SweepSpecException(f"{location}: {first['msg']}") from e

    def request_at(self, axis_value: float) -> PlanRequest:
        """PlanRequest for one grid point."""
        if self.axis == "bandwidth":
            bandwidth_kbps, budget_ms = axis_value, self.fixed
        else:
            bandwidth_kbps, budget_ms = self.fixed, axis_value
        return PlanRequest(
            model=self.model,
            predictors=self.predictors,
            bandwidth_bps=bandwidth_kbps * 1000.0,
            latency_budget_ms=budget_ms,
            include_loading=self.include_loading,
            count_result_transfer=self.count_result_transfer,
        )


class SweepRow(BaseModel):
    """One grid point of a sweep; infeasible rows carry the best-found pair and accuracy -1."""

    model_config = ConfigDict(frozen=True)

    axis_value: float
    exit_index: int
    partition: int
    latency_ms: float
    accuracy: float
    feasible: bool

    @classmethod
    def from_outcome(cls, axis_value: float, outcome: PlanOutcome) -> "SweepRow":
        selected = outcome if outcome.feasible else outcome.best
        return cls(
            axis_value=axis_value,
            exit_index=selected.exit_index,
            partition=selected.partition,
            latency_ms=selected.predicted_latency_ms,
            accuracy=selected.accuracy if outcome.feasible else INFEASIBLE_ACCURACY,
            feasible=outcome.feasible,
        )


def linear_grid(start: float, stop: float, steps: int) -> Tuple[float, ...]:
    """
    `steps` evenly spaced points from start to stop inclusive.

    Raises:
        SweepSpecException: If the range is empty or not positive
    """
    if steps < 1:
        raise SweepSpecException(f"steps must be >= 1, got {steps}")
    if start <= 0 or stop < start or (steps > 1 and stop == start):
        raise SweepSpecException(f"invalid grid range {start}..{stop}")
    if steps == 1:
        return (float(start),)
    return tuple(float(value) for value in np.linspace(start, stop, steps))


def _jittered(terms: Sequence[float], jitter: float, seed: Optional[int]) -> float:
    if jitter == 0.0:
        return sum(terms)
    rng = np.random.default_rng(seed)
    factors = 1.0 + rng.uniform(-jitter, jitter, size=len(terms))
    return float(sum(term * factor for term, factor in zip(terms, factors)))


def simulate_plan(
    model: BranchyModel,
    predictors: PredictorSet,
    partition_plan: PartitionPlan,
    bandwidth_bps: float,
    jitter: float = 0.0,
    seed: Optional[int] = None,
    include_loading: bool = False,
    count_result_transfer: bool = False,
    input_bytes: Optional[int] = None
) -> float:
    """
    Latency of executing a plan, in ms.

    With jitter 0 this is exactly the planner's predicted latency. Otherwise each
    term is scaled by (1 + u), u ~ U[-jitter, +jitter] from a generator seeded with `seed`.

    Raises:
        PlanMismatchException: If the plan's exit or partition does not exist in the model
    """
    if not 0.0 <= jitter < 1.0:
        raise PlanMismatchException(f"jitter must be in [0, 1), got {jitter}")
    try:
        timings = segment_timings(model, predictors, partition_plan.exit_index)
    except PlanIndexException as e:
        raise PlanMismatchException(f"Plan does not fit model '{model.name}': {e.message}") from e
    if partition_plan.partition > len(timings):
        raise PlanMismatchException(
            f"Partition {partition_plan.partition} exceeds {len(timings)} layer(s) of exit {partition_plan.exit_index}"
        )

    candidates = partition_latencies(
        timings,
        predictors,
        model.input_bytes if input_bytes is None else input_bytes,
        bandwidth_bps,
        include_loading,
        count_result_transfer,
    )
    return _jittered(candidates[partition_plan.partition], jitter, seed)


def simulate_edge_only(scenario: ScenarioConfig) -> float:
    """Upload the raw input, then a fixed server compute time: transfer(input) + server_compute_ms."""
    terms = (transfer_ms(scenario.input_bytes, scenario.bandwidth_bps), scenario.server_compute_ms)
    return _jittered(terms, scenario.jitter, scenario.seed)


def _write_frame(frame: pd.DataFrame, out: Union[str, Path]) -> Path:
    out = Path(out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(out, index=False)
    except OSError as e:
        get_logger().error(f"Could not write report {out}: {e}")
        raise ReportWriteException(str(e), str(out)) from e
    return out


def gnuplot_path(out: Union[str, Path]) -> Path:
    return Path(f"{out}.gp")


def write_gnuplot(csv_path: Union[str, Path], x_column: str, y_columns: Sequence[str], xlabel: str, ylabel: str) -> Path:
    """
    Write a gnuplot script plotting columns of a CSV report to `<csv>.png`.

    Raises:
        ReportWriteException: If the script cannot be written
    """
    csv_path = Path(csv_path)
    header = pd.read_csv(csv_path, nrows=0).columns.tolist()
    x_index = header.index(x_column) + 1
    plots = ", \\\n     ".join(
        f"'{csv_path.name}' using {x_index}:{header.index(column) + 1} with linespoints title '{column}'"
        for column in y_columns
    )
    script = (
        "set datafile separator ','\n"
        "set key autotitle columnhead\n"
        "set terminal pngcairo size 900,600\n"
        f"set output '{csv_path.stem}.png'\n"
        f"set xlabel '{xlabel}'\n"
        f"set ylabel '{ylabel}'\n"
        "set grid\n"
        f"plot {plots}\n"
    )
    target = gnuplot_path(csv_path)
    try:
        target.write_text(script, encoding="utf-8")
    except OSError as e:
        get_logger().error(f"Could not write plot script {target}: {e}")
        raise ReportWriteException(str(e), str(target)) from e
    return target


def sweep_frame(rows: Sequence[SweepRow]) -> pd.DataFrame:
    return pd.DataFrame.from_records(
        [
            {
                "axis_value": row.axis_value,
                "exit": row.exit_index,
                "partition": row.partition,
                "latency_ms": row.latency_ms,
                "accuracy": row.accuracy,
                "feasible": row.feasible,
            }
            for row in rows
        ],
        columns=SWEEP_COLUMNS,
    )


def sweep(spec: SweepSpec, out: Optional[Union[str, Path]] = None, gnuplot: bool = False) -> List[SweepRow]:
    """
    Plan at every grid point and optionally write the rows as CSV.

    Grid points are independent and run on `spec.workers` threads; rows keep grid order.

    Raises:
        ReportWriteException: If the CSV or plot script cannot be written
    """
    logger = get_logger()
    logger.info(f"Sweeping {spec.axis} over {len(spec.grid)} point(s) with {spec.workers} worker(s)")

    def run_point(axis_value: float) -> SweepRow:
        return SweepRow.from_outcome(axis_value, plan(spec.request_at(axis_value)))

    with ThreadPoolExecutor(max_workers=spec.workers) as executor:
        rows = list(executor.map(run_point, spec.grid))

    if out is not None:
        csv_path = _write_frame(sweep_frame(rows), out)
        logger.info(f"Wrote {len(rows)} sweep row(s) to {csv_path}")
        if gnuplot:
            xlabel = "bandwidth (kbps)" if spec.axis == "bandwidth" else "latency budget (ms)"
            write_gnuplot(csv_path, "axis_value", ["exit", "partition"], xlabel, "selected index")
    return rows


def _best_accuracy(model: BranchyModel, feasible_exits: Sequence[int]) -> float:
    if not feasible_exits:
        return INFEASIBLE_ACCURACY
    return model.exit(max(feasible_exits)).accuracy


def compare_methods(
    budgets_ms: Sequence[float],
    bandwidth_bps: float,
    model: BranchyModel,
    predictors: PredictorSet,
    out: Optional[Union[str, Path]] = None,
    include_loading: bool = False,
    count_result_transfer: bool = False,
    gnuplot: bool = False
) -> pd.DataFrame:
    """
    Accuracy of four inference strategies at each budget (-1 when a strategy cannot meet it).

    device_only: largest exit run fully on the device. edge_only: largest exit run fully
    on the edge. partition_only: the last exit with its best partition. edgent: joint
    exit and partition search.

    Raises:
        SweepSpecException: If the budget list is empty or not positive
        ReportWriteException: If the CSV cannot be written
    """
    if not budgets_ms or any(budget <= 0 for budget in budgets_ms):
        raise SweepSpecException("budgets must be a non-empty list of positive values")

    base = PlanRequest(
        model=model,
        predictors=predictors,
        bandwidth_bps=bandwidth_bps,
        latency_budget_ms=max(budgets_ms),
        include_loading=include_loading,
        count_result_transfer=count_result_transfer,
    )
    latencies = {
        exit_index: [sum(terms) for terms in candidates]
        for exit_index, candidates in exit_candidates(base).items()
    }
    last = model.num_exits

    records = []
    for budget in budgets_ms:
        outcome = plan(base.model_copy(update={"latency_budget_ms": budget}))
        records.append({
            "budget_ms": float(budget),
            "device_only": _best_accuracy(model, [i for i, row in latencies.items() if row[0] <= budget]),
            "edge_only": _best_accuracy(model, [i for i, row in latencies.items() if row[-1] <= budget]),
            "partition_only": _best_accuracy(model, [last] if min(latencies[last]) <= budget else []),
            "edgent": outcome.accuracy if outcome.feasible else INFEASIBLE_ACCURACY,
        })
    frame = pd.DataFrame.from_records(records, columns=COMPARE_COLUMNS)

    if out is not None:
        csv_path = _write_frame(frame, out)
        get_logger().info(f"Wrote method comparison for {len(records)} budget(s) to {csv_path}")
        if gnuplot:
            write_gnuplot(csv_path, "budget_ms", COMPARE_COLUMNS[1:], "latency budget (ms)", "accuracy")
    return frame
