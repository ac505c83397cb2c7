"""Output documents of the CLI subcommands.

Each report serializes to JSON (the shapes under docs/schemas/) and flattens to a
pandas DataFrame for table and CSV output.
"""

from typing import Dict, List, Literal, Optional

import pandas as pd
from pydantic import BaseModel, ConfigDict

from .DeviceAgent import DeviceRun
from .Planner import PartitionPlan, PlanOutcome, PlanRequest
from .Simulator import SweepRow


class Report(BaseModel):
    model_config = ConfigDict(frozen=True)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([self.model_dump(mode="json")])

    def render(self, output_format: str) -> str:
        if output_format == "json":
            return self.model_dump_json(indent=2)
        frame = self.to_frame()
        if output_format == "csv":
            return frame.to_csv(index=False).rstrip("\n")
        return frame.to_string(index=False)


class BreakdownDoc(BaseModel):
    edge_compute_ms: float
    device_compute_ms: float
    input_transfer_ms: float
    intermediate_transfer_ms: float
    loading_ms: float
    result_transfer_ms: float


class PlanReport(Report):
    """Selected (or best-effort, when infeasible) exit and partition.

    An infeasible report keeps the best-effort exit's accuracy; `feasible` tells the two apart.
    """

    exit: int
    partition: int
    predicted_latency_ms: float
    accuracy: float
    feasible: bool
    bandwidth_kbps: float
    latency_budget_ms: float
    breakdown: BreakdownDoc

    @classmethod
    def from_outcome(cls, outcome: PlanOutcome, request: PlanRequest) -> "PlanReport":
        selected: PartitionPlan = outcome if outcome.feasible else outcome.best
        return cls(
            exit=selected.exit_index,
            partition=selected.partition,
            predicted_latency_ms=selected.predicted_latency_ms,
            accuracy=selected.accuracy,
            feasible=outcome.feasible,
            bandwidth_kbps=request.bandwidth_bps / 1000.0,
            latency_budget_ms=request.latency_budget_ms,
            breakdown=BreakdownDoc(**selected.breakdown.model_dump()),
        )

    def to_frame(self) -> pd.DataFrame:
        record = self.model_dump(mode="json", exclude={"breakdown"})
        record.update(self.breakdown.model_dump())
        return pd.DataFrame([record])


class SweepRowDoc(BaseModel):
    axis_value: float
    exit: int
    partition: int
    latency_ms: float
    accuracy: float
    feasible: bool

    @classmethod
    def from_row(cls, row: SweepRow) -> "SweepRowDoc":
        return cls(
            axis_value=row.axis_value,
            exit=row.exit_index,
            partition=row.partition,
            latency_ms=row.latency_ms,
            accuracy=row.accuracy,
            feasible=row.feasible,
        )


class SweepReport(Report):
    axis: Literal["bandwidth", "budget"]
    fixed: float
    out: Optional[str] = None
    rows: List[SweepRowDoc]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.model_dump() for row in self.rows], columns=list(SweepRowDoc.model_fields))


class CompareRowDoc(BaseModel):
    budget_ms: float
    device_only: float
    edge_only: float
    partition_only: float
    edgent: float


class CompareReport(Report):
    bandwidth_kbps: float
    out: Optional[str] = None
    rows: List[CompareRowDoc]

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, bandwidth_kbps: float, out: Optional[str]) -> "CompareReport":
        return cls(
            bandwidth_kbps=bandwidth_kbps,
            out=out,
            rows=[CompareRowDoc(**record) for record in frame.to_dict(orient="records")],
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.model_dump() for row in self.rows], columns=list(CompareRowDoc.model_fields))


class SimulatePointDoc(BaseModel):
    bandwidth_kbps: float
    latency_ms: float
    exit: Optional[int] = None
    partition: Optional[int] = None
    predicted_latency_ms: Optional[float] = None


class SimulateReport(Report):
    scenario: Literal["edge-only", "plan"]
    jitter: float
    seed: Optional[int] = None
    points: List[SimulatePointDoc]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([point.model_dump() for point in self.points], columns=list(SimulatePointDoc.model_fields))


class DeviceReport(Report):
    exit: int
    partition: int
    class_index: int
    confidence: float
    predicted_latency_ms: float
    end_to_end_ms: float
    bandwidth_kbps: float
    probed: bool
    timings: Dict[str, float]
    edge_timings: Dict[str, float]

    @classmethod
    def from_run(cls, run: DeviceRun) -> "DeviceReport":
        return cls(
            exit=run.exit_index,
            partition=run.partition,
            class_index=run.class_index,
            confidence=run.confidence,
            predicted_latency_ms=run.predicted_latency_ms,
            end_to_end_ms=run.end_to_end_ms,
            bandwidth_kbps=run.bandwidth_bps / 1000.0,
            probed=run.probed,
            timings=run.timings,
            edge_timings=run.edge_timings,
        )

    def to_frame(self) -> pd.DataFrame:
        record = self.model_dump(mode="json", exclude={"timings", "edge_timings"})
        record.update(self.timings)
        record.update({f"edge_{key}" if not key.startswith("edge_") else key: value for key, value in self.edge_timings.items()})
        return pd.DataFrame([record])


class ProfileReport(Report):
    out: str
    rows: int
    kinds: Dict[str, int]
    slowdown: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{"kind": kind, "rows": count} for kind, count in self.kinds.items()],
            columns=["kind", "rows"],
        )


class RegressionDoc(BaseModel):
    w: List[float]
    b: float


class FitReport(Report):
    out: str
    side: Literal["device", "edge"]
    measurements: str
    regressions: Dict[str, RegressionDoc]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {"kind": kind, "w1": doc.w[0], "w2": doc.w[1] if len(doc.w) > 1 else None, "b": doc.b}
                for kind, doc in self.regressions.items()
            ],
            columns=["kind", "w1", "w2", "b"],
        )
