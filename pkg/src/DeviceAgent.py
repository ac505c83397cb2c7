"""Device side of co-inference: probe the uplink, plan, then run the plan with the edge."""

import asyncio
import time
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from .BranchyModel import BranchyModel, LayerSpec, load_model
from .Kernels import FLOAT_BYTES, LayerExecutor
from .LatencyPredictor import PredictorSet, Side, load_predictors, predict_layer
from .Logger import get_logger
from .Planner import PartitionPlan, PlanRequest, forced_plan
from .Settings import DEFAULT_BANDWIDTH_KBPS, AgentConfig
from .WireProtocol import (
    PROBE_BYTES,
    Hello,
    MessageType,
    ShapedWriter,
    decode_error,
    decode_intermediate,
    decode_probe_reply,
    decode_result,
    decode_timing,
    encode_hello,
    encode_tensor,
    read_frame,
    shape
)
from .exceptions import (
    ConnectionLostException,
    InfeasiblePlanException,
    MalformedFrameException,
    RemoteErrorException
)


class DeviceRun(BaseModel):
    """Outcome of one co-inference: the executed plan, the result and wall-clock phases in ms."""

    model_config = ConfigDict(frozen=True)

    exit_index: int
    partition: int
    class_index: int
    confidence: float
    predicted_latency_ms: float
    end_to_end_ms: float
    bandwidth_bps: float
    probed: bool
    timings: Dict[str, float]
    edge_timings: Dict[str, float]


class _Connection:
    def __init__(self, reader: asyncio.StreamReader, out: ShapedWriter) -> None:
        self.reader = reader
        self.out = out


class DeviceAgent:
    """Single-session co-inference client. The optimizer runs here, next to the budget and the bandwidth estimate."""

    def __init__(
        self,
        config: AgentConfig,
        model: Optional[BranchyModel] = None,
        predictors: Optional[PredictorSet] = None
    ) -> None:
        self.logger = get_logger()
        self.config = config
        self.model = model if model is not None else load_model(config.model_path)
        self.predictors = predictors if predictors is not None else load_predictors(config.predictors_path)
        self.executor = LayerExecutor(self.model, config.seed) if config.mode == "kernels" else None

    def make_input(self, seed: Optional[int] = None) -> np.ndarray:
        if self.executor is not None:
            return self.executor.make_input(seed)
        return np.zeros(self.model.input_bytes // FLOAT_BYTES, dtype=np.float32)

    def run_local(self, exit_index: int, tensor: np.ndarray) -> Tuple[int, float]:
        """Run a whole exit chain on the device (kernels mode)."""
        output = self.executor.run_segment(self.model.chain(exit_index), tensor)
        return LayerExecutor.classify(output)

    async def _connect(self) -> _Connection:
        reader, writer = await asyncio.open_connection(self.config.host, self.config.port)
        return _Connection(reader, shape(writer, self.config.shape_bps))

    async def _expect(self, connection: _Connection, phase: str, timings: Dict[str, float]):
        try:
            frame = await read_frame(connection.reader)
        except (ConnectionError, MalformedFrameException) as e:
            raise ConnectionLostException(phase, timings, e) from e
        if frame is None:
            raise ConnectionLostException(phase, timings)
        if frame.type == MessageType.ERROR:
            code, message = decode_error(frame.payload)
            self.logger.error(f"Edge rejected the session during {phase}: [{code}] {message}")
            raise RemoteErrorException(code, message)
        return frame

    async def probe(self, connection: _Connection, timings: Dict[str, float], size: int = PROBE_BYTES) -> float:
        """
        Estimate uplink bandwidth in bps from one PROBE round trip: 8 * acknowledged bytes / elapsed.
        """
        start = time.perf_counter()
        try:
            await connection.out.send_frame(MessageType.PROBE, bytes(size))
        except (ConnectionError, OSError) as e:
            raise ConnectionLostException("probe", timings, e) from e
        frame = await self._expect(connection, "probe", timings)
        elapsed = time.perf_counter() - start
        if frame.type != MessageType.PROBE:
            raise MalformedFrameException(f"expected a PROBE reply, got type 0x{frame.type:02x}")
        received = decode_probe_reply(frame.payload)
        timings["probe_ms"] = elapsed * 1000.0
        bandwidth = 8.0 * received / elapsed
        self.logger.info(f"Probed {received} bytes in {elapsed * 1000.0:.1f} ms: {bandwidth / 1000.0:.1f} kbps")
        return bandwidth

    def choose_plan(
        self,
        budget_ms: float,
        bandwidth_bps: float,
        force_exit: Optional[int] = None,
        force_partition: Optional[int] = None,
        include_loading: bool = False
    ) -> PartitionPlan:
        """
        Pick the plan to run: forced (exit, partition), a forced exit's best partition,
        the largest exit meeting the budget at a forced partition, or the joint search.
        Forced choices are held to the budget like the joint search.

        Raises:
            InfeasiblePlanException: If nothing meets the budget
            PlanIndexException: If a forced index does not exist
        """
        request = PlanRequest.build(
            model=self.model,
            predictors=self.predictors,
            bandwidth_bps=bandwidth_bps,
            latency_budget_ms=budget_ms,
            include_loading=include_loading,
        )
        outcome = forced_plan(request, force_exit, force_partition)
        if not outcome.feasible:
            self.logger.error(f"No plan meets {budget_ms} ms at {bandwidth_bps:.0f} bps")
            raise InfeasiblePlanException(budget_ms, outcome.best.predicted_latency_ms)
        return outcome

    async def _run_segment(self, layers, tensor: np.ndarray) -> np.ndarray:
        if self.executor is not None:
            return await asyncio.to_thread(self.executor.run_segment, layers, tensor)
        delay_ms = sum(predict_layer(self.predictors, layer, Side.DEVICE) for layer in layers)
        await asyncio.sleep(delay_ms / 1000.0)
        return tensor

    def _classify(self, output: np.ndarray) -> Tuple[int, float]:
        return LayerExecutor.classify(output) if self.executor is not None else (0, 0.0)

    async def run(
        self,
        budget_ms: float,
        tensor: Optional[np.ndarray] = None,
        probe: bool = False,
        bandwidth_bps: Optional[float] = None,
        force_exit: Optional[int] = None,
        force_partition: Optional[int] = None,
        include_loading: bool = False
    ) -> DeviceRun:
        """
        One co-inference.

        Raises:
            InfeasiblePlanException: If no plan meets the budget (before any session traffic)
            ConnectionLostException: If the edge goes away mid-session, with the phases timed so far
            RemoteErrorException: If the edge answers with ERROR
        """
        timings: Dict[str, float] = {}
        connection: Optional[_Connection] = None
        tensor = self.make_input(self.config.seed) if tensor is None else tensor
        try:
            if probe:
                try:
                    connection = await self._connect()
                except OSError as e:
                    raise ConnectionLostException("connect", timings, e) from e
                bandwidth_bps = await self.probe(connection, timings)
            elif bandwidth_bps is None:
                bandwidth_bps = DEFAULT_BANDWIDTH_KBPS * 1000.0

            start = time.perf_counter()
            selected = self.choose_plan(budget_ms, bandwidth_bps, force_exit, force_partition, include_loading)
            timings["plan_ms"] = (time.perf_counter() - start) * 1000.0
            self.logger.info(
                f"Running exit {selected.exit_index} partition {selected.partition}, "
                f"predicted {selected.predicted_latency_ms:.2f} ms"
            )

            chain = self.model.chain(selected.exit_index)
            edge_timings: Dict[str, float] = {}
            start = time.perf_counter()
            if selected.partition == 0:
                output = await self._run_segment(chain, tensor)
                timings["device_compute_ms"] = (time.perf_counter() - start) * 1000.0
                class_index, confidence = self._classify(output)
            else:
                if connection is None:
                    try:
                        connection = await self._connect()
                    except OSError as e:
                        raise ConnectionLostException("connect", timings, e) from e
                class_index, confidence, edge_timings = await self._co_infer(
                    connection, selected, chain, tensor, timings, start
                )
            end_to_end_ms = (time.perf_counter() - start) * 1000.0
            timings["end_to_end_ms"] = end_to_end_ms
        finally:
            if connection is not None:
                await connection.out.close()

        self.logger.info(f"Result class {class_index} ({confidence:.4f}) in {end_to_end_ms:.2f} ms")
        return DeviceRun(
            exit_index=selected.exit_index,
            partition=selected.partition,
            class_index=class_index,
            confidence=confidence,
            predicted_latency_ms=selected.predicted_latency_ms,
            end_to_end_ms=end_to_end_ms,
            bandwidth_bps=bandwidth_bps,
            probed=probe,
            timings=timings,
            edge_timings=edge_timings,
        )

    async def _co_infer(
        self,
        connection: _Connection,
        selected: PartitionPlan,
        chain: List[LayerSpec],
        tensor: np.ndarray,
        timings: Dict[str, float],
        start: float
    ) -> Tuple[int, float, Dict[str, float]]:
        hello = Hello(
            model=self.model.name,
            exit_index=selected.exit_index,
            partition=selected.partition,
            mode=self.config.mode,
        )
        try:
            await connection.out.send_frame(MessageType.HELLO, encode_hello(hello))
            await connection.out.send_frame(MessageType.INPUT, encode_tensor(tensor))
        except (ConnectionError, OSError) as e:
            raise ConnectionLostException("upload", timings, e) from e
        timings["upload_ms"] = (time.perf_counter() - start) * 1000.0

        answer = await self._expect(connection, "edge compute", timings)
        timings["edge_wait_ms"] = (time.perf_counter() - start) * 1000.0 - timings["upload_ms"]
        report = await self._expect(connection, "timing", timings)
        if report.type != MessageType.TIMING:
            raise MalformedFrameException(f"expected TIMING, got type 0x{report.type:02x}")
        edge_timings = decode_timing(report.payload)

        if answer.type == MessageType.RESULT:
            class_index, confidence = decode_result(answer.payload)
            return class_index, confidence, edge_timings
        if answer.type != MessageType.INTERMEDIATE:
            raise MalformedFrameException(f"expected INTERMEDIATE or RESULT, got type 0x{answer.type:02x}")

        layer_index, intermediate = decode_intermediate(answer.payload)
        if layer_index != selected.partition:
            raise MalformedFrameException(f"edge stopped after layer {layer_index}, plan says {selected.partition}")
        remainder = chain[selected.partition:]
        compute_start = time.perf_counter()
        output = await self._run_segment(remainder, intermediate)
        timings["device_compute_ms"] = (time.perf_counter() - compute_start) * 1000.0
        class_index, confidence = self._classify(output)
        return class_index, confidence, edge_timings


def run_device(config: AgentConfig, budget_ms: float, **options) -> DeviceRun:
    """Run one co-inference from synchronous code; `options` are DeviceAgent.run keywords."""
    return asyncio.run(DeviceAgent(config).run(budget_ms, **options))
