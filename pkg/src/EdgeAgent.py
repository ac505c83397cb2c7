"""Edge side of co-inference: accepts device sessions and runs the first p layers of the planned exit."""

import asyncio
import time
from typing import Optional, Tuple

import numpy as np

from .BranchyModel import BranchyModel, load_model
from .Kernels import FLOAT_BYTES, LayerExecutor
from .LatencyPredictor import PredictorSet, Side, load_predictors, predict_layer
from .Logger import get_logger
from .Settings import AgentConfig
from .WireProtocol import (
    ErrorCode,
    Hello,
    MessageType,
    ShapedWriter,
    decode_hello,
    decode_tensor,
    encode_intermediate,
    encode_probe_reply,
    encode_result,
    encode_timing,
    read_frame,
    shape
)
from .exceptions import FrameTooLargeException, MalformedFrameException


class EdgeAgent:
    """Serves co-inference sessions, one asyncio task per connection.

    A session is HELLO -> INPUT -> INTERMEDIATE (or RESULT when the edge runs the
    whole chain) -> TIMING. PROBE frames are answered at any point before INPUT.
    """

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
        self.sessions_completed = 0
        self._server: Optional[asyncio.Server] = None

        self.logger.info(
            f"Edge agent for '{self.model.name}' in {config.mode} mode"
            + (f", shaping at {config.shape_bps:.0f} bps" if config.shape_bps else "")
        )

    async def start(self) -> Tuple[str, int]:
        """Bind the listening socket; returns the bound (host, port)."""
        self._server = await asyncio.start_server(self._handle_connection, self.config.host, self.config.port)
        host, port = self._server.sockets[0].getsockname()[:2]
        self.logger.info(f"Edge agent listening on {host}:{port}")
        return host, port

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None
            self.logger.info("Edge agent stopped")

    async def serve_forever(self) -> None:
        if self._server is None:
            await self.start()
        async with self._server:
            await self._server.serve_forever()

    async def _handle_connection(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = writer.get_extra_info("peername")
        out = shape(writer, self.config.shape_bps)
        self.logger.debug(f"Session opened by {peer}")
        try:
            await self._session(reader, out)
        except FrameTooLargeException as e:
            self.logger.warning(f"{peer}: {e}")
            await self._report(out, ErrorCode.FRAME_TOO_LARGE, e.message)
        except MalformedFrameException as e:
            self.logger.warning(f"{peer}: {e}")
            await self._report(out, ErrorCode.MALFORMED_FRAME, e.message)
        except (ConnectionError, asyncio.IncompleteReadError) as e:
            self.logger.warning(f"{peer}: connection dropped: {e}")
        except Exception as e:
            self.logger.error(f"{peer}: session failed: {e}")
            await self._report(out, ErrorCode.INTERNAL, str(e))
        finally:
            await out.close()
            self.logger.debug(f"Session with {peer} closed")

    async def _report(self, out: ShapedWriter, code: ErrorCode, message: str) -> None:
        try:
            await out.send_error(code, message)
        except (ConnectionError, OSError):
            pass

    def check_hello(self, hello: Hello) -> Optional[Tuple[ErrorCode, str]]:
        """The error to answer a HELLO with, or None when the plan can run here."""
        if hello.model != self.model.name:
            return ErrorCode.PLAN_MISMATCH, f"edge serves '{self.model.name}', not '{hello.model}'"
        if not 1 <= hello.exit_index <= self.model.num_exits:
            return ErrorCode.PLAN_MISMATCH, f"exit {hello.exit_index} is outside 1..{self.model.num_exits}"
        n = self.model.chain_length(hello.exit_index)
        if not 1 <= hello.partition <= n:
            return ErrorCode.PLAN_MISMATCH, f"partition {hello.partition} is outside 1..{n} for exit {hello.exit_index}"
        if hello.mode != self.config.mode:
            return ErrorCode.MODE_MISMATCH, f"edge runs in {self.config.mode} mode, device asked for {hello.mode}"
        return None

    async def _session(self, reader: asyncio.StreamReader, out: ShapedWriter) -> None:
        hello: Optional[Hello] = None
        while True:
            frame = await read_frame(reader)
            if frame is None:
                return
            kind = frame.known_type()

            if kind is None:
                await out.send_error(ErrorCode.UNKNOWN_TYPE, f"unknown message type 0x{frame.type:02x}")
            elif kind == MessageType.PROBE:
                await out.send_frame(MessageType.PROBE, encode_probe_reply(len(frame.payload)))
            elif kind == MessageType.HELLO and hello is None:
                candidate = decode_hello(frame.payload)
                problem = self.check_hello(candidate)
                if problem:
                    self.logger.warning(f"Rejected HELLO: {problem[1]}")
                    await out.send_error(*problem)
                else:
                    hello = candidate
            elif kind == MessageType.INPUT and hello is not None:
                await self._execute(hello, decode_tensor(frame.payload), out)
                return
            else:
                await out.send_error(ErrorCode.UNEXPECTED_MESSAGE, f"{kind.name} is not expected here")

    async def _execute(self, hello: Hello, tensor: np.ndarray, out: ShapedWriter) -> None:
        chain = self.model.chain(hello.exit_index)
        segment = chain[:hello.partition]
        edge_only = hello.partition == len(chain)

        start = time.perf_counter()
        if self.executor is not None:
            output = await asyncio.to_thread(self.executor.run_segment, segment, tensor)
        else:
            delay_ms = sum(predict_layer(self.predictors, layer, Side.EDGE) for layer in segment)
            await asyncio.sleep(delay_ms / 1000.0)
            output = np.zeros(segment[-1].output_bytes // FLOAT_BYTES, dtype=np.float32)
        compute_ms = (time.perf_counter() - start) * 1000.0

        start = time.perf_counter()
        if edge_only:
            class_index, confidence = LayerExecutor.classify(output) if self.executor is not None else (0, 0.0)
            await out.send_frame(MessageType.RESULT, encode_result(class_index, confidence))
        else:
            await out.send_frame(MessageType.INTERMEDIATE, encode_intermediate(hello.partition, output))
        send_ms = (time.perf_counter() - start) * 1000.0

        await out.send_frame(MessageType.TIMING, encode_timing({"edge_compute_ms": compute_ms, "edge_send_ms": send_ms}))
        self.sessions_completed += 1
        self.logger.info(
            f"Served exit {hello.exit_index} partition {hello.partition}: "
            f"compute {compute_ms:.2f} ms, send {send_ms:.2f} ms"
        )


def serve_edge(config: AgentConfig) -> None:
    """Run an edge agent until interrupted."""
    agent = EdgeAgent(config)
    try:
        asyncio.run(agent.serve_forever())
    except KeyboardInterrupt:
        agent.logger.info("Edge agent interrupted")
