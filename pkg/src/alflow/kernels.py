"""Kernel plugin interfaces and the worker lifecycle that drives them.

A plugin owns its state exclusively and is only ever called from its own
worker thread, so implementations need not be thread safe. All
cross-kernel interaction goes through the controller over the transport;
plugins never touch the transport themselves.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass
from typing import Callable, Sequence

from .errors import DeadWorker, ProtocolError, TransportStopped
from .messages import (
    ControlSignal,
    MsgKind,
    decode_labeled_list_msg,
    decode_sample_list_msg,
    decode_sample_msg,
    encode_labeled_list_msg,
    encode_sample_list_msg,
    encode_sample_msg,
    kind_of,
    recv_data,
    resolve_data,
    send_data,
    send_signal,
)
from .transport import EXCHANGE, MANAGER, Kernel, Tag, Transport, WorkerId
from .types import (
    LabeledSample,
    Sample,
    WeightVector,
    WorkflowConfig,
    deserialize_weight_vector,
    serialize_weight_vector,
)


# --- simulated time ----------------------------------------------------------


class Clock:
    """Time source handed to plugins so latency simulation works in both
    the concurrent runtime (real sleeps) and the deterministic replay
    runtime (virtual time)."""

    def now(self) -> float:
        raise NotImplementedError

    def sleep(self, duration: float) -> None:
        raise NotImplementedError


class WallClock(Clock):
    """Real time; sleeps wake early when the run is stopping."""

    def __init__(self, stop_event: threading.Event | None = None):
        self._stop = stop_event

    def now(self) -> float:
        return time.monotonic()

    def sleep(self, duration: float) -> None:
        deadline = time.monotonic() + duration
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return
            if self._stop is None:
                time.sleep(remaining)
            elif self._stop.wait(remaining):
                return


class VirtualClock(Clock):
    """Deterministic time: sleeping just advances the counter."""

    def __init__(self):
        self.value = 0.0

    def now(self) -> float:
        return self.value

    def sleep(self, duration: float) -> None:
        self.value += duration


# --- plugin interfaces -------------------------------------------------------


class KernelPlugin:
    """Lifecycle hooks shared by all four kernel interfaces."""

    def save_progress(self) -> None:
        """Append current state to this worker's progress file."""

    def stop_run(self) -> None:
        """Flush and release resources; called exactly once at shutdown."""


class PredictorPlugin(KernelPlugin):
    def predict(self, batch: Sequence[Sample]) -> list[Sample]:
        """One prediction per generator input, in generator rank order."""
        raise NotImplementedError

    def update(self, weights: WeightVector) -> None:
        """Replace model parameters; raises SizeMismatch on a bad vector."""
        raise NotImplementedError

    def weight_size(self) -> int:
        raise NotImplementedError


class GeneratorPlugin(KernelPlugin):
    def generate(self, feedback: Sample | None) -> tuple[bool, Sample]:
        """Produce the next query point; feedback is None on the first call.

        Returning stop=True asks the controller to shut the whole run down.
        """
        raise NotImplementedError


class OraclePlugin(KernelPlugin):
    def label(self, inp: Sample) -> Sample:
        raise NotImplementedError


class TrainerPlugin(KernelPlugin):
    def add_trainingset(self, points: Sequence[LabeledSample]) -> None:
        raise NotImplementedError

    def retrain(self, interrupt: Callable[[], bool]) -> bool:
        """Train until ``interrupt()`` fires or an own stopping rule triggers.

        The interrupt must be polled at every epoch boundary. Returning
        True asks the controller to shut the whole run down.
        """
        raise NotImplementedError

    def get_weight(self) -> WeightVector:
        raise NotImplementedError

    def infer(self, batch: Sequence[Sample]) -> list[Sample]:
        """Predict with the trainer-side model (used for post-retrain
        re-scoring of the oracle buffer and for sync checks)."""
        raise NotImplementedError


# --- worker lifecycle --------------------------------------------------------


@dataclass
class WorkerContext:
    worker: WorkerId
    transport: Transport
    config: WorkflowConfig
    stop_event: threading.Event
    logger: logging.Logger
    # paired predictor for a trainer's weight sync; None elsewhere
    paired_predictor: WorkerId | None = None


class _StopWorker(Exception):
    """Internal: the worker observed a stop request."""


class Worker:
    """Runs one plugin's lifecycle loop on one thread."""

    def __init__(self, ctx: WorkerContext, plugin: KernelPlugin):
        self.ctx = ctx
        self.plugin = plugin
        self._cleaned_up = False
        self._last_snapshot = time.monotonic()
        self.failed: Exception | None = None

    # entry point for threading.Thread(target=...)
    def run(self) -> None:
        try:
            self._loop()
        except (_StopWorker, TransportStopped, DeadWorker):
            pass
        except Exception as exc:  # plugin or protocol failure: fail-stop
            self.failed = exc
            self.ctx.logger.exception("worker %s failed; requesting shutdown", self.ctx.worker)
            self._send_failure_stop()
        finally:
            self._cleanup()

    def _send_failure_stop(self) -> None:
        try:
            send_signal(
                self.ctx.transport,
                self.ctx.worker,
                MANAGER,
                ControlSignal(MsgKind.STOP_RUN, self.ctx.worker, failure=True),
            )
        except (TransportStopped, DeadWorker):
            pass

    def _cleanup(self) -> None:
        if self._cleaned_up:
            return
        self._cleaned_up = True
        try:
            self.plugin.stop_run()
        except Exception:
            self.ctx.logger.exception("stop_run hook failed for %s", self.ctx.worker)
        self.ctx.transport.retire(self.ctx.worker)

    # -- shared helpers ---------------------------------------------------

    def _check_signal(self, env) -> None:
        """Raise _StopWorker on a shutdown signal; anything else passes through."""
        if env is not None and env.tag == Tag.SIGNAL:
            sig = ControlSignal.decode(env.payload)
            if sig.kind == MsgKind.STOP_RUN:
                raise _StopWorker

    def _maybe_snapshot(self) -> None:
        now = time.monotonic()
        if now - self._last_snapshot >= self.ctx.config.progress_save_interval:
            self._last_snapshot = now
            self.plugin.save_progress()

    def _poll_timeout(self) -> float:
        remaining = self.ctx.config.progress_save_interval - (
            time.monotonic() - self._last_snapshot
        )
        return max(0.01, min(remaining, 0.25))

    def _recv_loop(self, src: WorkerId, data: bool = True):
        """Receive from one source, taking snapshots while idle."""
        fixed = self.ctx.config.fixed_size_data
        while True:
            if data:
                env = recv_data(
                    self.ctx.transport, self.ctx.worker, src, fixed, timeout=self._poll_timeout()
                )
            else:
                env = self.ctx.transport.recv(self.ctx.worker, src, timeout=self._poll_timeout())
            if env is not None:
                self._check_signal(env)
                return env
            self._maybe_snapshot()
            if self.ctx.stop_event.is_set():
                raise _StopWorker

    def _await_stop(self) -> None:
        """Idle until the controller finishes shutdown."""
        while not self.ctx.stop_event.wait(0.05):
            pass

    def _loop(self) -> None:
        raise NotImplementedError


class GeneratorWorker(Worker):
    """Feeds query points into the exchange loop and reacts to feedback."""

    plugin: GeneratorPlugin

    def _loop(self) -> None:
        cfg = self.ctx.config
        stop, sample = self.plugin.generate(None)
        while True:
            if stop:
                self.ctx.logger.info("%s: stop condition met", self.ctx.worker)
                send_signal(
                    self.ctx.transport,
                    self.ctx.worker,
                    MANAGER,
                    ControlSignal(MsgKind.STOP_RUN, self.ctx.worker),
                )
                self._await_stop()
                return
            send_data(
                self.ctx.transport,
                self.ctx.worker,
                EXCHANGE,
                encode_sample_msg(MsgKind.GEN_INPUT, sample, cfg.fixed_size_data),
                cfg.fixed_size_data,
            )
            env = self._recv_loop(EXCHANGE)
            feedback = decode_sample_msg(env.payload, cfg.fixed_size_data)
            self._maybe_snapshot()
            stop, sample = self.plugin.generate(feedback)


class PredictorWorker(Worker):
    """Serves committee predictions and applies weight updates between rounds."""

    plugin: PredictorPlugin

    def __init__(self, ctx: WorkerContext, plugin: PredictorPlugin):
        super().__init__(ctx, plugin)
        self._paired_trainer = WorkerId(Kernel.TRAINING, ctx.worker.rank)

    def _drain_weights(self) -> None:
        transport = self.ctx.transport
        while transport.probe(self.ctx.worker, self._paired_trainer):
            env = transport.recv(self.ctx.worker, self._paired_trainer)
            self._check_signal(env)
            if env.tag != Tag.WEIGHTS:
                raise ProtocolError(f"expected weights from {env.src}, got {env.tag.name}")
            self.plugin.update(deserialize_weight_vector(env.payload))
            self.ctx.logger.debug("%s: weights updated", self.ctx.worker)

    def _loop(self) -> None:
        cfg = self.ctx.config
        n_gene = cfg.gene_workers
        while True:
            if cfg.training_enabled:
                self._drain_weights()
            env = recv_data(
                self.ctx.transport,
                self.ctx.worker,
                EXCHANGE,
                cfg.fixed_size_data,
                timeout=self._poll_timeout(),
            )
            if env is None:
                self._maybe_snapshot()
                if self.ctx.stop_event.is_set():
                    raise _StopWorker
                continue
            self._check_signal(env)
            batch = decode_sample_list_msg(env.payload)
            outputs = self.plugin.predict(batch)
            if len(outputs) != n_gene:
                raise ProtocolError(
                    f"predictor returned {len(outputs)} outputs for {n_gene} generators"
                )
            send_data(
                self.ctx.transport,
                self.ctx.worker,
                EXCHANGE,
                encode_sample_list_msg(MsgKind.PRED_RESULT, outputs),
                cfg.fixed_size_data,
            )


class OracleWorker(Worker):
    """Labels one buffered input at a time, reporting back to the manager."""

    plugin: OraclePlugin

    def _loop(self) -> None:
        cfg = self.ctx.config
        while True:
            env = recv_data(
                self.ctx.transport,
                self.ctx.worker,
                MANAGER,
                cfg.fixed_size_data,
                timeout=self._poll_timeout(),
            )
            if env is None:
                self._maybe_snapshot()
                if self.ctx.stop_event.is_set():
                    raise _StopWorker
                continue
            self._check_signal(env)
            if kind_of(env) != MsgKind.ORACLE_JOB:
                raise ProtocolError(f"oracle got unexpected {kind_of(env).name}")
            inp = decode_sample_msg(env.payload, cfg.fixed_size_data)
            label = self.plugin.label(inp)
            if self.ctx.stop_event.is_set():
                raise _StopWorker
            send_data(
                self.ctx.transport,
                self.ctx.worker,
                MANAGER,
                encode_labeled_list_msg(MsgKind.ORACLE_RESULT, [LabeledSample(inp, label)]),
                cfg.fixed_size_data,
            )


class TrainerWorker(Worker):
    """Grows the dataset on each broadcast, retrains, and syncs weights."""

    plugin: TrainerPlugin

    def _interrupt(self) -> bool:
        return self.ctx.stop_event.is_set() or self.ctx.transport.probe(
            self.ctx.worker, MANAGER
        )

    def _loop(self) -> None:
        cfg = self.ctx.config
        transport = self.ctx.transport
        while True:
            env = self._recv_loop(MANAGER, data=False)
            if env.tag == Tag.SIGNAL:
                sig = ControlSignal.decode(env.payload)
                if sig.kind != MsgKind.NEW_DATA_ARRIVED:
                    raise ProtocolError(f"trainer got unexpected signal {sig.kind.name}")
                data_env = recv_data(transport, self.ctx.worker, MANAGER, cfg.fixed_size_data)
                if kind_of(data_env) != MsgKind.TRAIN_BROADCAST:
                    raise ProtocolError("new-data signal not followed by a training broadcast")
                batch = decode_labeled_list_msg(data_env.payload)
                self.plugin.add_trainingset(batch)
                stop = self.plugin.retrain(self._interrupt)
                weights = self.plugin.get_weight()
                if self.ctx.paired_predictor is not None:
                    try:
                        transport.send(
                            self.ctx.worker,
                            self.ctx.paired_predictor,
                            Tag.WEIGHTS,
                            serialize_weight_vector(weights),
                        )
                    except DeadWorker:
                        pass  # predictor already gone during shutdown
                send_signal(
                    transport,
                    self.ctx.worker,
                    MANAGER,
                    ControlSignal(MsgKind.WEIGHT_SYNC, self.ctx.worker),
                )
                self.plugin.save_progress()
                self._last_snapshot = time.monotonic()
                if stop:
                    self.ctx.logger.info("%s: stop condition met", self.ctx.worker)
                    send_signal(
                        transport,
                        self.ctx.worker,
                        MANAGER,
                        ControlSignal(MsgKind.STOP_RUN, self.ctx.worker),
                    )
                    self._await_stop()
                    return
            else:
                env = resolve_data(transport, self.ctx.worker, env, cfg.fixed_size_data)
                if kind_of(env) != MsgKind.BUFFER_PREDICT_REQ:
                    raise ProtocolError(f"trainer got unexpected {kind_of(env).name}")
                samples = decode_sample_list_msg(env.payload)
                outputs = self.plugin.infer(samples)
                send_data(
                    transport,
                    self.ctx.worker,
                    MANAGER,
                    encode_sample_list_msg(MsgKind.BUFFER_PREDICT_RES, outputs),
                    cfg.fixed_size_data,
                )


WORKER_CLASSES = {
    Kernel.GENERATOR: GeneratorWorker,
    Kernel.PREDICTION: PredictorWorker,
    Kernel.ORACLE: OracleWorker,
    Kernel.TRAINING: TrainerWorker,
}
