"""The two controller roles.

The Exchange drives the high-frequency generator/prediction loop and
never waits on labeling or training. The Manager owns the oracle input
buffer and the training data buffer, dispatches labeling jobs, broadcasts
training batches, tracks weight synchronization, optionally re-scores the
oracle buffer after retraining, and owns shutdown.
"""

from __future__ import annotations

import json
import os
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DeadWorker, ProtocolError, TransportStopped
from .kernels import WorkerContext
from .messages import (
    ControlSignal,
    MsgKind,
    broadcast_data,
    decode_labeled_list_msg,
    decode_sample_list_msg,
    decode_sample_msg,
    decode_stats_msg,
    encode_labeled_list_msg,
    encode_sample_list_msg,
    encode_sample_msg,
    encode_stats_msg,
    gather_data,
    kind_of,
    resolve_data,
    send_data,
    send_signal,
)
from .transport import EXCHANGE, MANAGER, Envelope, Kernel, Tag, WorkerId
from .types import CommitteeBatch, LabeledSample, Sample

SelectionHook = Callable[[Sequence[Sample], CommitteeBatch, float], "SelectionDecision"]


@dataclass
class SelectionDecision:
    """What the selection hook decided for one exchange round."""

    to_oracle: list[Sample]
    to_generators: list[Sample]


def prediction_check(
    inputs: Sequence[Sample], batch: CommitteeBatch, threshold: float
) -> SelectionDecision:
    """Default query-by-committee selection.

    For each generator, the per-output-dimension sample standard deviation
    (Bessel-corrected) is computed across committee members. Inputs whose
    disagreement exceeds the threshold on any dimension are routed to the
    oracle and their generator gets an all-zero restart sentinel; everyone
    else gets the committee mean.
    """
    to_oracle: list[Sample] = []
    to_generators: list[Sample] = []
    for g, inp in enumerate(inputs):
        members = batch.member_matrix(g)
        std = members.std(axis=0, ddof=1)
        if bool((std > threshold).any()):
            to_oracle.append(inp)
            to_generators.append(Sample.zeros(members.shape[1]))
        else:
            to_generators.append(Sample(members.mean(axis=0)))
    return SelectionDecision(to_oracle, to_generators)


def select_all(
    inputs: Sequence[Sample], batch: CommitteeBatch, threshold: float
) -> SelectionDecision:
    """Route every input to the oracle; feedback is the committee mean.

    Useful for benchmarks where the labeling workload per round must be
    constant.
    """
    means = [Sample(batch.member_matrix(g).mean(axis=0)) for g in range(batch.n_generators)]
    return SelectionDecision(list(inputs), means)


def select_none(
    inputs: Sequence[Sample], batch: CommitteeBatch, threshold: float
) -> SelectionDecision:
    """Never label anything; pure prediction-generation mode."""
    means = [Sample(batch.member_matrix(g).mean(axis=0)) for g in range(batch.n_generators)]
    return SelectionDecision([], means)


SELECTION_HOOKS: dict[str, SelectionHook] = {
    "committee_std": prediction_check,
    "select_all": select_all,
    "none": select_none,
}


def validate_decision(
    decision: SelectionDecision, inputs: Sequence[Sample], n_generators: int
) -> None:
    """Hook results must satisfy the decision invariants regardless of
    which hook produced them."""
    if len(decision.to_generators) != n_generators:
        raise ProtocolError(
            f"selection hook returned {len(decision.to_generators)} feedback "
            f"samples for {n_generators} generators"
        )
    submitted = set(inputs)
    for s in decision.to_oracle:
        if s not in submitted:
            raise ProtocolError("selection hook routed a sample that no generator submitted")


def dedup_samples(samples: Sequence[Sample]) -> list[Sample]:
    """Drop bit-exact duplicates, keeping first occurrence order."""
    seen: set[Sample] = set()
    out = []
    for s in samples:
        if s not in seen:
            seen.add(s)
            out.append(s)
    return out


def adjust_oracle_buffer(
    entries: Sequence[Sample], fresh: CommitteeBatch, threshold: float
) -> list[Sample]:
    """Reorder and prune waiting oracle inputs using post-retrain predictions.

    Entries are sorted by mean-over-dimensions committee std, descending
    (stable, so ties keep their relative order); entries whose stds are at
    or below the threshold on every dimension are dropped.
    """
    if fresh.n_generators != len(entries):
        raise ProtocolError(
            f"adjustment needs one prediction set per entry: {fresh.n_generators} != {len(entries)}"
        )
    stds = [fresh.member_matrix(i).std(axis=0, ddof=1) for i in range(len(entries))]
    keep = [i for i in range(len(entries)) if bool((stds[i] > threshold).any())]
    ordered = sorted(keep, key=lambda i: -float(np.mean(stds[i])))
    return [entries[i] for i in ordered]


# --- buffers -----------------------------------------------------------------


class OracleInputBuffer:
    """FIFO of selected-but-unlabeled inputs awaiting an idle oracle.

    Capacity is an intake gate, not a hard error: once full, the manager
    stops consuming selection messages, which blocks the exchange-side
    sender on its bounded channel instead of dropping anything.
    """

    def __init__(self, capacity: int = 10_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.entries: deque[Sample] = deque()

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def is_full(self) -> bool:
        return len(self.entries) >= self.capacity

    def append(self, sample: Sample) -> None:
        self.entries.append(sample)

    def pop_head(self) -> Sample:
        return self.entries.popleft()

    def replace(self, entries: Sequence[Sample]) -> None:
        self.entries = deque(entries)


class TrainingDataBuffer:
    """Accumulates labeled samples; drained in full once it reaches the
    retrain threshold."""

    def __init__(self, threshold: int):
        if threshold < 1:
            raise ValueError("threshold must be >= 1")
        self.threshold = threshold
        self.entries: list[LabeledSample] = []

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, item: LabeledSample) -> bool:
        """Add one labeled sample; True when the buffer is due for a flush."""
        self.entries.append(item)
        return len(self.entries) >= self.threshold

    def flush(self) -> list[LabeledSample]:
        batch, self.entries = self.entries, []
        return batch


# --- exchange loop -----------------------------------------------------------


@dataclass
class ExchangeStats:
    rounds_completed: int = 0
    selected_total: int = 0
    loop_span: float = 0.0

    def as_dict(self) -> dict:
        return {
            "rounds_completed": self.rounds_completed,
            "selected_total": self.selected_total,
            "loop_span": self.loop_span,
        }


class Exchange:
    """Runs the gather -> broadcast -> gather -> check -> scatter cycle."""

    def __init__(self, ctx: WorkerContext, hook: SelectionHook):
        self.ctx = ctx
        self.hook = hook
        cfg = ctx.config
        self.generators = [WorkerId(Kernel.GENERATOR, r) for r in range(cfg.gene_workers)]
        self.predictors = [WorkerId(Kernel.PREDICTION, r) for r in range(cfg.pred_workers)]
        self.stats = ExchangeStats()
        self._last_snapshot = time.monotonic()

    def run(self, rounds: int) -> None:
        try:
            self._run_rounds(rounds)
            self._send_done()
            while not self.ctx.stop_event.wait(0.05):
                pass
        except (TransportStopped, DeadWorker):
            pass
        finally:
            self._save_progress()
            self.ctx.transport.retire(self.ctx.worker)

    def _run_rounds(self, rounds: int) -> None:
        start = time.perf_counter()
        for _ in range(rounds):
            if self.ctx.stop_event.is_set():
                break
            self._round()
            self.stats.rounds_completed += 1
            self.stats.loop_span = time.perf_counter() - start
            self._maybe_snapshot()

    def _round(self) -> None:
        cfg = self.ctx.config
        transport = self.ctx.transport
        fixed = cfg.fixed_size_data

        envs = gather_data(transport, self.ctx.worker, self.generators, fixed)
        inputs = [decode_sample_msg(e.payload, fixed) for e in envs]

        batch_payload = encode_sample_list_msg(MsgKind.PRED_BATCH, inputs)
        broadcast_data(transport, self.ctx.worker, batch_payload, self.predictors, fixed)

        pred_envs = gather_data(transport, self.ctx.worker, self.predictors, fixed)
        member_lists = [decode_sample_list_msg(e.payload) for e in pred_envs]
        for m, lst in enumerate(member_lists):
            if len(lst) != len(self.generators):
                raise ProtocolError(
                    f"predictor {m} returned {len(lst)} predictions for "
                    f"{len(self.generators)} generators"
                )
        committee = CommitteeBatch.from_member_major(member_lists)

        decision = self.hook(inputs, committee, cfg.selection_threshold)
        validate_decision(decision, inputs, len(self.generators))

        selected = dedup_samples(decision.to_oracle)
        if cfg.oracle_enabled and selected:
            send_data(
                transport,
                self.ctx.worker,
                MANAGER,
                encode_sample_list_msg(MsgKind.ORACLE_REQUEST, selected),
                fixed,
            )
            self.stats.selected_total += len(selected)

        payloads = [
            encode_sample_msg(MsgKind.GEN_FEEDBACK, s, fixed) for s in decision.to_generators
        ]
        for payload, dst in zip(payloads, self.generators):
            send_data(transport, self.ctx.worker, dst, payload, fixed)

    def _send_done(self) -> None:
        send_data(
            self.ctx.transport,
            self.ctx.worker,
            MANAGER,
            encode_stats_msg(MsgKind.EXCHANGE_DONE, self.stats.as_dict()),
            self.ctx.config.fixed_size_data,
        )

    def _maybe_snapshot(self) -> None:
        now = time.monotonic()
        if now - self._last_snapshot >= self.ctx.config.progress_save_interval:
            self._last_snapshot = now
            self._save_progress()

    def _save_progress(self) -> None:
        path = os.path.join(self.ctx.config.result_dir, "exchange_progress_0.json")
        try:
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(self.stats.as_dict(), fh)
        except OSError:
            self.ctx.logger.exception("could not save exchange progress")


# --- manager loop ------------------------------------------------------------


@dataclass
class ManagerStats:
    selected_received: int = 0
    labels_done: int = 0
    flushes: int = 0
    syncs: int = 0
    adjustments: int = 0
    pruned: int = 0
    stop_origin: str | None = None
    stop_reason: str | None = None
    stop_received_at: float | None = None
    drain_complete: bool = False
    exchange: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return dict(self.__dict__)


class _StopRequest(Exception):
    def __init__(self, origin: WorkerId | None, reason: str):
        self.origin = origin
        self.reason = reason
        super().__init__(reason)


class Manager:
    """Owns oracle dispatch, the training buffer, sync accounting, and shutdown."""

    def __init__(self, ctx: WorkerContext, drain: bool = False):
        self.ctx = ctx
        cfg = ctx.config
        self.drain = drain
        self.oracle_buffer = OracleInputBuffer(cfg.oracle_buffer_capacity)
        self.training_buffer = TrainingDataBuffer(cfg.retrain_size)
        self.oracles = (
            [WorkerId(Kernel.ORACLE, r) for r in range(cfg.orcl_workers)]
            if cfg.oracle_enabled
            else []
        )
        self.trainers = (
            [WorkerId(Kernel.TRAINING, r) for r in range(cfg.train_workers)]
            if cfg.training_enabled
            else []
        )
        self.idle_oracles: deque[WorkerId] = deque(self.oracles)
        self.in_flight: dict[WorkerId, Sample] = {}
        self.stats = ManagerStats()
        self.exchange_done = False
        self.stopping = False
        self.flushed_batches: list[list[LabeledSample]] = []
        self._syncs_since_adjust = 0
        self._last_snapshot = time.monotonic()

    # everything the manager defers stays in FIFO position on its channel;
    # oracle requests are deferred while the buffer is full (backpressure)
    def _accept(self, env: Envelope) -> bool:
        if env.src == EXCHANGE and env.tag != Tag.SIGNAL and self.oracle_buffer.is_full:
            return False
        return True

    def run(self) -> None:
        try:
            while True:
                env = self.ctx.transport.recv_any(MANAGER, timeout=0.05, accept=self._accept)
                if env is None:
                    self._maybe_snapshot()
                    self._check_done()
                    continue
                self._handle(env)
                self._check_done()
        except _StopRequest as req:
            self._shutdown(req)
        except DeadWorker as exc:
            self._shutdown(_StopRequest(exc.worker, "worker failure"))
        except TransportStopped:
            pass
        finally:
            self._save_progress()
            self.ctx.transport.retire(MANAGER)

    # -- event handlers ---------------------------------------------------

    def _handle(self, env: Envelope) -> None:
        if env.tag == Tag.SIGNAL:
            self._handle_signal(ControlSignal.decode(env.payload))
            return
        env = resolve_data(self.ctx.transport, MANAGER, env, self.ctx.config.fixed_size_data)
        kind = kind_of(env)
        if kind == MsgKind.ORACLE_REQUEST:
            for sample in decode_sample_list_msg(env.payload):
                self.oracle_buffer.append(sample)
                self.stats.selected_received += 1
            self._dispatch_idle()
        elif kind == MsgKind.ORACLE_RESULT:
            self._handle_result(env)
        elif kind == MsgKind.EXCHANGE_DONE:
            self.exchange_done = True
            self.stats.exchange = decode_stats_msg(env.payload)
        else:
            raise ProtocolError(f"manager got unexpected {kind.name} from {env.src}")

    def _handle_signal(self, sig: ControlSignal) -> None:
        if sig.kind == MsgKind.STOP_RUN:
            reason = "worker failure" if sig.failure else "stop requested"
            raise _StopRequest(sig.origin, reason)
        if sig.kind == MsgKind.WEIGHT_SYNC:
            self.stats.syncs += 1
            self._syncs_since_adjust += 1
            if self._syncs_since_adjust >= len(self.trainers):
                self._syncs_since_adjust = 0
                self._maybe_adjust()
            return
        raise ProtocolError(f"manager got unexpected signal {sig.kind.name}")

    def _handle_result(self, env: Envelope) -> None:
        (labeled,) = decode_labeled_list_msg(env.payload)
        oracle = env.src
        self.in_flight.pop(oracle, None)
        self.idle_oracles.append(oracle)
        self.stats.labels_done += 1
        if self.ctx.config.training_enabled and self.training_buffer.append(labeled):
            self._flush()
        self._dispatch_idle()

    def _dispatch_idle(self) -> None:
        fixed = self.ctx.config.fixed_size_data
        while self.idle_oracles and len(self.oracle_buffer):
            oracle = self.idle_oracles.popleft()
            sample = self.oracle_buffer.pop_head()
            self.in_flight[oracle] = sample
            send_data(
                self.ctx.transport,
                MANAGER,
                oracle,
                encode_sample_msg(MsgKind.ORACLE_JOB, sample, fixed),
                fixed,
            )

    def _flush(self) -> None:
        batch = self.training_buffer.flush()
        self.flushed_batches.append(batch)
        payload = encode_labeled_list_msg(MsgKind.TRAIN_BROADCAST, batch)
        for trainer in self.trainers:
            send_signal(
                self.ctx.transport,
                MANAGER,
                trainer,
                ControlSignal(MsgKind.NEW_DATA_ARRIVED, MANAGER),
            )
            send_data(
                self.ctx.transport, MANAGER, trainer, payload, self.ctx.config.fixed_size_data
            )
        self.stats.flushes += 1

    # -- dynamic oracle-buffer adjustment ----------------------------------

    def _maybe_adjust(self) -> None:
        cfg = self.ctx.config
        if not cfg.dynamic_oracle_list or not len(self.oracle_buffer):
            return
        entries = list(self.oracle_buffer.entries)
        payload = encode_sample_list_msg(MsgKind.BUFFER_PREDICT_REQ, entries)
        for trainer in self.trainers:
            send_data(self.ctx.transport, MANAGER, trainer, payload, cfg.fixed_size_data)
        member_lists = [self._await_buffer_prediction(t) for t in self.trainers]
        fresh = CommitteeBatch.from_member_major(member_lists)
        before = len(entries)
        adjusted = adjust_oracle_buffer(entries, fresh, cfg.selection_threshold)
        self.oracle_buffer.replace(adjusted)
        self.stats.adjustments += 1
        self.stats.pruned += before - len(adjusted)
        self._dispatch_idle()

    def _await_buffer_prediction(self, trainer: WorkerId) -> list[Sample]:
        """Wait for one trainer's re-scoring, absorbing interleaved syncs."""
        while True:
            env = self.ctx.transport.recv(MANAGER, trainer)
            if env.tag == Tag.SIGNAL:
                sig = ControlSignal.decode(env.payload)
                if sig.kind == MsgKind.STOP_RUN:
                    reason = "worker failure" if sig.failure else "stop requested"
                    raise _StopRequest(sig.origin, reason)
                if sig.kind == MsgKind.WEIGHT_SYNC:
                    self.stats.syncs += 1
                    self._syncs_since_adjust += 1
                    continue
                raise ProtocolError(f"unexpected signal {sig.kind.name} during adjustment")
            env = resolve_data(self.ctx.transport, MANAGER, env, self.ctx.config.fixed_size_data)
            if kind_of(env) != MsgKind.BUFFER_PREDICT_RES:
                raise ProtocolError(f"expected buffer predictions, got {kind_of(env).name}")
            return decode_sample_list_msg(env.payload)

    # -- completion and shutdown -------------------------------------------

    def _check_done(self) -> None:
        if not self.exchange_done or self.stopping:
            return
        if not self.drain:
            raise _StopRequest(None, "rounds complete")
        if len(self.oracle_buffer) or self.in_flight:
            return
        if self.trainers and self.stats.syncs < self.stats.flushes * len(self.trainers):
            return
        self.stats.drain_complete = True
        raise _StopRequest(None, "rounds complete, pipeline drained")

    def _shutdown(self, req: _StopRequest) -> None:
        if self.stopping:
            return
        self.stopping = True
        self.stats.stop_origin = str(req.origin) if req.origin else None
        self.stats.stop_reason = req.reason
        self.stats.stop_received_at = time.monotonic()
        self.ctx.logger.info("shutdown: %s (origin %s)", req.reason, req.origin)
        signal = ControlSignal(
            MsgKind.STOP_RUN, req.origin or MANAGER, failure=req.reason == "worker failure"
        )
        everyone = (
            [WorkerId(Kernel.GENERATOR, r) for r in range(self.ctx.config.gene_workers)]
            + [WorkerId(Kernel.PREDICTION, r) for r in range(self.ctx.config.pred_workers)]
            + self.oracles
            + self.trainers
            + [EXCHANGE]
        )
        for dst in everyone:
            try:
                send_signal(self.ctx.transport, MANAGER, dst, signal)
            except (DeadWorker, TransportStopped):
                pass
        self.ctx.stop_event.set()
        self.ctx.transport.request_stop()

    # -- progress ----------------------------------------------------------

    def _maybe_snapshot(self) -> None:
        now = time.monotonic()
        if now - self._last_snapshot >= self.ctx.config.progress_save_interval:
            self._last_snapshot = now
            self._save_progress()

    def _save_progress(self) -> None:
        path = os.path.join(self.ctx.config.result_dir, "manager_progress_0.json")
        state = self.stats.as_dict()
        state["oracle_buffer_len"] = len(self.oracle_buffer)
        state["training_buffer_len"] = len(self.training_buffer)
        try:
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(state, fh)
        except OSError:
            self.ctx.logger.exception("could not save manager progress")
