"""Run modes: concurrent workflow, strictly-phased serial baseline, and a
single-threaded deterministic driver for replay testing.

All three modes run the same plugin bundle and the same selection hooks;
they differ only in how kernel steps are scheduled.
"""

from __future__ import annotations

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .controller import (
    SELECTION_HOOKS,
    Exchange,
    Manager,
    SelectionHook,
    TrainingDataBuffer,
    adjust_oracle_buffer,
    dedup_samples,
    validate_decision,
)
from .kernels import (
    VirtualClock,
    WallClock,
    WorkerContext,
    WORKER_CLASSES,
)
from .results import ResultsLayout, write_report
from .toy import WorkloadBundle, build_toy_bundle, rng_stream
from .transport import EXCHANGE, MANAGER, Kernel, QueueTransport, Transport, WorkerId
from .types import CommitteeBatch, LabeledSample, Sample, WeightVector, WorkflowConfig

log = logging.getLogger(__name__)


@dataclass
class RunReport:
    """What one run did and how long it took."""

    mode: str
    rounds_requested: int
    rounds_completed: int
    wall_time: float
    total_time: float
    oracle_calls: int
    selections: int
    flushes: int
    syncs: int
    stop_origin: str | None
    stop_reason: str | None
    failure: bool
    drain_complete: bool
    exchange_span: float
    seed: int
    config_digest: dict
    phase_times: dict = field(default_factory=dict)

    @property
    def exchange_throughput(self) -> float:
        """Exchange rounds per second over the exchange loop's own span."""
        if self.exchange_span <= 0:
            return 0.0
        return self.rounds_completed / self.exchange_span

    def summary_dict(self) -> dict:
        out = {
            "mode": self.mode,
            "rounds_requested": self.rounds_requested,
            "rounds_completed": self.rounds_completed,
            "wall_time": self.wall_time,
            "total_time": self.total_time,
            "oracle_calls": self.oracle_calls,
            "selections": self.selections,
            "flushes": self.flushes,
            "syncs": self.syncs,
            "stop_origin": self.stop_origin,
            "stop_reason": self.stop_reason,
            "failure": self.failure,
            "drain_complete": self.drain_complete,
            "exchange_span": self.exchange_span,
            "seed": self.seed,
        }
        out.update({f"phase_{k}": v for k, v in self.phase_times.items()})
        return out


def _resolve_hook(config: WorkflowConfig, hook: SelectionHook | None) -> SelectionHook:
    return hook if hook is not None else SELECTION_HOOKS[config.selection]


def _write_run_report(layout: ResultsLayout, report: RunReport) -> None:
    write_report(layout.run_report_path, [("run", report.summary_dict())])


# --- concurrent mode ---------------------------------------------------------


def run_parallel(
    config: WorkflowConfig,
    rounds: int,
    bundle: WorkloadBundle | None = None,
    hook: SelectionHook | None = None,
    transport: Transport | None = None,
    drain: bool = False,
    join_grace: float = 5.0,
) -> RunReport:
    """Run the full concurrent workflow for a bounded number of exchange
    rounds (a generator or trainer stop signal may end it earlier).

    With ``drain=True`` the manager keeps going after the last round until
    every buffered sample is labeled and every flushed batch is retrained,
    so the measured window covers a fixed amount of work.
    """
    layout = ResultsLayout(config.result_dir).ensure()
    stop_event = threading.Event()
    clock = WallClock(stop_event)
    bundle = bundle if bundle is not None else build_toy_bundle(config, clock)
    hook = _resolve_hook(config, hook)
    transport = transport if transport is not None else QueueTransport()

    plugin_map: dict[WorkerId, object] = {}
    for kernel, plugins in (
        (Kernel.GENERATOR, bundle.generators),
        (Kernel.PREDICTION, bundle.predictors),
        (Kernel.ORACLE, bundle.oracles),
        (Kernel.TRAINING, bundle.trainers),
    ):
        for rank, plugin in enumerate(plugins):
            plugin_map[WorkerId(kernel, rank)] = plugin

    for worker in list(plugin_map) + [MANAGER, EXCHANGE]:
        transport.register(worker)

    workers = []
    for worker, plugin in plugin_map.items():
        ctx = WorkerContext(
            worker=worker,
            transport=transport,
            config=config,
            stop_event=stop_event,
            logger=layout.worker_logger(worker),
            paired_predictor=(
                WorkerId(Kernel.PREDICTION, worker.rank)
                if worker.kernel == Kernel.TRAINING
                else None
            ),
        )
        workers.append(WORKER_CLASSES[worker.kernel](ctx, plugin))

    manager = Manager(
        WorkerContext(MANAGER, transport, config, stop_event, layout.worker_logger(MANAGER)),
        drain=drain,
    )
    exchange = Exchange(
        WorkerContext(EXCHANGE, transport, config, stop_event, layout.worker_logger(EXCHANGE)),
        hook,
    )

    worker_threads = [
        threading.Thread(target=w.run, name=str(w.ctx.worker), daemon=True) for w in workers
    ]
    manager_thread = threading.Thread(target=manager.run, name="manager", daemon=True)
    exchange_thread = threading.Thread(
        target=exchange.run, args=(rounds,), name="exchange", daemon=True
    )

    started = time.monotonic()
    for t in worker_threads + [manager_thread, exchange_thread]:
        t.start()

    # the manager decides when the run is over; everyone else then gets a
    # bounded grace period (in-flight oracle sleeps wake on the stop event)
    manager_thread.join()
    join_deadline = time.monotonic() + config.oracle_latency + join_grace
    for t in worker_threads + [exchange_thread]:
        t.join(timeout=max(0.1, join_deadline - time.monotonic()))
        if t.is_alive():
            log.warning("worker thread %s did not exit in time; abandoning", t.name)
    finished = time.monotonic()

    work_done_at = manager.stats.stop_received_at or finished
    failure = manager.stats.stop_reason == "worker failure"
    report = RunReport(
        mode="parallel",
        rounds_requested=rounds,
        rounds_completed=exchange.stats.rounds_completed,
        wall_time=work_done_at - started,
        total_time=finished - started,
        oracle_calls=manager.stats.labels_done,
        selections=manager.stats.selected_received,
        flushes=manager.stats.flushes,
        syncs=manager.stats.syncs,
        stop_origin=manager.stats.stop_origin,
        stop_reason=manager.stats.stop_reason,
        failure=failure,
        drain_complete=manager.stats.drain_complete,
        exchange_span=exchange.stats.loop_span,
        seed=config.seed,
        config_digest=config.digest(),
    )
    _write_run_report(layout, report)
    layout.close_loggers()
    transport.close()
    return report


# --- serial baseline ---------------------------------------------------------


def serial_run(
    config: WorkflowConfig,
    rounds: int,
    bundle: WorkloadBundle | None = None,
    hook: SelectionHook | None = None,
) -> RunReport:
    """Strictly phased baseline: label everything, retrain, then run one
    generation/prediction block, round after round.

    Within a phase the same worker pool runs concurrently (all oracles
    label in parallel, all committee members train in parallel); phases
    themselves never overlap. An untimed generation block before round one
    produces the first labeling batch, so every timed round carries the
    full three-phase cost.
    """
    layout = ResultsLayout(config.result_dir).ensure()
    clock = WallClock()
    bundle = bundle if bundle is not None else build_toy_bundle(config, clock)
    hook = _resolve_hook(config, hook)

    generators = bundle.generators
    predictors = bundle.predictors
    oracles = bundle.oracles
    trainers = bundle.trainers
    n_gene = len(generators)
    feedbacks: list[Sample | None] = [None] * n_gene
    phase_times = {"label": 0.0, "train": 0.0, "generate": 0.0}
    counters = {"labels": 0, "selections": 0, "flushes": 0, "syncs": 0}
    stop_reason = None
    stop_origin = None

    def generation_block() -> tuple[bool, list[Sample]]:
        nonlocal stop_reason, stop_origin
        with ThreadPoolExecutor(max_workers=n_gene) as pool:
            results = list(
                pool.map(lambda i: generators[i].generate(feedbacks[i]), range(n_gene))
            )
        inputs = [sample for _, sample in results]
        with ThreadPoolExecutor(max_workers=len(predictors)) as pool:
            member_lists = list(pool.map(lambda p: p.predict(inputs), predictors))
        committee = CommitteeBatch.from_member_major(member_lists)
        decision = hook(inputs, committee, config.selection_threshold)
        validate_decision(decision, inputs, n_gene)
        feedbacks[:] = decision.to_generators
        stopped = any(stop for stop, _ in results)
        if stopped:
            stop_reason = "stop requested"
            stop_origin = "generator"
        return stopped, dedup_samples(decision.to_oracle)

    def label_phase(pending: list[Sample]) -> list:
        if not (config.oracle_enabled and oracles and pending):
            return []
        chunks = [pending[i:: len(oracles)] for i in range(len(oracles))]

        def run_chunk(pair):
            oracle, chunk = pair
            return [(s, oracle.label(s)) for s in chunk]

        with ThreadPoolExecutor(max_workers=len(oracles)) as pool:
            results = pool.map(run_chunk, zip(oracles, chunks))
        labeled = [pair for chunk in results for pair in chunk]
        counters["labels"] += len(labeled)
        return labeled

    def train_phase(labeled) -> bool:
        nonlocal stop_reason, stop_origin
        if not (config.training_enabled and trainers and labeled):
            return False
        batch = [LabeledSample(inp, lab) for inp, lab in labeled]
        counters["flushes"] += 1

        def train_one(pair):
            trainer, predictor = pair
            trainer.add_trainingset(batch)
            stop = trainer.retrain(lambda: False)
            predictor.update(trainer.get_weight())
            return stop

        with ThreadPoolExecutor(max_workers=len(trainers)) as pool:
            stops = list(pool.map(train_one, zip(trainers, predictors)))
        counters["syncs"] += len(trainers)
        if any(stops):
            stop_reason = "stop requested"
            stop_origin = "trainer"
            return True
        return False

    # untimed warm-up exploration produces round one's labeling batch
    stopped, pending = generation_block()
    counters["selections"] += len(pending)

    rounds_completed = 0
    started = time.monotonic()
    for _ in range(rounds):
        if stopped:
            break
        t = time.monotonic()
        labeled = label_phase(pending)
        phase_times["label"] += time.monotonic() - t

        t = time.monotonic()
        stopped = train_phase(labeled)
        phase_times["train"] += time.monotonic() - t

        t = time.monotonic()
        gen_stopped, pending = generation_block()
        counters["selections"] += len(pending)
        phase_times["generate"] += time.monotonic() - t
        stopped = stopped or gen_stopped
        rounds_completed += 1
    finished = time.monotonic()

    for plugin in generators + predictors + oracles + trainers:
        plugin.stop_run()

    report = RunReport(
        mode="serial",
        rounds_requested=rounds,
        rounds_completed=rounds_completed,
        wall_time=finished - started,
        total_time=finished - started,
        oracle_calls=counters["labels"],
        selections=counters["selections"],
        flushes=counters["flushes"],
        syncs=counters["syncs"],
        stop_origin=stop_origin,
        stop_reason=stop_reason or "rounds complete",
        failure=False,
        drain_complete=True,
        exchange_span=phase_times["generate"],
        seed=config.seed,
        config_digest=config.digest(),
        phase_times=dict(phase_times),
    )
    _write_run_report(layout, report)
    layout.close_loggers()
    return report


# --- deterministic replay mode -----------------------------------------------


@dataclass
class DeterministicResult:
    """Everything replay comparisons need, in execution order."""

    selections: list[Sample]
    final_weights: list[WeightVector]
    rounds_completed: int
    oracle_calls: int
    flushes: int
    virtual_time: float
    stop_reason: str
    probe_medians: list[float] = field(default_factory=list)
    validation_losses: list[float] = field(default_factory=list)

    def divergence_index(self, other: "DeterministicResult") -> int | None:
        """Index of the first differing selection, or None if identical."""
        for i, (a, b) in enumerate(zip(self.selections, other.selections)):
            if a != b:
                return i
        if len(self.selections) != len(other.selections):
            return min(len(self.selections), len(other.selections))
        if self.final_weights != other.final_weights:
            return len(self.selections)
        return None

    def matches(self, other: "DeterministicResult") -> bool:
        return self.divergence_index(other) is None


def run_deterministic(
    config: WorkflowConfig,
    rounds: int,
    bundle: WorkloadBundle | None = None,
    hook: SelectionHook | None = None,
    probe_count: int = 0,
) -> DeterministicResult:
    """Single-threaded driver interleaving kernel steps in a fixed
    round-robin order with virtual time, so identical seeds give identical
    selection sequences and final weights.

    ``probe_count`` > 0 records the committee's median disagreement over a
    fixed probe set after each retrain round.
    """
    clock = VirtualClock()
    bundle = bundle if bundle is not None else build_toy_bundle(config, clock)
    hook = _resolve_hook(config, hook)

    generators = bundle.generators
    predictors = bundle.predictors
    oracles = bundle.oracles
    trainers = bundle.trainers

    probes = []
    if probe_count:
        rng = rng_stream(config.seed, "probe")
        probes = [Sample(rng.standard_normal(config.sample_dim)) for _ in range(probe_count)]

    oracle_buffer: list[Sample] = []
    training_buffer = TrainingDataBuffer(config.retrain_size)
    selections: list[Sample] = []
    probe_medians: list[float] = []
    validation_losses: list[float] = []
    counters = {"labels": 0, "flushes": 0}
    stop_reason = "rounds complete"
    feedbacks: list[Sample | None] = [None] * len(generators)
    oracle_cursor = 0

    def probe_median() -> float:
        member_preds = np.stack(
            [np.stack([s.values for s in p.predict(probes)]) for p in predictors]
        )
        std = member_preds.std(axis=0, ddof=1)
        return float(np.median(std.mean(axis=1)))

    def run_trainers() -> bool:
        nonlocal oracle_buffer
        batch = training_buffer.flush()
        counters["flushes"] += 1
        stop = False
        for trainer, predictor in zip(trainers, predictors):
            trainer.add_trainingset(batch)
            stop = trainer.retrain(lambda: False) or stop
            predictor.update(trainer.get_weight())
        if probes:
            probe_medians.append(probe_median())
            losses = [t.validation_loss() for t in trainers if t.validation_loss() is not None]
            if losses:
                validation_losses.append(max(losses))
        if config.dynamic_oracle_list and oracle_buffer:
            fresh = CommitteeBatch.from_member_major([t.infer(oracle_buffer) for t in trainers])
            oracle_buffer = adjust_oracle_buffer(oracle_buffer, fresh, config.selection_threshold)
        return stop

    rounds_completed = 0
    for _ in range(rounds):
        results = [gen.generate(fb) for gen, fb in zip(generators, feedbacks)]
        if any(stop for stop, _ in results):
            stop_reason = "generator stop"
            break
        inputs = [sample for _, sample in results]
        committee = CommitteeBatch.from_member_major([p.predict(inputs) for p in predictors])
        decision = hook(inputs, committee, config.selection_threshold)
        validate_decision(decision, inputs, len(generators))
        feedbacks = list(decision.to_generators)
        selected = dedup_samples(decision.to_oracle)
        selections.extend(selected)
        rounds_completed += 1

        if not (config.oracle_enabled and oracles):
            continue
        oracle_buffer.extend(selected)
        stop = False
        while oracle_buffer:
            sample = oracle_buffer.pop(0)
            oracle = oracles[oracle_cursor % len(oracles)]
            oracle_cursor += 1
            label = oracle.label(sample)
            counters["labels"] += 1
            if config.training_enabled and trainers and training_buffer.append(
                LabeledSample(sample, label)
            ):
                stop = run_trainers() or stop
        if stop:
            stop_reason = "trainer stop"
            break

    return DeterministicResult(
        selections=selections,
        final_weights=[t.get_weight() for t in trainers],
        rounds_completed=rounds_completed,
        oracle_calls=counters["labels"],
        flushes=counters["flushes"],
        virtual_time=clock.value,
        stop_reason=stop_reason,
        probe_medians=probe_medians,
        validation_losses=validation_losses,
    )
