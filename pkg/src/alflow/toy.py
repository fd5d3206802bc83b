"""Reference workload: a seeded linear committee learning a linear map.

A fixed random matrix acts as the ground truth; oracles return its output
(plus optional seeded noise) after a simulated delay. Committee members
start from distinct seeded weights and train by minibatch gradient
descent, so disagreement is real and shrinks as labels accumulate. Every
latency is simulated through the worker's clock, which makes the same
plugins usable in real-time and virtual-time runs.
"""

from __future__ import annotations

import json
import os
import pickle
from typing import Callable, Sequence

import numpy as np

from .errors import SizeMismatch
from .kernels import (
    Clock,
    GeneratorPlugin,
    OraclePlugin,
    PredictorPlugin,
    TrainerPlugin,
    WallClock,
)
from .types import LabeledSample, Sample, WeightVector, WorkflowConfig

_STREAMS = {
    "model": 1,
    "generator": 2,
    "oracle": 3,
    "split": 4,
    "ground_truth": 5,
    "probe": 6,
}


def rng_stream(seed: int, stream: str, rank: int = 0) -> np.random.Generator:
    """A named, rank-indexed RNG stream; stable regardless of construction order."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(_STREAMS[stream], rank))
    )


class ToyLinearModel:
    """Square linear map trained with minibatch gradient descent on MSE."""

    def __init__(self, dim: int, rng: np.random.Generator, lr: float = 0.02, batch_size: int = 10):
        self.dim = dim
        self.lr = lr
        self.batch_size = batch_size
        self.weights = rng.standard_normal((dim, dim)) * 0.5

    def weight_size(self) -> int:
        return self.dim * self.dim

    def get_weight(self) -> WeightVector:
        return WeightVector(self.weights.ravel().copy())

    def set_weight(self, w: WeightVector) -> None:
        if w.size != self.weight_size():
            raise SizeMismatch(f"expected {self.weight_size()} weights, got {w.size}")
        self.weights = w.values.reshape(self.dim, self.dim).copy()

    def predict_batch(self, inputs: Sequence[Sample]) -> list[Sample]:
        x = np.stack([s.values for s in inputs])
        out = x @ self.weights.T
        return [Sample(row) for row in out]

    def epoch(self, x: np.ndarray, y: np.ndarray) -> float:
        """One pass of minibatch GD; returns the post-pass training MSE."""
        n = len(x)
        step = min(self.batch_size, n)
        for j in range(0, n, step):
            xb, yb = x[j:j + step], y[j:j + step]
            grad = 2.0 * (xb @ self.weights.T - yb).T @ xb / len(xb)
            self.weights = self.weights - self.lr * grad
        return self.mse(x, y)

    def mse(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean((x @ self.weights.T - y) ** 2))


class ToyGroundTruth:
    """The map the committee is trying to learn: y = G x (+ seeded noise)."""

    def __init__(self, seed: int, dim: int, noise_scale: float = 0.0):
        self.matrix = rng_stream(seed, "ground_truth").standard_normal((dim, dim))
        self.noise_scale = noise_scale

    def label(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        y = self.matrix @ x
        if self.noise_scale:
            y = y + self.noise_scale * rng.standard_normal(x.shape)
        return y


class ToyGenerator(GeneratorPlugin):
    """Multiplicative random walk steered by prediction feedback.

    A fresh random point starts each trajectory: on the first call, after
    a restart sentinel (any zero coordinate in the feedback), or once the
    iteration counter passes its limit (which also requests shutdown).
    """

    def __init__(
        self,
        rank: int,
        result_dir: str,
        rng: np.random.Generator,
        clock: Clock,
        dim: int = 4,
        latency: float = 0.0,
        iteration_limit: int = 300_000,
    ):
        self.rank = rank
        self.rng = rng
        self.clock = clock
        self.dim = dim
        self.latency = latency
        self.counter = 0
        self.limit = iteration_limit + rank
        self.state = rng.standard_normal(dim)
        self.history: list[list[np.ndarray]] = [[]]
        self.save_path = os.path.join(result_dir, f"generator_data_{rank}")

    def generate(self, feedback: Sample | None) -> tuple[bool, Sample]:
        if self.latency:
            self.clock.sleep(self.latency)
        stop = False
        if self.counter > self.limit:
            stop = True
            data = self.rng.standard_normal(self.dim)
        elif feedback is None or (feedback.values == 0).any():
            data = self.rng.standard_normal(self.dim)
            self.history.append([data])
        else:
            data = self.state * feedback.values
            self.history[-1].append(data)
        self.counter += 1
        return stop, Sample(data)

    def save_progress(self) -> None:
        mode = "ab" if os.path.exists(self.save_path) else "wb"
        with open(self.save_path, mode) as fh:
            pickle.dump(self.history[:-1], fh)
        self.history = self.history[-1:]

    def stop_run(self) -> None:
        self.save_progress()


class ToyPredictor(PredictorPlugin):
    """Committee member serving inference; a replica of its paired trainer."""

    def __init__(
        self,
        rank: int,
        result_dir: str,
        rng: np.random.Generator,
        clock: Clock,
        dim: int = 4,
        latency: float = 0.0,
    ):
        self.rank = rank
        self.clock = clock
        self.latency = latency
        self.model = ToyLinearModel(dim, rng)
        self.updates = 0
        self.save_path = os.path.join(result_dir, f"predictor_state_{rank}.json")

    def predict(self, batch: Sequence[Sample]) -> list[Sample]:
        if self.latency:
            self.clock.sleep(self.latency)
        return self.model.predict_batch(batch)

    def update(self, weights: WeightVector) -> None:
        self.model.set_weight(weights)
        self.updates += 1

    def weight_size(self) -> int:
        return self.model.weight_size()

    def save_progress(self) -> None:
        state = {"updates": self.updates, "weight_norm": float(np.linalg.norm(self.model.weights))}
        with open(self.save_path, "w", encoding="utf-8") as fh:
            json.dump(state, fh)

    def stop_run(self) -> None:
        self.save_progress()


class ToyOracle(OraclePlugin):
    """Returns the ground-truth map's output after a simulated delay."""

    def __init__(
        self,
        rank: int,
        result_dir: str,
        ground_truth: ToyGroundTruth,
        rng: np.random.Generator,
        clock: Clock,
        latency: float = 0.0,
    ):
        self.rank = rank
        self.ground_truth = ground_truth
        self.rng = rng
        self.clock = clock
        self.latency = latency
        self.calls = 0
        self.save_path = os.path.join(result_dir, f"oracle_log_{rank}.json")

    def label(self, inp: Sample) -> Sample:
        result = self.ground_truth.label(inp.values, self.rng)
        if self.latency:
            self.clock.sleep(self.latency)
        self.calls += 1
        return Sample(result)

    def save_progress(self) -> None:
        with open(self.save_path, "w", encoding="utf-8") as fh:
            json.dump({"calls": self.calls}, fh)

    def stop_run(self) -> None:
        self.save_progress()


class ToyTrainer(TrainerPlugin):
    """Grows a train/validation split and runs epoch-bounded GD rounds.

    The interrupt is polled at every epoch boundary and wins over the
    epoch budget; the trainer requests shutdown once its total wall budget
    is exhausted.
    """

    def __init__(
        self,
        rank: int,
        result_dir: str,
        weight_rng: np.random.Generator,
        split_rng: np.random.Generator,
        clock: Clock,
        dim: int = 4,
        lr: float = 0.02,
        batch_size: int = 10,
        epochs_per_round: int = 30,
        round_latency: float = 0.0,
        val_split: float = 0.2,
        time_budget: float = float("inf"),
    ):
        self.rank = rank
        self.clock = clock
        self.model = ToyLinearModel(dim, weight_rng, lr=lr, batch_size=batch_size)
        self.split_rng = split_rng
        self.epochs_per_round = epochs_per_round
        self.epoch_sleep = round_latency / epochs_per_round if epochs_per_round else 0.0
        self.val_split = val_split
        self.time_budget = time_budget
        self.start_time = clock.now()
        self.x_train: list[np.ndarray] = []
        self.y_train: list[np.ndarray] = []
        self.x_val: list[np.ndarray] = []
        self.y_val: list[np.ndarray] = []
        self.history: dict[str, list[list[float]]] = {"mse_train": [], "mse_val": []}
        self.epochs_run = 0
        self.save_path = os.path.join(result_dir, f"retrain_history_{rank}.json")

    def add_trainingset(self, points: Sequence[LabeledSample]) -> None:
        n = len(points)
        val_size = int(self.val_split * n)
        val_idx = set(self.split_rng.choice(n, size=val_size, replace=False).tolist())
        for i, pt in enumerate(points):
            if i in val_idx:
                self.x_val.append(pt.input.values)
                self.y_val.append(pt.label.values)
            else:
                self.x_train.append(pt.input.values)
                self.y_train.append(pt.label.values)

    def retrain(self, interrupt: Callable[[], bool]) -> bool:
        self.history["mse_train"].append([])
        self.history["mse_val"].append([])
        x = np.array(self.x_train)
        y = np.array(self.y_train)
        xv = np.array(self.x_val) if self.x_val else None
        yv = np.array(self.y_val) if self.x_val else None
        for _ in range(self.epochs_per_round):
            loss = self.model.epoch(x, y)
            self.history["mse_train"][-1].append(loss)
            if xv is not None:
                self.history["mse_val"][-1].append(self.model.mse(xv, yv))
            self.epochs_run += 1
            if self.epoch_sleep:
                self.clock.sleep(self.epoch_sleep)
            if interrupt():
                break
        return self.clock.now() - self.start_time >= self.time_budget

    def get_weight(self) -> WeightVector:
        return self.model.get_weight()

    def infer(self, batch: Sequence[Sample]) -> list[Sample]:
        return self.model.predict_batch(batch)

    def validation_loss(self) -> float | None:
        if not self.x_val:
            return None
        return self.model.mse(np.array(self.x_val), np.array(self.y_val))

    def save_progress(self) -> None:
        with open(self.save_path, "w", encoding="utf-8") as fh:
            json.dump(self.history, fh)

    def stop_run(self) -> None:
        self.save_progress()


class WorkloadBundle:
    """One plugin instance per worker, index-aligned with worker ranks."""

    def __init__(self, generators, predictors, oracles, trainers):
        self.generators = list(generators)
        self.predictors = list(predictors)
        self.oracles = list(oracles)
        self.trainers = list(trainers)


def build_toy_bundle(config: WorkflowConfig, clock: Clock | None = None) -> WorkloadBundle:
    """Instantiate the toy plugins for every configured worker.

    Predictor and trainer of the same rank draw their initial weights from
    the same stream, so predictors start as exact replicas.
    """
    clock = clock or WallClock()
    cfg = config
    ground_truth = ToyGroundTruth(cfg.seed, cfg.sample_dim, cfg.noise_scale)
    generators = [
        ToyGenerator(
            r,
            cfg.result_dir,
            rng_stream(cfg.seed, "generator", r),
            clock,
            dim=cfg.sample_dim,
            latency=cfg.gene_latency,
            iteration_limit=cfg.gene_iteration_limit,
        )
        for r in range(cfg.gene_workers)
    ]
    predictors = [
        ToyPredictor(
            r,
            cfg.result_dir,
            rng_stream(cfg.seed, "model", r),
            clock,
            dim=cfg.sample_dim,
            latency=cfg.pred_latency,
        )
        for r in range(cfg.pred_workers)
    ]
    oracles = [
        ToyOracle(
            r,
            cfg.result_dir,
            ground_truth,
            rng_stream(cfg.seed, "oracle", r),
            clock,
            latency=cfg.oracle_latency,
        )
        for r in range(cfg.orcl_workers if cfg.oracle_enabled else 0)
    ]
    trainers = [
        ToyTrainer(
            r,
            cfg.result_dir,
            rng_stream(cfg.seed, "model", r),
            rng_stream(cfg.seed, "split", r),
            clock,
            dim=cfg.sample_dim,
            lr=cfg.learning_rate,
            batch_size=cfg.batch_size,
            epochs_per_round=cfg.epochs_per_round,
            round_latency=cfg.train_latency,
            val_split=cfg.val_split,
            time_budget=cfg.train_time_budget,
        )
        for r in range(cfg.train_workers if cfg.training_enabled else 0)
    ]
    return WorkloadBundle(generators, predictors, oracles, trainers)
