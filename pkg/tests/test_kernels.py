"""Kernel interface contracts, exercised through the toy implementations."""

import json
import time

import numpy as np
import pytest

from alflow.errors import SizeMismatch
from alflow.kernels import VirtualClock, WallClock
from alflow.toy import (
    ToyGenerator,
    ToyGroundTruth,
    ToyLinearModel,
    ToyOracle,
    ToyPredictor,
    ToyTrainer,
    rng_stream,
)
from alflow.types import LabeledSample, Sample, WeightVector

SEED = 1234
DIM = 4


@pytest.fixture
def clock():
    return VirtualClock()


def make_points(n, ground_truth=None, seed=5, dim=DIM):
    rng = np.random.default_rng(seed)
    gt = ground_truth or ToyGroundTruth(SEED, dim)
    pts = []
    for _ in range(n):
        x = rng.standard_normal(dim)
        pts.append(LabeledSample(Sample(x), Sample(gt.label(x, rng))))
    return pts


class TestPredict:
    def test_zero_input_maps_to_zero(self, tmp_path, clock):
        pred = ToyPredictor(0, str(tmp_path), rng_stream(SEED, "model", 0), clock)
        (out,) = pred.predict([Sample.zeros(DIM)])
        assert out == Sample.zeros(DIM)

    def test_identity_weights_reproduce_input(self, tmp_path, clock):
        pred = ToyPredictor(0, str(tmp_path), rng_stream(SEED, "model", 0), clock)
        pred.update(WeightVector(np.eye(DIM).ravel()))
        x = Sample([1.5, -2.0, 0.25, 9.0])
        assert pred.predict([x]) == [x]

    def test_batch_of_twenty_gives_twenty_outputs(self, tmp_path, clock):
        pred = ToyPredictor(0, str(tmp_path), rng_stream(SEED, "model", 0), clock)
        rng = np.random.default_rng(0)
        batch = [Sample(rng.standard_normal(DIM)) for _ in range(20)]
        assert len(pred.predict(batch)) == 20

    def test_matches_independent_matrix_product(self, tmp_path, clock):
        pred = ToyPredictor(0, str(tmp_path), rng_stream(SEED, "model", 0), clock)
        rng = np.random.default_rng(3)
        for _ in range(50):
            x = rng.standard_normal(DIM)
            (out,) = pred.predict([Sample(x)])
            expected = np.array(
                [sum(pred.model.weights[i][j] * x[j] for j in range(DIM)) for i in range(DIM)]
            )
            np.testing.assert_allclose(out.values, expected, rtol=1e-12)


class TestUpdate:
    def test_zero_weights_zero_everything(self, tmp_path, clock):
        pred = ToyPredictor(0, str(tmp_path), rng_stream(SEED, "model", 0), clock)
        pred.update(WeightVector(np.zeros(DIM * DIM)))
        rng = np.random.default_rng(1)
        for _ in range(5):
            (out,) = pred.predict([Sample(rng.standard_normal(DIM))])
            assert out == Sample.zeros(DIM)

    def test_size_off_by_one_rejected(self, tmp_path, clock):
        pred = ToyPredictor(0, str(tmp_path), rng_stream(SEED, "model", 0), clock)
        with pytest.raises(SizeMismatch):
            pred.update(WeightVector(np.zeros(DIM * DIM - 1)))

    def test_weight_size_constant(self, tmp_path, clock):
        pred = ToyPredictor(0, str(tmp_path), rng_stream(SEED, "model", 0), clock)
        assert pred.weight_size() == 16

    def test_sync_makes_predictor_and_trainer_bit_equal(self, tmp_path, clock):
        pred = ToyPredictor(0, str(tmp_path), rng_stream(SEED, "model", 0), clock)
        trainer = ToyTrainer(
            0, str(tmp_path), rng_stream(SEED + 1, "model", 0), rng_stream(SEED, "split", 0), clock
        )
        trainer.add_trainingset(make_points(20))
        trainer.retrain(lambda: False)
        pred.update(trainer.get_weight())
        rng = np.random.default_rng(17)
        probes = [Sample(rng.standard_normal(DIM)) for _ in range(100)]
        assert pred.predict(probes) == trainer.infer(probes)


class TestGenerate:
    def test_first_call_returns_fresh_point(self, tmp_path, clock):
        gen = ToyGenerator(0, str(tmp_path), rng_stream(SEED, "generator", 0), clock)
        stop, s = gen.generate(None)
        assert stop is False
        assert s.dim == DIM
        assert not s.is_all_zero()

    def test_elementwise_product_with_state(self, tmp_path, clock):
        gen = ToyGenerator(0, str(tmp_path), rng_stream(SEED, "generator", 0), clock)
        gen.generate(None)
        fb = Sample([1.0, 2.0, 3.0, 4.0])
        _, s = gen.generate(fb)
        np.testing.assert_array_equal(s.values, gen.state * fb.values)

    def test_zero_feedback_restarts_trajectory(self, tmp_path, clock):
        gen = ToyGenerator(0, str(tmp_path), rng_stream(SEED, "generator", 0), clock)
        gen.generate(None)
        _, s = gen.generate(Sample.zeros(DIM))
        # a restart draws fresh noise instead of multiplying (which would give zeros)
        assert not s.is_all_zero()
        assert len(gen.history[-1]) == 1

    def test_counter_past_limit_requests_stop(self, tmp_path, clock):
        gen = ToyGenerator(
            0, str(tmp_path), rng_stream(SEED, "generator", 0), clock, iteration_limit=2
        )
        stops = [gen.generate(None)[0] for _ in range(4)]
        assert stops == [False, False, False, True]

    def test_rank_offsets_limit(self, tmp_path, clock):
        gen = ToyGenerator(
            3, str(tmp_path), rng_stream(SEED, "generator", 3), clock, iteration_limit=2
        )
        assert gen.limit == 5


class TestOracle:
    def test_zero_noise_label_is_ground_truth_product(self, tmp_path, clock):
        gt = ToyGroundTruth(SEED, DIM, noise_scale=0.0)
        oracle = ToyOracle(0, str(tmp_path), gt, rng_stream(SEED, "oracle", 0), clock)
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = rng.standard_normal(DIM)
            label = oracle.label(Sample(x))
            # independent element-by-element product; tolerance covers float
            # reassociation only, zero noise means no other deviation
            expected = np.array(
                [sum(gt.matrix[i][j] * x[j] for j in range(DIM)) for i in range(DIM)]
            )
            np.testing.assert_allclose(label.values, expected, rtol=1e-12, atol=1e-13)

    def test_zero_input_zero_label(self, tmp_path, clock):
        gt = ToyGroundTruth(SEED, DIM)
        oracle = ToyOracle(0, str(tmp_path), gt, rng_stream(SEED, "oracle", 0), clock)
        assert oracle.label(Sample.zeros(DIM)) == Sample.zeros(DIM)

    def test_noise_reproducible_per_seed(self, tmp_path, clock):
        gt = ToyGroundTruth(SEED, DIM, noise_scale=0.5)
        x = Sample([1.0, 2.0, 3.0, 4.0])
        labels = []
        for _ in range(2):
            oracle = ToyOracle(0, str(tmp_path), gt, rng_stream(SEED, "oracle", 0), clock)
            labels.append(oracle.label(x))
        assert labels[0] == labels[1]

    def test_latency_simulated_within_slack(self, tmp_path):
        gt = ToyGroundTruth(SEED, DIM)
        oracle = ToyOracle(
            0, str(tmp_path), gt, rng_stream(SEED, "oracle", 0), WallClock(), latency=0.1
        )
        t0 = time.perf_counter()
        oracle.label(Sample([1.0, 1.0, 1.0, 1.0]))
        elapsed = time.perf_counter() - t0
        assert 0.1 <= elapsed <= 0.12


class TestAddTrainingset:
    def make_trainer(self, tmp_path, clock, **kw):
        return ToyTrainer(
            0, str(tmp_path), rng_stream(SEED, "model", 0), rng_stream(SEED, "split", 0), clock, **kw
        )

    def test_twenty_points_split_16_4(self, tmp_path, clock):
        trainer = self.make_trainer(tmp_path, clock)
        trainer.add_trainingset(make_points(20))
        assert len(trainer.x_train) == 16
        assert len(trainer.x_val) == 4

    def test_single_point_goes_to_train(self, tmp_path, clock):
        trainer = self.make_trainer(tmp_path, clock)
        trainer.add_trainingset(make_points(1))
        assert len(trainer.x_train) == 1
        assert len(trainer.x_val) == 0

    def test_two_adds_grow_disjoint_sets(self, tmp_path, clock):
        trainer = self.make_trainer(tmp_path, clock)
        pts = make_points(40)
        trainer.add_trainingset(pts[:20])
        trainer.add_trainingset(pts[20:])
        assert len(trainer.x_train) + len(trainer.x_val) == 40
        train_keys = {x.tobytes() for x in trainer.x_train}
        val_keys = {x.tobytes() for x in trainer.x_val}
        assert not train_keys & val_keys
        assert train_keys | val_keys == {p.input.values.tobytes() for p in pts}

    def test_monotone_growth_over_many_adds(self, tmp_path, clock):
        trainer = self.make_trainer(tmp_path, clock)
        total = 0
        rng = np.random.default_rng(8)
        for batch in range(10):
            n = int(rng.integers(1, 9))
            trainer.add_trainingset(make_points(n, seed=batch))
            total += n
            assert len(trainer.x_train) + len(trainer.x_val) == total


class TestRetrain:
    def make_trainer(self, tmp_path, clock, **kw):
        return ToyTrainer(
            0, str(tmp_path), rng_stream(SEED, "model", 0), rng_stream(SEED, "split", 0), clock, **kw
        )

    def test_pending_interrupt_stops_within_one_epoch(self, tmp_path, clock):
        trainer = self.make_trainer(tmp_path, clock, epochs_per_round=1000)
        trainer.add_trainingset(make_points(20))
        trainer.retrain(lambda: True)
        assert trainer.epochs_run == 1

    def test_wall_budget_exceeded_requests_stop(self, tmp_path):
        clock = VirtualClock()
        trainer = self.make_trainer(
            tmp_path, clock, epochs_per_round=5, round_latency=10.0, time_budget=5.0
        )
        trainer.add_trainingset(make_points(20))
        assert trainer.retrain(lambda: False) is True

    def test_within_budget_no_stop(self, tmp_path):
        clock = VirtualClock()
        trainer = self.make_trainer(tmp_path, clock, epochs_per_round=5)
        trainer.add_trainingset(make_points(20))
        assert trainer.retrain(lambda: False) is False

    def test_train_loss_strictly_decreases_first_five_epochs(self, tmp_path, clock):
        trainer = self.make_trainer(tmp_path, clock, epochs_per_round=5)
        trainer.add_trainingset(make_points(20))
        trainer.retrain(lambda: False)
        losses = trainer.history["mse_train"][0]
        assert len(losses) == 5
        assert all(losses[i + 1] < losses[i] for i in range(4))

    def test_zero_noise_converges_below_1e6_within_pinned_budget(self, tmp_path, clock):
        trainer = self.make_trainer(tmp_path, clock, epochs_per_round=200)
        trainer.add_trainingset(make_points(20))
        trainer.retrain(lambda: False)
        assert trainer.validation_loss() < 1e-6


class TestProgressFiles:
    def test_generator_progress_appends(self, tmp_path, clock):
        gen = ToyGenerator(0, str(tmp_path), rng_stream(SEED, "generator", 0), clock)
        for _ in range(3):
            gen.generate(None)
        gen.save_progress()
        size_after_first = gen.save_path and __import__("os").path.getsize(gen.save_path)
        for _ in range(3):
            gen.generate(None)
        gen.save_progress()
        size_after_second = __import__("os").path.getsize(gen.save_path)
        assert size_after_second > size_after_first
        # earlier records still readable from the front of the file
        import pickle

        with open(gen.save_path, "rb") as fh:
            first = pickle.load(fh)
        assert len(first) >= 1

    def test_trainer_history_keeps_earlier_rounds(self, tmp_path, clock):
        trainer = ToyTrainer(
            0, str(tmp_path), rng_stream(SEED, "model", 0), rng_stream(SEED, "split", 0), clock,
            epochs_per_round=2,
        )
        trainer.add_trainingset(make_points(10))
        trainer.retrain(lambda: False)
        trainer.save_progress()
        trainer.add_trainingset(make_points(10, seed=9))
        trainer.retrain(lambda: False)
        trainer.save_progress()
        with open(trainer.save_path, encoding="utf-8") as fh:
            history = json.load(fh)
        assert len(history["mse_train"]) == 2
        assert len(history["mse_train"][0]) == 2

    def test_weight_roundtrip_bit_exact(self, tmp_path, clock):
        model = ToyLinearModel(DIM, rng_stream(SEED, "model", 0))
        other = ToyLinearModel(DIM, rng_stream(SEED, "model", 1))
        other.set_weight(model.get_weight())
        assert model.get_weight() == other.get_weight()
        np.testing.assert_array_equal(model.weights, other.weights)
