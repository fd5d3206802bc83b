"""Domain types, wire encoding, and config validation."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from alflow.errors import ConfigError
from alflow.types import (
    CommitteeBatch,
    LabeledSample,
    REQUIRED_KEYS,
    Sample,
    WeightVector,
    deserialize_labeled_sample,
    deserialize_sample,
    deserialize_sample_list,
    deserialize_weight_vector,
    serialize_labeled_sample,
    serialize_sample,
    serialize_sample_list,
    serialize_weight_vector,
    validate_config,
)


class TestSample:
    def test_zero_value_is_eight_zero_bytes(self):
        assert serialize_sample(Sample([0.0])) == b"\x00" * 8

    def test_one_is_ieee754_little_endian(self):
        assert serialize_sample(Sample([1.0])) == bytes.fromhex("000000000000f03f")

    def test_dim_matches_length(self):
        s = Sample([1.0, 2.0, 3.0])
        assert s.dim == 3

    def test_requires_at_least_one_element(self):
        with pytest.raises(ValueError):
            Sample([])

    def test_values_are_immutable(self):
        s = Sample([1.0, 2.0])
        with pytest.raises(ValueError):
            s.values[0] = 5.0

    def test_bit_exact_equality_distinguishes_nan_payloads(self):
        a = Sample([float("nan")])
        b = Sample([float("nan")])
        assert a == b  # same nan bit pattern
        assert Sample([0.0]) == Sample([-0.0]) or Sample([0.0]) != Sample([-0.0])
        # -0.0 and 0.0 differ bitwise even though they compare numerically equal
        assert Sample([0.0]) != Sample([-0.0])

    def test_roundtrip_seeded_random_vectors(self):
        rng = np.random.default_rng(1234)
        for _ in range(1000):
            dim = int(rng.integers(1, 12))
            s = Sample(rng.standard_normal(dim))
            assert deserialize_sample(serialize_sample(s)) == s
            assert deserialize_sample(serialize_sample(s, with_count=True), with_count=True) == s

    @given(st.lists(st.floats(allow_nan=True, allow_infinity=True, width=64), min_size=1, max_size=16))
    def test_roundtrip_property(self, values):
        s = Sample(np.array(values))
        assert deserialize_sample(serialize_sample(s)) == s

    def test_count_prefix_mismatch_rejected(self):
        data = serialize_sample(Sample([1.0, 2.0]), with_count=True)
        with pytest.raises(ValueError):
            deserialize_sample(data[:-8], with_count=True)


class TestCompositeRoundtrips:
    def test_labeled_and_weights_roundtrip_seeded(self):
        rng = np.random.default_rng(99)
        for _ in range(1000):
            d1, d2 = int(rng.integers(1, 8)), int(rng.integers(1, 8))
            ls = LabeledSample(Sample(rng.standard_normal(d1)), Sample(rng.standard_normal(d2)))
            assert deserialize_labeled_sample(serialize_labeled_sample(ls)) == ls
            w = WeightVector(rng.standard_normal(int(rng.integers(1, 32))))
            assert deserialize_weight_vector(serialize_weight_vector(w)) == w

    def test_sample_list_roundtrip_mixed_dims(self):
        samples = [Sample([1.0]), Sample([2.0, 3.0]), Sample([4.0, 5.0, 6.0])]
        assert deserialize_sample_list(serialize_sample_list(samples)) == samples

    def test_empty_list_roundtrip(self):
        assert deserialize_sample_list(serialize_sample_list([])) == []


class TestCommitteeBatch:
    def test_member_major_transpose(self):
        # two members, three generators
        m0 = [Sample([0.0]), Sample([1.0]), Sample([2.0])]
        m1 = [Sample([10.0]), Sample([11.0]), Sample([12.0])]
        batch = CommitteeBatch.from_member_major([m0, m1])
        assert batch.n_generators == 3
        assert batch.n_members == 2
        assert batch.per_generator[1] == (Sample([1.0]), Sample([11.0]))

    def test_ragged_member_lists_rejected(self):
        with pytest.raises(ValueError):
            CommitteeBatch.from_member_major([[Sample([1.0])], [Sample([1.0]), Sample([2.0])]])

    def test_dim_mismatch_within_generator_rejected(self):
        with pytest.raises(ValueError):
            CommitteeBatch([[Sample([1.0]), Sample([1.0, 2.0])]])


class TestValidateConfig:
    def base(self, **overrides):
        raw = dict(
            result_dir="/tmp/x",
            pred_workers=3,
            orcl_workers=5,
            gene_workers=20,
            train_workers=3,
            fixed_size_data=True,
            retrain_size=20,
            dynamic_oracle_list=False,
            progress_save_interval=60,
            oracle_latency=10,
        )
        raw.update(overrides)
        return raw

    def test_reference_counts_total_33(self):
        cfg = validate_config(self.base())
        assert cfg.total_workers == 33

    def test_minimal_counts_total_6(self):
        cfg = validate_config(
            self.base(
                pred_workers=1,
                orcl_workers=1,
                gene_workers=1,
                train_workers=1,
                selection="select_all",
            )
        )
        assert cfg.total_workers == 6

    def test_retrain_size_zero_rejected(self):
        with pytest.raises(ConfigError):
            validate_config(self.base(retrain_size=0))

    @pytest.mark.parametrize("key", REQUIRED_KEYS)
    def test_each_missing_required_key_rejected(self, key):
        raw = self.base()
        del raw[key]
        with pytest.raises(ConfigError) as info:
            validate_config(raw)
        assert key in str(info.value)

    def test_nonpositive_worker_count_rejected_in_parallel_mode(self):
        with pytest.raises(ConfigError):
            validate_config(self.base(gene_workers=0))

    def test_pred_train_pairing_enforced(self):
        with pytest.raises(ConfigError):
            validate_config(self.base(pred_workers=2, train_workers=3))

    def test_committee_selection_needs_two_members(self):
        with pytest.raises(ConfigError):
            validate_config(self.base(pred_workers=1, train_workers=1))

    def test_unknown_key_rejected_by_strict_validation(self):
        with pytest.raises(ConfigError):
            validate_config(self.base(bogus_key=1))

    def test_string_coercion(self):
        raw = {k: str(v) for k, v in self.base().items()}
        raw["fixed_size_data"] = "true"
        cfg = validate_config(raw)
        assert cfg.fixed_size_data is True
        assert cfg.oracle_latency == 10.0

    def test_interval_zero_rejected(self):
        with pytest.raises(ConfigError):
            validate_config(self.base(progress_save_interval=0))
