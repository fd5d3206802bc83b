"""Domain types, bit-exact serialization, and configuration validation.

Everything exchanged between workers is built from 1-D float64 arrays.
Values are immutable after construction so they can be copied between
worker threads freely.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError

_U32 = struct.Struct("<I")
_F64 = 8


def _freeze(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {arr.shape}")
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Sample:
    """A flat vector of float64 values: one generator query, prediction, or label.

    Equality and hashing are bit-exact (NaN payloads included), which makes
    Samples usable as dedup keys.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = _freeze(self.values)
        if arr.size < 1:
            raise ValueError("Sample must have dim >= 1")
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        return self.values.tobytes() == other.values.tobytes()

    def __hash__(self) -> int:
        return hash(self.values.tobytes())

    def __repr__(self) -> str:
        return f"Sample({np.array2string(self.values, max_line_width=60)})"

    @classmethod
    def zeros(cls, dim: int) -> "Sample":
        return cls(np.zeros(dim))

    def is_all_zero(self) -> bool:
        return not self.values.any()


@dataclass(frozen=True)
class LabeledSample:
    """An (input, label) pair produced by an oracle."""

    input: Sample
    label: Sample

    def __hash__(self) -> int:
        return hash((self.input, self.label))


@dataclass(frozen=True)
class WeightVector:
    """Flat float64 encoding of one model's parameters."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _freeze(self.values))

    @property
    def size(self) -> int:
        return int(self.values.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightVector):
            return NotImplemented
        return self.values.tobytes() == other.values.tobytes()

    def __hash__(self) -> int:
        return hash(self.values.tobytes())


class CommitteeBatch:
    """Gathered committee predictions, indexed (generator, member, output dim).

    ``per_generator[g][m]`` is committee member m's prediction for generator
    g's input. All members' predictions for one generator must share dim.
    """

    def __init__(self, per_generator: Sequence[Sequence[Sample]]):
        rows = tuple(tuple(row) for row in per_generator)
        if not rows:
            raise ValueError("CommitteeBatch needs at least one generator row")
        n_members = len(rows[0])
        for g, row in enumerate(rows):
            if len(row) != n_members:
                raise ValueError(f"generator {g}: expected {n_members} members, got {len(row)}")
            dims = {s.dim for s in row}
            if len(dims) > 1:
                raise ValueError(f"generator {g}: member predictions disagree on dim: {dims}")
        self.per_generator = rows

    @property
    def n_generators(self) -> int:
        return len(self.per_generator)

    @property
    def n_members(self) -> int:
        return len(self.per_generator[0])

    @classmethod
    def from_member_major(cls, per_member: Sequence[Sequence[Sample]]) -> "CommitteeBatch":
        """Build from one prediction list per committee member (rank order)."""
        n_gene = {len(row) for row in per_member}
        if len(n_gene) != 1:
            raise ValueError(f"member prediction lists disagree on length: {n_gene}")
        return cls(list(zip(*per_member)))

    def member_matrix(self, g: int) -> np.ndarray:
        """Predictions for generator g stacked as an (n_members, dim) array."""
        return np.stack([s.values for s in self.per_generator[g]])


# --- wire encoding -----------------------------------------------------------
#
# Numeric payloads are little-endian float64 with no compression.  When data
# sizes are not fixed for the whole run, a vector is prefixed with its element
# count as an unsigned 32-bit integer; composite payloads (lists, pairs) are
# always self-describing.


def serialize_sample(s: Sample, with_count: bool = False) -> bytes:
    data = s.values.astype("<f8").tobytes()
    if with_count:
        return _U32.pack(s.dim) + data
    return data


def deserialize_sample(data: bytes, with_count: bool = False) -> Sample:
    if with_count:
        (dim,) = _U32.unpack_from(data)
        body = data[_U32.size:]
        if len(body) != dim * _F64:
            raise ValueError(f"count prefix says {dim} floats, payload has {len(body)} bytes")
    else:
        body = data
        if len(body) % _F64:
            raise ValueError(f"payload length {len(body)} is not a multiple of 8")
    return Sample(np.frombuffer(body, dtype="<f8"))


def serialize_weight_vector(w: WeightVector) -> bytes:
    return w.values.astype("<f8").tobytes()


def deserialize_weight_vector(data: bytes) -> WeightVector:
    if len(data) % _F64:
        raise ValueError(f"payload length {len(data)} is not a multiple of 8")
    return WeightVector(np.frombuffer(data, dtype="<f8"))


def serialize_sample_list(samples: Sequence[Sample]) -> bytes:
    parts = [_U32.pack(len(samples))]
    for s in samples:
        parts.append(serialize_sample(s, with_count=True))
    return b"".join(parts)


def deserialize_sample_list(data: bytes) -> list[Sample]:
    (count,) = _U32.unpack_from(data)
    off = _U32.size
    out = []
    for _ in range(count):
        (dim,) = _U32.unpack_from(data, off)
        off += _U32.size
        end = off + dim * _F64
        out.append(Sample(np.frombuffer(data[off:end], dtype="<f8")))
        off = end
    if off != len(data):
        raise ValueError("trailing bytes after sample list")
    return out


def serialize_labeled_sample(ls: LabeledSample) -> bytes:
    return serialize_sample_list([ls.input, ls.label])


def deserialize_labeled_sample(data: bytes) -> LabeledSample:
    pair = deserialize_sample_list(data)
    if len(pair) != 2:
        raise ValueError(f"expected (input, label) pair, got {len(pair)} vectors")
    return LabeledSample(pair[0], pair[1])


def serialize_labeled_list(items: Sequence[LabeledSample]) -> bytes:
    flat: list[Sample] = []
    for ls in items:
        flat.extend((ls.input, ls.label))
    return serialize_sample_list(flat)


def deserialize_labeled_list(data: bytes) -> list[LabeledSample]:
    flat = deserialize_sample_list(data)
    if len(flat) % 2:
        raise ValueError("labeled list payload has an odd number of vectors")
    return [LabeledSample(flat[i], flat[i + 1]) for i in range(0, len(flat), 2)]


# --- configuration -----------------------------------------------------------

MODES = ("parallel", "serial", "estimate")
SELECTION_HOOKS = ("committee_std", "select_all", "none")

#: number of controller roles on top of the four kernels
CONTROLLER_ROLES = 2


@dataclass
class WorkflowConfig:
    """Validated run settings.

    The canonical field names below are what the code uses; the config file
    grammar also accepts the historical process-count key spellings
    (``pred_process`` and friends), see :mod:`alflow.config`.
    """

    result_dir: str
    pred_workers: int
    orcl_workers: int
    gene_workers: int
    train_workers: int
    fixed_size_data: bool
    retrain_size: int
    dynamic_oracle_list: bool
    progress_save_interval: float
    oracle_latency: float
    selection_threshold: float = 0.0
    seed: int = 0
    mode: str = "parallel"

    # kernel toggles: disabling oracle+training turns the run into a pure
    # prediction/generation workflow
    oracle_enabled: bool = True
    training_enabled: bool = True

    # selection hook choice; "none" routes nothing to the oracle buffer
    selection: str = "committee_std"

    # oracle input buffer bound; senders block rather than drop when full
    oracle_buffer_capacity: int = 10_000

    # toy-workload knobs (simulated latencies in seconds, model hyperparams)
    sample_dim: int = 4
    gene_latency: float = 0.0
    pred_latency: float = 0.0
    train_latency: float = 0.0
    epochs_per_round: int = 30
    learning_rate: float = 0.02
    batch_size: int = 10
    val_split: float = 0.2
    noise_scale: float = 0.0
    gene_iteration_limit: int = 300_000
    train_time_budget: float = float("inf")

    @property
    def total_workers(self) -> int:
        return (
            self.pred_workers
            + self.orcl_workers
            + self.gene_workers
            + self.train_workers
            + CONTROLLER_ROLES
        )

    def digest(self) -> dict:
        """Fields that must match for two runs to be comparable."""
        skip = {"result_dir", "mode"}
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in skip}


_REQUIRED = (
    "result_dir",
    "pred_workers",
    "orcl_workers",
    "gene_workers",
    "train_workers",
    "fixed_size_data",
    "retrain_size",
    "dynamic_oracle_list",
    "progress_save_interval",
    "oracle_latency",
)

_BOOL_FIELDS = {"fixed_size_data", "dynamic_oracle_list", "oracle_enabled", "training_enabled"}
_INT_FIELDS = {
    "pred_workers", "orcl_workers", "gene_workers", "train_workers",
    "retrain_size", "seed", "sample_dim", "epochs_per_round", "batch_size",
    "gene_iteration_limit", "oracle_buffer_capacity",
}
_FLOAT_FIELDS = {
    "progress_save_interval", "oracle_latency", "selection_threshold",
    "gene_latency", "pred_latency", "train_latency", "learning_rate",
    "val_split", "noise_scale", "train_time_budget",
}

REQUIRED_KEYS = _REQUIRED
KNOWN_KEYS = tuple(f.name for f in fields(WorkflowConfig))


def _coerce(key: str, value):
    if key in _BOOL_FIELDS:
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in ("true", "1", "yes"):
            return True
        if text in ("false", "0", "no"):
            return False
        raise ConfigError(f"key '{key}': expected a boolean, got {value!r}", key=key)
    if key in _INT_FIELDS:
        try:
            return int(str(value).strip())
        except ValueError:
            raise ConfigError(f"key '{key}': expected an integer, got {value!r}", key=key) from None
    if key in _FLOAT_FIELDS:
        try:
            return float(str(value).strip())
        except ValueError:
            raise ConfigError(f"key '{key}': expected a number, got {value!r}", key=key) from None
    return str(value).strip()


def validate_config(raw: Mapping[str, object]) -> WorkflowConfig:
    """Validate a raw key-value map into a :class:`WorkflowConfig`.

    Raises :class:`ConfigError` naming the offending key for anything
    missing, mistyped, or out of range.
    """
    for key in _REQUIRED:
        if key not in raw:
            raise ConfigError(f"missing required config key '{key}'", key=key)
    unknown = [k for k in raw if k not in KNOWN_KEYS]
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}", key=unknown[0])

    kwargs = {key: _coerce(key, value) for key, value in raw.items()}
    cfg = WorkflowConfig(**kwargs)

    if cfg.mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got '{cfg.mode}'", key="mode")
    if cfg.selection not in SELECTION_HOOKS:
        raise ConfigError(
            f"selection must be one of {SELECTION_HOOKS}, got '{cfg.selection}'", key="selection"
        )
    if cfg.retrain_size < 1:
        raise ConfigError("retrain_size must be >= 1", key="retrain_size")
    if cfg.progress_save_interval <= 0:
        raise ConfigError("progress_save_interval must be > 0", key="progress_save_interval")
    if cfg.oracle_latency < 0:
        raise ConfigError("oracle_latency must be >= 0", key="oracle_latency")
    if cfg.selection_threshold < 0:
        raise ConfigError("selection_threshold must be >= 0", key="selection_threshold")
    if cfg.oracle_buffer_capacity < 1:
        raise ConfigError("oracle_buffer_capacity must be >= 1", key="oracle_buffer_capacity")
    if not 0.0 <= cfg.val_split < 1.0:
        raise ConfigError("val_split must be in [0, 1)", key="val_split")

    if cfg.mode == "parallel":
        counts = {
            "pred_workers": cfg.pred_workers,
            "gene_workers": cfg.gene_workers,
        }
        if cfg.oracle_enabled:
            counts["orcl_workers"] = cfg.orcl_workers
        if cfg.training_enabled:
            counts["train_workers"] = cfg.train_workers
        for key, value in counts.items():
            if value < 1:
                raise ConfigError(f"{key} must be >= 1 in parallel mode", key=key)

    if cfg.training_enabled and cfg.pred_workers != cfg.train_workers:
        raise ConfigError(
            "pred_workers must equal train_workers: each trainer syncs weights "
            "to its paired predictor",
            key="train_workers",
        )
    if cfg.selection == "committee_std" and cfg.oracle_enabled and cfg.pred_workers < 2:
        raise ConfigError(
            "committee_std selection needs at least 2 prediction workers "
            "(sample std is undefined for one member)",
            key="pred_workers",
        )
    if cfg.dynamic_oracle_list and cfg.training_enabled and cfg.train_workers < 2:
        raise ConfigError(
            "dynamic_oracle_list needs at least 2 training workers to compute "
            "post-retrain prediction std",
            key="train_workers",
        )
    return cfg
