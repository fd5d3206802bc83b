"""Parallel active-learning orchestration.

Data generation, committee prediction, ground-truth labeling, and model
training run as decoupled workers coordinated by a two-part controller
over a collective message-passing layer. A strictly phased serial
baseline and an analytical cost model quantify the parallelization gain.
"""

from .config import dump_config, load_config
from .controller import (
    OracleInputBuffer,
    SelectionDecision,
    TrainingDataBuffer,
    adjust_oracle_buffer,
    prediction_check,
)
from .errors import (
    AlflowError,
    ComparisonError,
    ConfigError,
    DeadWorker,
    DegenerateWorkload,
    LengthMismatch,
    ProtocolError,
    SizeMismatch,
    TransportError,
)
from .kernels import (
    GeneratorPlugin,
    OraclePlugin,
    PredictorPlugin,
    TrainerPlugin,
)
from .runner import DeterministicResult, RunReport, run_deterministic, run_parallel, serial_run
from .speedup import (
    PRESETS,
    ComparisonReport,
    WorkloadParams,
    compare_measured,
    speedup,
    t_parallel,
    t_serial,
)
from .toy import WorkloadBundle, build_toy_bundle
from .transport import Envelope, Kernel, QueueTransport, SocketTransport, Tag, WorkerId
from .types import (
    CommitteeBatch,
    LabeledSample,
    Sample,
    WeightVector,
    WorkflowConfig,
    validate_config,
)

__version__ = "0.1.0"
