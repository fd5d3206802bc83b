"""Analytical runtime and speedup model for the workflow.

The serial baseline pays for labeling, training, and generation one after
another; the concurrent workflow pays only for the slowest of the three.
The labeling term divides the per-sample oracle cost across parallel
labeling workers as an exact ratio (never floored), so algebraic
identities like the balanced-cost speedup hold to the last ulp. The
resulting ratio is a lower bound on real gains: a concurrent run keeps
otherwise-idle workers busy with extra epochs and extra exploration.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .errors import ComparisonError, DegenerateWorkload


@dataclass(frozen=True)
class WorkloadParams:
    """Cost model inputs.

    t_oracle: seconds to label one sample.
    t_train:  seconds for one training round.
    t_gen:    seconds for one generation/prediction block.
    n:        samples labeled per round.
    p:        parallel labeling workers (p <= n).
    """

    t_oracle: float
    t_train: float
    t_gen: float
    n: int
    p: int

    def __post_init__(self):
        if min(self.t_oracle, self.t_train, self.t_gen) < 0:
            raise ValueError("times must be nonnegative")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 1 <= self.p <= self.n:
            raise ValueError("p must satisfy 1 <= p <= n")


def _labeling(p: WorkloadParams) -> Fraction:
    return Fraction(p.n, p.p) * Fraction(p.t_oracle)


def _t_serial(p: WorkloadParams) -> Fraction:
    return _labeling(p) + Fraction(p.t_train) + Fraction(p.t_gen)


def _t_parallel(p: WorkloadParams) -> Fraction:
    return max(_labeling(p), Fraction(p.t_train), Fraction(p.t_gen))


def t_serial(p: WorkloadParams) -> float:
    """Phase-summed runtime of one serial round."""
    return float(_t_serial(p))


def t_parallel(p: WorkloadParams) -> float:
    """Runtime of one concurrent round: the dominant phase."""
    return float(_t_parallel(p))


def speedup(p: WorkloadParams) -> float:
    """t_serial / t_parallel, computed exactly and rounded once."""
    parallel = _t_parallel(p)
    if parallel == 0:
        raise DegenerateWorkload("all phase times are zero; speedup undefined")
    return float(_t_serial(p) / parallel)


#: Parameter presets for the three canonical workload profiles:
#: uc1 - expensive labeling and training, negligible generation;
#: uc2 - training dominates everything else by orders of magnitude;
#: uc3 - all three phases balanced.
PRESETS: dict[str, WorkloadParams] = {
    "uc1": WorkloadParams(t_oracle=3600.0, t_train=3600.0, t_gen=0.0, n=8, p=8),
    "uc2": WorkloadParams(t_oracle=10.0, t_train=3600.0, t_gen=0.0, n=1, p=1),
    "uc3": WorkloadParams(t_oracle=600.0, t_train=600.0, t_gen=600.0, n=4, p=4),
}


@dataclass
class ComparisonReport:
    """Measured speedup of a paired run against the analytical bound."""

    measured_speedup: float
    analytical_speedup: float
    tolerance: float
    passed: bool
    serial_wall: float
    parallel_wall: float
    params: WorkloadParams

    @property
    def bound(self) -> float:
        return self.analytical_speedup * (1.0 - self.tolerance)

    def summary_dict(self) -> dict:
        return {
            "measured_speedup": self.measured_speedup,
            "analytical_speedup": self.analytical_speedup,
            "tolerance": self.tolerance,
            "bound": self.bound,
            "passed": str(self.passed).lower(),
            "serial_wall": self.serial_wall,
            "parallel_wall": self.parallel_wall,
            "t_oracle": self.params.t_oracle,
            "t_train": self.params.t_train,
            "t_gen": self.params.t_gen,
            "n": self.params.n,
            "p": self.params.p,
        }


def compare_measured(
    report_serial,
    report_parallel,
    params: WorkloadParams,
    tolerance: float = 0.15,
) -> ComparisonReport:
    """Check a measured serial/parallel pair against the analytical bound.

    The analytical ratio understates achievable gains, so the check is one
    sided: measured >= analytical * (1 - tolerance). The default tolerance
    absorbs scheduling overhead at small scales.
    """
    if report_serial.mode != "serial" or report_parallel.mode != "parallel":
        raise ComparisonError(
            f"need one serial and one parallel report, got "
            f"{report_serial.mode!r} and {report_parallel.mode!r}"
        )
    if report_serial.config_digest != report_parallel.config_digest:
        raise ComparisonError("reports come from different configurations")
    if report_serial.rounds_requested != report_parallel.rounds_requested:
        raise ComparisonError(
            f"round counts differ: {report_serial.rounds_requested} vs "
            f"{report_parallel.rounds_requested}"
        )
    if report_parallel.wall_time <= 0:
        raise ComparisonError("parallel report has no measurable wall time")
    analytical = speedup(params)  # raises DegenerateWorkload for an all-zero workload
    measured = report_serial.wall_time / report_parallel.wall_time
    return ComparisonReport(
        measured_speedup=measured,
        analytical_speedup=analytical,
        tolerance=tolerance,
        passed=measured >= analytical * (1.0 - tolerance),
        serial_wall=report_serial.wall_time,
        parallel_wall=report_parallel.wall_time,
        params=params,
    )


def params_from_config(config) -> WorkloadParams:
    """Derive the cost model for a toy-workload configuration.

    One round labels one retrain batch; the generation block is the
    per-round generator plus predictor latency.
    """
    return WorkloadParams(
        t_oracle=config.oracle_latency,
        t_train=config.train_latency,
        t_gen=config.gene_latency + config.pred_latency,
        n=config.retrain_size,
        p=config.orcl_workers,
    )
