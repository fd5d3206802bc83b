"""Command-line entry point.

Subcommands: ``run`` (concurrent workflow), ``serial`` (phased baseline),
``estimate`` (analytical speedup), ``compare`` (paired serial+parallel run
checked against the analytical bound), ``replay`` (determinism check).

Exit codes are a stable contract for CI: 0 success, 1 runtime failure,
2 configuration error, 3 comparison failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .config import load_config
from .errors import AlflowError, ComparisonError, ConfigError, DegenerateWorkload
from .results import ResultsLayout, write_report
from .runner import run_deterministic, run_parallel, serial_run
from .speedup import (
    PRESETS,
    WorkloadParams,
    compare_measured,
    params_from_config,
    speedup,
    t_parallel,
    t_serial,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_COMPARISON = 3


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    return str(value)


def _print_kv(prefix: dict) -> None:
    print(" ".join(f"{k}={_fmt(v)}" for k, v in prefix.items()))


def _print_report(report) -> None:
    _print_kv(
        {
            "mode": report.mode,
            "rounds": report.rounds_completed,
            "wall_time": round(report.wall_time, 6),
            "oracle_calls": report.oracle_calls,
            "selections": report.selections,
            "flushes": report.flushes,
            "failure": report.failure,
            "stop_reason": report.stop_reason,
        }
    )


def cmd_run(args) -> int:
    config = load_config(args.config, args.override)
    if args.mode == "deterministic":
        result = run_deterministic(config, args.rounds)
        _print_kv(
            {
                "mode": "deterministic",
                "rounds": result.rounds_completed,
                "selections": len(result.selections),
                "oracle_calls": result.oracle_calls,
                "flushes": result.flushes,
                "virtual_time": round(result.virtual_time, 6),
                "stop_reason": result.stop_reason,
            }
        )
        return EXIT_OK
    report = run_parallel(config, args.rounds, drain=args.drain)
    _print_report(report)
    return EXIT_RUNTIME if report.failure else EXIT_OK


def cmd_serial(args) -> int:
    config = load_config(args.config, args.override)
    config = dataclasses.replace(config, mode="serial")
    report = serial_run(config, args.rounds)
    _print_report(report)
    return EXIT_RUNTIME if report.failure else EXIT_OK


def _estimate_line(name: str, params: WorkloadParams) -> None:
    _print_kv(
        {
            "set": name,
            "t_serial": t_serial(params),
            "t_parallel": t_parallel(params),
            "speedup": speedup(params),
        }
    )


def cmd_estimate(args) -> int:
    if args.preset:
        params = PRESETS[args.preset]
        if args.n is not None or args.p is not None:
            params = dataclasses.replace(
                params,
                n=args.n if args.n is not None else params.n,
                p=args.p if args.p is not None else params.p,
            )
        _estimate_line(args.preset, params)
        return EXIT_OK
    if args.sweep:
        rows = 0
        for lineno, line in enumerate(Path(args.sweep).read_text().splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            parts = stripped.replace(",", " ").split()
            if len(parts) != 5:
                raise ConfigError(
                    f"sweep line {lineno}: expected 't_oracle t_train t_gen n p'", line=lineno
                )
            params = WorkloadParams(
                float(parts[0]), float(parts[1]), float(parts[2]), int(parts[3]), int(parts[4])
            )
            rows += 1
            _estimate_line(f"row{rows}", params)
        return EXIT_OK
    if None in (args.t_oracle, args.t_train, args.t_gen, args.n, args.p):
        raise ConfigError("estimate needs --preset, --sweep, or all of --t-oracle/--t-train/--t-gen/--n/--p")
    _estimate_line("params", WorkloadParams(args.t_oracle, args.t_train, args.t_gen, args.n, args.p))
    return EXIT_OK


def cmd_compare(args) -> int:
    config = load_config(args.config, args.override)
    root = Path(config.result_dir)
    serial_cfg = dataclasses.replace(config, mode="serial", result_dir=str(root / "serial"))
    parallel_cfg = dataclasses.replace(config, mode="parallel", result_dir=str(root / "parallel"))

    report_serial = serial_run(serial_cfg, args.rounds)
    report_parallel = run_parallel(parallel_cfg, args.rounds, drain=True)
    if report_parallel.failure:
        print("parallel run failed; no comparison possible", file=sys.stderr)
        return EXIT_RUNTIME

    comparison = compare_measured(
        report_serial, report_parallel, params_from_config(config), tolerance=args.tolerance
    )
    layout = ResultsLayout(config.result_dir).ensure()
    write_report(layout.comparison_report_path, [("comparison", comparison.summary_dict())])
    for key, value in comparison.summary_dict().items():
        print(f"{key}={_fmt(value)}")
    print(f"comparison={'pass' if comparison.passed else 'fail'}")
    return EXIT_OK if comparison.passed else EXIT_COMPARISON


def cmd_replay(args) -> int:
    config = load_config(args.config, args.override)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    first = run_deterministic(config, args.rounds)
    second = run_deterministic(config, args.rounds)
    if first.matches(second):
        _print_kv({"replay": "identical", "selections": len(first.selections)})
        return EXIT_OK
    _print_kv({"replay": "diverged", "index": first.divergence_index(second)})
    return EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alflow",
        description="Parallel active-learning workflow runner and speedup estimator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, rounds_default: int):
        p.add_argument("--config", required=True, help="path to a key=value config file")
        p.add_argument("--rounds", type=int, default=rounds_default)
        p.add_argument(
            "--override",
            action="append",
            default=[],
            metavar="K=V",
            help="override a config key (repeatable; applied before validation)",
        )

    p_run = sub.add_parser("run", help="run the concurrent workflow")
    add_common(p_run, rounds_default=100)
    p_run.add_argument(
        "--mode",
        choices=("concurrent", "deterministic"),
        default="concurrent",
        help="scheduler: real threads or the single-threaded replay driver",
    )
    p_run.add_argument(
        "--drain",
        action="store_true",
        help="after the last round, finish all buffered labeling and retraining",
    )
    p_run.set_defaults(func=cmd_run)

    p_serial = sub.add_parser("serial", help="run the strictly phased baseline")
    add_common(p_serial, rounds_default=100)
    p_serial.set_defaults(func=cmd_serial)

    p_est = sub.add_parser("estimate", help="print analytical runtimes and speedup")
    p_est.add_argument("--preset", choices=sorted(PRESETS))
    p_est.add_argument("--sweep", help="file with 't_oracle t_train t_gen n p' rows")
    p_est.add_argument("--t-oracle", type=float, dest="t_oracle")
    p_est.add_argument("--t-train", type=float, dest="t_train")
    p_est.add_argument("--t-gen", type=float, dest="t_gen")
    p_est.add_argument("--n", type=int)
    p_est.add_argument("--p", type=int)
    p_est.set_defaults(func=cmd_estimate)

    p_cmp = sub.add_parser("compare", help="paired serial and parallel run with bound check")
    add_common(p_cmp, rounds_default=20)
    p_cmp.add_argument("--tolerance", type=float, default=0.15)
    p_cmp.set_defaults(func=cmd_compare)

    p_rep = sub.add_parser("replay", help="two deterministic runs must match exactly")
    add_common(p_rep, rounds_default=20)
    p_rep.add_argument("--seed", type=int, help="override the config seed for both runs")
    p_rep.set_defaults(func=cmd_replay)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"ConfigError: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ComparisonError, DegenerateWorkload) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPARISON
    except AlflowError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
