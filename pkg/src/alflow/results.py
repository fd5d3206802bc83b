"""Results-directory layout, report files, and per-worker logging.

Reports are UTF-8 key=value blocks so CI can grep them; an existing
report is preserved under a timestamped name instead of being
overwritten, which keeps paired serial/parallel runs side by side.
"""

from __future__ import annotations

import logging
import os
import time
from pathlib import Path

from .transport import WorkerId
from .types import WorkflowConfig

RUN_REPORT_NAME = "run_report.txt"
COMPARISON_REPORT_NAME = "comparison_report.txt"


class ResultsLayout:
    """All artifact paths for one run, rooted at the configured result_dir."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.log_dir = self.root / "logs"
        self._handlers: list[logging.Handler] = []

    def ensure(self) -> "ResultsLayout":
        self.root.mkdir(parents=True, exist_ok=True)
        self.log_dir.mkdir(exist_ok=True)
        return self

    @property
    def run_report_path(self) -> Path:
        return self.root / RUN_REPORT_NAME

    @property
    def comparison_report_path(self) -> Path:
        return self.root / COMPARISON_REPORT_NAME

    def progress_files(self) -> list[Path]:
        """Progress artifacts currently present (reports and logs excluded)."""
        skip = {RUN_REPORT_NAME, COMPARISON_REPORT_NAME}
        out = []
        for p in sorted(self.root.iterdir()):
            if p.is_file() and p.name not in skip and not p.name.startswith("run_report"):
                out.append(p)
        return out

    def expected_progress_names(self, config: WorkflowConfig) -> set[str]:
        names = {"manager_progress_0.json", "exchange_progress_0.json"}
        names.update(f"generator_data_{r}" for r in range(config.gene_workers))
        names.update(f"predictor_state_{r}.json" for r in range(config.pred_workers))
        if config.oracle_enabled:
            names.update(f"oracle_log_{r}.json" for r in range(config.orcl_workers))
        if config.training_enabled:
            names.update(f"retrain_history_{r}.json" for r in range(config.train_workers))
        return names

    def worker_logger(self, worker: WorkerId, level: int = logging.INFO) -> logging.Logger:
        """A standalone logger writing to this worker's own log file."""
        logger = logging.Logger(f"alflow.{worker}", level)
        handler = logging.FileHandler(self.log_dir / f"{worker.kernel.value}_{worker.rank}.log")
        handler.setFormatter(
            logging.Formatter("%(asctime)s %(levelname)s %(name)s %(message)s")
        )
        logger.addHandler(handler)
        self._handlers.append(handler)
        return logger

    def close_loggers(self) -> None:
        for handler in self._handlers:
            handler.close()
        self._handlers.clear()


def format_kv_block(title: str, values: dict) -> str:
    lines = [f"[{title}]"]
    for key, value in values.items():
        if isinstance(value, float):
            value = format(value, ".6f") if abs(value) < 1e6 else repr(value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def rotate_existing(path: Path) -> None:
    """Keep a previous report under a timestamped name."""
    if path.exists():
        stamp = time.strftime("%Y%m%d-%H%M%S", time.localtime())
        target = path.with_name(f"{path.stem}_{stamp}{path.suffix}")
        counter = 0
        while target.exists():
            counter += 1
            target = path.with_name(f"{path.stem}_{stamp}_{counter}{path.suffix}")
        path.rename(target)


def write_report(path: Path, blocks: list[tuple[str, dict]]) -> Path:
    rotate_existing(path)
    text = "\n".join(format_kv_block(title, values) for title, values in blocks)
    path.write_text(text, encoding="utf-8")
    return path
