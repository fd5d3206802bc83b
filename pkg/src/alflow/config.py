"""Config file loading.

Grammar: one ``key = value`` pair per line, ``#`` starts a comment,
booleans are true/false, durations are decimal seconds. Process-count
keys follow the historical settings-block spellings (``pred_process``,
``orcl_time``, including the misspelled ``dynamic_orcale_list``), which
are accepted as aliases of the canonical field names. Keys tied to batch
schedulers and GPU placement are parsed and ignored with a warning.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, Mapping

from .errors import ConfigError
from .types import KNOWN_KEYS, WorkflowConfig, validate_config

log = logging.getLogger(__name__)

#: historical settings keys -> canonical field names
ALIASES = {
    "pred_process": "pred_workers",
    "orcl_process": "orcl_workers",
    "gene_process": "gene_workers",
    "ml_process": "train_workers",
    "orcl_time": "oracle_latency",
    "dynamic_orcale_list": "dynamic_oracle_list",
}

#: recognized but out of scope (batch schedulers, GPU placement, buffer backup)
IGNORED_PREFIXES = (
    "designate_task_number",
    "task_per_node",
    "gpu_pred",
    "gpu_ml",
    "orcl_buffer_path",
    "ml_buffer_path",
    "usr_pkg",
)


def parse_config_text(text: str) -> dict[str, str]:
    """Parse the key=value grammar, reporting the line of any defect."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}", line=lineno)
        key, value = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key", line=lineno)
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'", key=key, line=lineno)
        raw[key] = value.strip()
    return raw


def _canonicalize(raw: Mapping[str, str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for key, value in raw.items():
        name = ALIASES.get(key, key)
        if name in KNOWN_KEYS:
            if name in out:
                raise ConfigError(f"key '{key}' duplicates '{name}'", key=key)
            out[name] = value
        elif any(key == p or key.startswith(p + ".") for p in IGNORED_PREFIXES):
            log.warning("config key '%s' is out of scope here; ignoring", key)
        else:
            log.warning("unknown config key '%s'; ignoring", key)
    return out


def apply_overrides(raw: dict[str, str], overrides: Iterable[str]) -> dict[str, str]:
    """Apply ``key=value`` override strings on top of file-loaded settings."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        key = ALIASES.get(key.strip(), key.strip())
        raw[key] = value.strip()
    return raw


def load_config(path: str | Path, overrides: Iterable[str] = ()) -> WorkflowConfig:
    """Load, alias-map, override, and validate a config file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    raw = _canonicalize(parse_config_text(text))
    apply_overrides(raw, overrides)
    return validate_config(raw)


def dump_config(config: WorkflowConfig) -> str:
    """Emit a config in canonical form; loading it back is a fixed point."""
    lines = []
    for key in KNOWN_KEYS:
        value = getattr(config, key)
        if isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
