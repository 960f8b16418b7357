"""Utility functions for bmacopula."""

import hashlib
import math
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import pydantic
import toml
import ujson5

from bmacopula.errors import ConfigError
from bmacopula.models import DEFAULT_RUN_CONFIG, PydRunConfig, RunConfig


def dump_config(path: Path, config: RunConfig) -> None:
    """Dump a run configuration to a JSON5 file."""
    with open(path, "w", encoding="utf8") as f:
        ujson5.dump(PydRunConfig.dump_python(config, mode="json"), f, RunConfig, indent=2)


def dump_schema(path: Path) -> None:
    """Dump the run configuration schema to a file."""
    with open(path, "w", encoding="utf8") as f:
        ujson5.dump(PydRunConfig.json_schema(), f, indent=2)


def _finite(obj: Any) -> Any:
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, Mapping):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list | tuple):
        return [_finite(v) for v in obj]
    return obj


def dump_json(path: Path, obj: Any) -> None:
    """Write an artifact; non-finite floats are written as null."""
    with open(path, "w", encoding="utf8") as f:
        ujson5.dump(_finite(obj), f, indent=2)
        f.write("\n")


def load_json(path: Path) -> Any:
    with open(path, "r", encoding="utf8") as f:
        return ujson5.load(f)


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def load_mapping(path: Path) -> dict[str, Any]:
    """Read a JSON5 or TOML file (chosen by suffix) whose top level is a mapping.

    Raises:
        ConfigError: the file is missing, malformed or not a mapping.
    """
    try:
        with open(path, "r", encoding="utf8") as f:
            loaded = toml.load(f) if path.suffix == ".toml" else ujson5.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"File {path} does not exist.") from exc
    except ValueError as exc:  # decode errors of both toml and ujson5
        raise ConfigError(f"File {path} is malformed: {exc}") from exc
    if not isinstance(loaded, dict):
        raise ConfigError(f"File {path} must hold a mapping.")
    return loaded


def load_run_config(
    path: Path | None = None, overrides: Mapping[str, Any] | None = None
) -> RunConfig:
    """Layer a config file (JSON5 or TOML) and overrides over the defaults.

    Relative dataset and output paths in a file are resolved against the
    file's directory.

    Raises:
        ConfigError: the file cannot be read or the result fails validation.
    """
    merged: dict[str, Any] = dict(DEFAULT_RUN_CONFIG)
    if path is not None:
        loaded = load_mapping(path)
        for key in ("calibration_path", "test_path", "output_dir"):
            if isinstance(loaded.get(key), str):
                loaded[key] = str(path.parent / loaded[key])
        merged.update(loaded)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return PydRunConfig.validate_python(merged)
    except pydantic.ValidationError as exc:
        raise ConfigError(f"Invalid run configuration: {exc}") from exc
