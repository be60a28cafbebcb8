"""Run-directory artifacts: manifest, accuracy-matrix CSV, JSON-lines records.

Every result file is reproducible bitwise from (config, seed); the
manifest additionally carries wall-clock timestamps and is therefore the
one artifact excluded from that guarantee.
"""

from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .streams import TaskStream, generate_blob_stream, load_dataset


class ConfigError(ValueError):
    """Invalid or unknown configuration input (exit code 2)."""


class MissingArtifactError(FileNotFoundError):
    """A required run artifact is absent (exit code 3)."""


#: config keys describing the data stream rather than the estimator
STREAM_KEYS = {
    "tasks": int,
    "classes_per_task": int,
    "n_per_class": int,
    "dim": int,
    "separation": float,
    "stream_seed": int,
    "data": str,
}

ESTIMATOR_KEYS = {
    "method": str,
    "epochs": int,
    "batch_size": int,
    "memory_size": int,
    "lr": float,
    "momentum": float,
    "weight_decay": float,
    "lr_drop_epochs": "int_list",
    "alpha": float,
    "beta": float,
    "lam": float,
    "eta": float,
    "margin": float,
    "temperature": float,
    "gamma": float,
    "hidden_sizes": "int_list",
    "preallocated_heads": "heads",
    "aug_noise": float,
    "strong_noise": float,
    "strong_mask": float,
    "strong_jitter": float,
    "log_every": int,
    "seed": int,
}

DEFAULT_CONFIG = {
    "method": "xder",
    "tasks": 5,
    "classes_per_task": 10,
    "n_per_class": 50,
    "dim": 8,
    "separation": 6.0,
    "stream_seed": 7,
    "data": "",
    "epochs": 5,
    "batch_size": 32,
    "memory_size": 100,
    "lr": 0.03,
    "momentum": 0.0,
    "weight_decay": 0.0,
    "lr_drop_epochs": (),
    "alpha": 0.3,
    "beta": 0.8,
    "lam": 0.05,
    "eta": 0.001,
    "margin": 0.3,
    "temperature": 5.0,
    "gamma": 0.85,
    "hidden_sizes": (32, 32),
    "preallocated_heads": "all",
    "aug_noise": 0.05,
    "strong_noise": 0.1,
    "strong_mask": 0.25,
    "strong_jitter": 0.2,
    "log_every": 25,
    "seed": 0,
}


def _coerce(key: str, raw, kind):
    if kind == "int_list":
        if isinstance(raw, (list, tuple)):
            return tuple(int(v) for v in raw)
        raw = str(raw).strip()
        if not raw:
            return ()
        return tuple(int(v) for v in raw.split(","))
    if kind == "heads":
        if raw == "all":
            return "all"
        return int(raw)
    try:
        return kind(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for config key {key!r}: {raw!r}") from exc


def coerce_config(values: dict) -> dict:
    """Validate keys, apply defaults, and coerce value types."""
    known = {**STREAM_KEYS, **ESTIMATOR_KEYS}
    config = dict(DEFAULT_CONFIG)
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        config[key] = _coerce(key, raw, known[key])
    return config


def parse_config_file(path) -> dict:
    """Read flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def run_id_for(config: dict) -> str:
    """Deterministic 12-hex identifier of a canonicalized config."""
    canon = json.dumps(
        {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(config.items())}
    )
    return hashlib.sha1(canon.encode()).hexdigest()[:12]


def build_stream(config: dict) -> TaskStream:
    if config["data"]:
        return load_dataset(
            config["data"],
            config["tasks"],
            config["classes_per_task"],
            config["stream_seed"],
        )
    return generate_blob_stream(
        config["tasks"],
        config["classes_per_task"],
        config["n_per_class"],
        config["dim"],
        config["separation"],
        config["stream_seed"],
    )


def estimator_params(config: dict) -> dict:
    return {key: config[key] for key in ESTIMATOR_KEYS}


# -- manifest ------------------------------------------------------------------

_MANIFEST_REQUIRED = {
    "run_id": str,
    "config": dict,
    "seed": int,
    "stream": dict,
    "status": str,
    "started_at": str,
    "artifacts": dict,
}


def new_manifest(run_id: str, config: dict, stream: TaskStream) -> dict:
    return {
        "run_id": run_id,
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in config.items()},
        "seed": config["seed"],
        "stream": {
            "num_tasks": stream.num_tasks,
            "classes_per_task": stream.classes_per_task,
            "feature_dim": stream.feature_dim,
        },
        "status": "running",
        "started_at": datetime.now(timezone.utc).isoformat(),
        "finished_at": None,
        "artifacts": {},
    }


def save_manifest(run_dir: Path, manifest: dict) -> None:
    (run_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
    )


def load_manifest(run_dir) -> dict:
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        raise MissingArtifactError(f"no manifest.json in {run_dir}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    validate_manifest(manifest)
    return manifest


def validate_manifest(manifest: dict) -> None:
    for key, kind in _MANIFEST_REQUIRED.items():
        if key not in manifest:
            raise ConfigError(f"manifest missing field {key!r}")
        if not isinstance(manifest[key], kind):
            raise ConfigError(f"manifest field {key!r} has wrong type")
    if manifest["status"] not in ("running", "complete"):
        raise ConfigError(f"manifest status {manifest['status']!r} invalid")


def require_complete(manifest: dict, run_dir) -> None:
    if manifest["status"] != "complete":
        raise MissingArtifactError(f"run {run_dir} is incomplete (status=running)")


# -- result files ---------------------------------------------------------------

def write_matrix_csv(path, matrix: np.ndarray) -> None:
    """Rows are tasks, columns are boundaries; unseen cells stay empty."""
    lines = []
    for row in matrix:
        lines.append(",".join("" if np.isnan(v) else repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_matrix_csv(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"no accuracy matrix at {path}")
    rows = []
    for line in path.read_text(encoding="utf-8").splitlines():
        rows.append([float(v) if v else np.nan for v in line.split(",")])
    return np.array(rows)


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


def read_jsonl(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"no record file at {path}")
    return [
        json.loads(line)
        for line in path.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
