"""JSON checkpoints: explicit shapes and row-major flattened values.

Floats are written with Python's shortest round-trip repr, so loading gives
back bit-identical tensors.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from loguru import logger
from pydantic import ValidationError

from src.errors import ConfigError, DataError
from src.nn.model import Architecture, ModelParams
from src.preprocess import DEFAULT_ANCHOR

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: ModelParams
    anchor: int = DEFAULT_ANCHOR

    @property
    def architecture(self) -> Architecture:
        return self.params.architecture


def to_dict(checkpoint: Checkpoint) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "architecture": checkpoint.architecture.model_dump(mode="json"),
        "preprocessing": {
            "T": checkpoint.architecture.input_length,
            "anchor": checkpoint.anchor,
        },
        "tensors": {
            name: {"shape": list(tensor.shape), "values": tensor.reshape(-1).tolist()}
            for name, tensor in checkpoint.params.tensors.items()
        },
    }


def from_dict(payload: dict) -> Checkpoint:
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(f"Unsupported checkpoint format_version {version!r}")
    try:
        architecture = Architecture(**payload["architecture"])
        tensors = {
            name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in payload["tensors"].items()
        }
        anchor = int(payload.get("preprocessing", {}).get("anchor", DEFAULT_ANCHOR))
    except (KeyError, TypeError, ValueError, ValidationError) as e:
        raise DataError(f"Malformed checkpoint: {e}") from e
    return Checkpoint(params=ModelParams(architecture=architecture, tensors=tensors), anchor=anchor)


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> Path:
    path = Path(path)
    try:
        path.write_text(json.dumps(to_dict(checkpoint)), encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot write checkpoint to {path}: {e}") from e
    logger.success(f"Checkpoint written to {path}")
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Checkpoint not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"Checkpoint {path} is not valid JSON: {e}") from e
    return from_dict(payload)
