"""File formats: JSON Lines datasets, CSV tables and JSON artifacts."""

import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel

from src.errors import ConfigError, DataError, InputError
from src.metrics import ConfusionMatrix
from src.preprocess import VectorSet
from src.synth import Transient


def _open_for_write(path: Path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return path.open("w", encoding="utf-8", newline="\n")
    except OSError as e:
        raise ConfigError(f"Cannot write to {path}: {e}") from e


def _line(item_id: int, label: int, samples: np.ndarray) -> str:
    if not np.all(np.isfinite(samples)):
        raise DataError(f"Item {item_id} has non-finite samples")
    record = {"id": int(item_id), "class": int(label), "samples": samples.tolist()}
    return json.dumps(record, separators=(",", ":")) + "\n"


def write_jsonl(items: Iterable[Transient], path: Path) -> list[int]:
    """Write one transient per line; returns per-class counts seen"""
    counts: dict[int, int] = {}
    with _open_for_write(path) as f:
        for t in items:
            f.write(_line(t.item_id, t.label, t.samples))
            counts[t.label] = counts.get(t.label, 0) + 1
    total = sum(counts.values())
    logger.success(f"Wrote {total} transients to {path}")
    return [counts[label] for label in sorted(counts)]


def write_vectors_jsonl(data: VectorSet, path: Path) -> None:
    with _open_for_write(path) as f:
        for i in range(len(data)):
            f.write(_line(int(data.ids[i]), int(data.labels[i]), data.X[i]))
    logger.success(f"Wrote {len(data)} preprocessed vectors to {path}")


def read_jsonl(path: Path) -> list[Transient]:
    """Items get the ``id`` stored in the file, else their line index"""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Dataset file not found: {path}")
    items = []
    with path.open("rb") as f:
        for line_no, raw in enumerate(f):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise DataError(f"{path}:{line_no + 1}: not valid UTF-8 ({e})") from e
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                label = int(record["class"])
                samples = np.asarray(record["samples"], dtype=np.float64)
                item_id = int(record.get("id", line_no))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DataError(f"{path}:{line_no + 1}: malformed record ({e})") from e
            if not np.all(np.isfinite(samples)):
                raise DataError(f"{path}:{line_no + 1}: non-finite sample values")
            items.append(Transient(samples=samples, label=label, item_id=item_id))
    logger.info(f"Read {len(items)} transients from {path}")
    return items


def write_json(payload: BaseModel | dict, path: Path) -> Path:
    if isinstance(payload, BaseModel):
        text = payload.model_dump_json(indent=2)
    else:
        text = json.dumps(payload, indent=2)
    with _open_for_write(path) as f:
        f.write(text + "\n")
    return Path(path)


def confusion_frame(cm: ConfusionMatrix, names: Sequence[str]) -> pd.DataFrame:
    frame = pd.DataFrame(cm.counts, index=list(names), columns=list(names))
    frame.index.name = "true \\ predicted"
    return frame


def write_confusion_csv(cm: ConfusionMatrix, names: Sequence[str], path: Path) -> Path:
    with _open_for_write(path) as f:
        confusion_frame(cm, names).to_csv(f, lineterminator="\n")
    logger.success(f"Confusion matrix written to {path}")
    return Path(path)


def write_filters_csv(filters: np.ndarray, path: Path) -> Path:
    """One row per conv filter, one column per kernel tap"""
    frame = pd.DataFrame(
        filters,
        index=pd.RangeIndex(1, filters.shape[0] + 1, name="filter"),
        columns=[f"k{k}" for k in range(filters.shape[1])],
    )
    with _open_for_write(path) as f:
        frame.to_csv(f, lineterminator="\n", float_format="%.17g")
    logger.success(f"Wrote {filters.shape[0]} filters to {path}")
    return Path(path)


def read_filters_csv(path: Path) -> np.ndarray:
    frame = pd.read_csv(path, index_col="filter", float_precision="round_trip")
    return frame.to_numpy(dtype=np.float64)


def read_predictions_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """Columns ``true`` and ``predicted``, 1-based labels"""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Predictions file not found: {path}")
    try:
        frame = pd.read_csv(path)
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise DataError(f"Cannot read predictions from {path}: {e}") from e
    missing = {"true", "predicted"} - set(frame.columns)
    if missing:
        raise InputError(f"Predictions file {path} lacks columns {sorted(missing)}")
    if frame.empty:
        raise DataError(f"Predictions file {path} has no rows")
    columns = []
    for name in ("true", "predicted"):
        values = pd.to_numeric(frame[name], errors="coerce").to_numpy(dtype=np.float64)
        bad = np.flatnonzero(~np.isfinite(values) | (values != np.round(values)))
        if bad.size:
            row = int(bad[0])
            raise InputError(
                f"{path}: row {row + 1} has non-integer {name} label {frame[name].iloc[row]!r}"
            )
        columns.append(values.astype(np.int64))
    return columns[0], columns[1]


def file_digest(path: Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


class ArtifactWriter:
    """Writes run artifacts into one directory and remembers what it wrote"""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"Cannot create output directory {self.out_dir}: {e}") from e
        self.artifacts: dict[str, str] = {}

    def path(self, name: str, filename: str) -> Path:
        path = self.out_dir / filename
        self.artifacts[name] = str(path)
        return path

    def json(self, name: str, filename: str, payload: BaseModel | dict) -> Path:
        return write_json(payload, self.path(name, filename))
