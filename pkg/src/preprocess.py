"""Raw transients to fixed-length standardized vectors.

Order: align by peak, amplitude-scale the unpadded samples, crop or zero-pad to
T, standardize with parameters fitted on training vectors only.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from loguru import logger

from src.dataset import ids_digest
from src.errors import ConfigError, DataError, FitError, ShapeError
from src.synth import Transient

DEFAULT_LENGTH = 5000
DEFAULT_ANCHOR = 100
EPSILON = 1e-8


@dataclass(frozen=True, eq=False)
class FixedVector:
    values: np.ndarray
    label: int
    item_id: int = -1

    @property
    def length(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True, eq=False)
class VectorSet:
    """Batch of fixed-length vectors: X [N, T], labels [N] (1-based), ids [N]"""

    X: np.ndarray
    labels: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        if self.X.ndim != 2:
            raise ShapeError(f"VectorSet expects a 2-D matrix, got shape {self.X.shape}")
        if not len(self.X) == len(self.labels) == len(self.ids):
            raise ShapeError("VectorSet rows, labels and ids differ in length")

    def __len__(self) -> int:
        return int(self.X.shape[0])

    @property
    def length(self) -> int:
        return int(self.X.shape[1])

    @classmethod
    def from_vectors(cls, vectors: Sequence[FixedVector], length: int | None = None):
        if not vectors:
            return cls(
                X=np.zeros((0, length or 0)),
                labels=np.zeros(0, dtype=np.int64),
                ids=np.zeros(0, dtype=np.int64),
            )
        lengths = {v.length for v in vectors}
        if len(lengths) != 1:
            raise ShapeError(f"Vectors have mixed lengths {sorted(lengths)}")
        return cls(
            X=np.stack([v.values for v in vectors]),
            labels=np.array([v.label for v in vectors], dtype=np.int64),
            ids=np.array([v.item_id for v in vectors], dtype=np.int64),
        )

    def concat(self, other: "VectorSet") -> "VectorSet":
        return VectorSet(
            X=np.concatenate([self.X, other.X]),
            labels=np.concatenate([self.labels, other.labels]),
            ids=np.concatenate([self.ids, other.ids]),
        )


def peak_index(samples: np.ndarray) -> int:
    """Earliest index of the largest |sample|"""
    return int(np.argmax(np.abs(samples)))


def align_by_peak(t: Transient, anchor: int = DEFAULT_ANCHOR) -> Transient:
    """Shift so the peak sits at ``anchor``; vacated positions become zeros"""
    if anchor < 0:
        raise ConfigError(f"anchor must be >= 0, got {anchor}")
    shift = anchor - peak_index(t.samples)
    if shift == 0:
        return t
    if shift < 0:
        aligned = np.zeros(t.length)
        aligned[: t.length + shift] = t.samples[-shift:]
    else:
        aligned = np.concatenate([np.zeros(shift), t.samples])
    return Transient(samples=aligned, label=t.label, item_id=t.item_id)


def scale_samples(samples: np.ndarray) -> np.ndarray:
    low, high = float(np.min(samples)), float(np.max(samples))
    if high == low:
        return np.zeros_like(samples, dtype=np.float64)
    return 2 * (samples - low) / (high - low) - 1


def amplitude_scale(t: Transient) -> Transient:
    """Map the transient's range onto [-1, 1]; a constant transient becomes zeros"""
    return Transient(samples=scale_samples(t.samples), label=t.label, item_id=t.item_id)


def crop_pad(t: Transient | FixedVector, length: int = DEFAULT_LENGTH) -> FixedVector:
    if length < 1:
        raise ConfigError(f"Vector length must be >= 1, got {length}")
    samples = t.values if isinstance(t, FixedVector) else t.samples
    values = np.zeros(length, dtype=np.float64)
    kept = min(length, samples.size)
    values[:kept] = samples[:kept]
    return FixedVector(values=values, label=t.label, item_id=t.item_id)


def prepare_transient(
    t: Transient, length: int = DEFAULT_LENGTH, anchor: int = DEFAULT_ANCHOR
) -> FixedVector:
    return crop_pad(amplitude_scale(align_by_peak(t, anchor)), length)


def prepare(
    items: Sequence[Transient], length: int = DEFAULT_LENGTH, anchor: int = DEFAULT_ANCHOR
) -> VectorSet:
    return VectorSet.from_vectors(
        [prepare_transient(t, length, anchor) for t in items], length=length
    )


@dataclass(frozen=True, eq=False)
class Standardizer:
    mu: np.ndarray
    sigma: np.ndarray
    fitted_on: str = ""

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape or self.mu.ndim != 1:
            raise ShapeError(
                f"mu {self.mu.shape} and sigma {self.sigma.shape} must be equal 1-D shapes"
            )
        if np.any(self.sigma < 0):
            raise FitError("sigma must be non-negative")

    @property
    def length(self) -> int:
        return int(self.mu.size)

    @property
    def divisor(self) -> np.ndarray:
        return np.maximum(self.sigma, EPSILON)

    def transform(self, X: np.ndarray) -> np.ndarray:
        if X.shape[-1] != self.length:
            raise ShapeError(
                f"Standardizer fitted for T={self.length}, got vectors of length {X.shape[-1]}"
            )
        return (X - self.mu) / self.divisor

    def transform_set(self, data: VectorSet) -> VectorSet:
        return VectorSet(X=self.transform(data.X), labels=data.labels, ids=data.ids)

    def to_dict(self) -> dict:
        return {
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "T": self.length,
            "fitted_on": self.fitted_on,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Standardizer":
        try:
            mu = np.asarray(payload["mu"], dtype=np.float64)
            sigma = np.asarray(payload["sigma"], dtype=np.float64)
            length = int(payload["T"])
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"Malformed standardizer: {e}") from e
        if mu.size != length:
            raise ShapeError(f"Standardizer declares T={length} but holds {mu.size} values")
        return cls(mu=mu, sigma=sigma, fitted_on=str(payload.get("fitted_on", "")))

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "Standardizer":
        path = Path(path)
        if not path.exists():
            raise DataError(f"Standardizer file not found: {path}")
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DataError(f"Standardizer file {path} is not valid JSON: {e}") from e
        return cls.from_dict(payload)


def fit_standardizer(train: VectorSet | Sequence[FixedVector]) -> Standardizer:
    """Per-feature mean and population std over training vectors"""
    if not isinstance(train, VectorSet):
        train = VectorSet.from_vectors(list(train))
    if len(train) < 2:
        raise FitError(f"Standardizer needs at least 2 training vectors, got {len(train)}")
    standardizer = Standardizer(
        mu=train.X.mean(axis=0),
        sigma=train.X.std(axis=0),
        fitted_on=ids_digest(train.ids),
    )
    degenerate = int(np.sum(standardizer.sigma < EPSILON))
    logger.debug(
        f"Fitted standardizer on {len(train)} vectors ({degenerate} zero-variance features)"
    )
    return standardizer


def apply_standardizer(s: Standardizer, v: FixedVector) -> FixedVector:
    if v.length != s.length:
        raise ShapeError(f"Standardizer fitted for T={s.length}, got vector of length {v.length}")
    return FixedVector(values=s.transform(v.values), label=v.label, item_id=v.item_id)
