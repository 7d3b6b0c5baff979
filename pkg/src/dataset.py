"""Labeled transient collections, stratified splitting and class balancing."""

import hashlib
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, field_validator

from src.errors import ConfigError, DataError, StratificationError
from src.synth import NUM_CLASSES, Transient, make_rng

MIN_PER_CLASS_FOR_SPLIT = 3


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Immutable ordered collection of transients over ``num_classes`` labels"""

    items: tuple[Transient, ...]
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        object.__setattr__(self, "items", tuple(self.items))
        for item in self.items:
            if not 1 <= item.label <= self.num_classes:
                raise DataError(
                    f"Item {item.item_id}: label {item.label} outside 1..{self.num_classes}"
                )
        ids = self.ids
        if len(set(ids)) != len(ids):
            raise DataError("Item ids are not unique")

    @classmethod
    def from_items(
        cls, items: Iterable[Transient], num_classes: int = NUM_CLASSES
    ) -> "LabeledDataset":
        """Build a dataset, assigning ids by position to items that have none"""
        items = [
            t if t.item_id >= 0 else Transient(t.samples, t.label, item_id=i)
            for i, t in enumerate(items)
        ]
        return cls(items=tuple(items), num_classes=num_classes)

    def __len__(self) -> int:
        return len(self.items)

    @property
    def ids(self) -> list[int]:
        return [t.item_id for t in self.items]

    @property
    def labels(self) -> np.ndarray:
        return np.array([t.label for t in self.items], dtype=np.int64)

    @property
    def class_counts(self) -> np.ndarray:
        return class_counts(self, allow_empty=True)

    def of_class(self, label: int) -> list[Transient]:
        return [t for t in self.items if t.label == label]


def ids_digest(ids: Iterable[int]) -> str:
    """sha256 over the sorted item ids"""
    payload = ",".join(str(int(i)) for i in sorted(ids)).encode()
    return hashlib.sha256(payload).hexdigest()


def class_counts(data: LabeledDataset, allow_empty: bool = False) -> np.ndarray:
    """Histogram L of labels; entry i-1 counts class i"""
    counts = np.bincount(data.labels - 1, minlength=data.num_classes)
    if not allow_empty:
        empty = [i + 1 for i, c in enumerate(counts) if c == 0]
        if empty:
            raise DataError(f"Class {empty[0]} has no samples")
    return counts.astype(np.int64)


def merge(first: LabeledDataset, second: LabeledDataset) -> LabeledDataset:
    if first.num_classes != second.num_classes:
        raise ConfigError("Cannot merge datasets with different class counts")
    overlap = set(first.ids) & set(second.ids)
    if overlap:
        raise DataError(f"Datasets overlap in {len(overlap)} items")
    return LabeledDataset(items=first.items + second.items, num_classes=first.num_classes)


class SplitSpec(BaseModel):
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0

    @field_validator("fractions")
    @classmethod
    def _check_fractions(cls, value):
        if any(not 0 < f < 1 for f in value):
            raise ConfigError(f"Split fractions must each lie in (0, 1), got {value}")
        if abs(sum(value) - 1) > 1e-9:
            raise ConfigError(f"Split fractions must sum to 1, got {sum(value)}")
        return value


def _shuffled(items: list[Transient], rng: np.random.Generator) -> list[Transient]:
    order = rng.permutation(len(items))
    return [items[i] for i in order]


def stratified_split(
    data: LabeledDataset, spec: SplitSpec
) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Per class: floor(L_i*f_test) to test, floor(L_i*f_val) to validation, rest to train"""
    _, f_val, f_test = spec.fractions
    counts = class_counts(data, allow_empty=True)
    for label, count in enumerate(counts, start=1):
        if count < MIN_PER_CLASS_FOR_SPLIT:
            raise StratificationError(
                f"Class {label} has {count} samples; stratified split needs at least "
                f"{MIN_PER_CLASS_FOR_SPLIT}"
            )

    parts: tuple[list, list, list] = ([], [], [])
    for label in range(1, data.num_classes + 1):
        members = _shuffled(data.of_class(label), make_rng(spec.seed, label))
        n_test = math.floor(len(members) * f_test + 1e-9)
        n_val = math.floor(len(members) * f_val + 1e-9)
        parts[2].extend(members[:n_test])
        parts[1].extend(members[n_test : n_test + n_val])
        parts[0].extend(members[n_test + n_val :])

    # set indices 0/1/2 key the within-set shuffles apart from the class keys
    train, val, test = (
        LabeledDataset(
            items=tuple(_shuffled(part, make_rng(spec.seed, 0, index))),
            num_classes=data.num_classes,
        )
        for index, part in enumerate(parts)
    )
    logger.info(f"Split {len(data)} items into {len(train)}/{len(val)}/{len(test)}")
    return train, val, test


def balance_by_downsampling(data: LabeledDataset, seed: int) -> LabeledDataset:
    """Draw min(L) items per class uniformly without replacement; input order kept"""
    if len(data) == 0:
        raise DataError("Cannot balance an empty dataset")
    counts = class_counts(data)
    target = int(counts.min())

    keep: set[int] = set()
    for label in range(1, data.num_classes + 1):
        members = data.of_class(label)
        if len(members) == target:
            keep.update(t.item_id for t in members)
            continue
        chosen = make_rng(seed, label).choice(len(members), size=target, replace=False)
        keep.update(members[i].item_id for i in chosen)

    balanced = LabeledDataset(
        items=tuple(t for t in data.items if t.item_id in keep),
        num_classes=data.num_classes,
    )
    logger.info(f"Balanced {len(data)} items down to {target} per class ({len(balanced)})")
    return balanced


def counts_summary(counts: Sequence[int], names: Sequence[str] | None = None) -> str:
    names = names or [str(i) for i in range(1, len(counts) + 1)]
    return ", ".join(f"{name}: {count}" for name, count in zip(names, counts))
