"""Synthetic transient RFI generator.

The recorded transients are not public, so every source class is emulated by
an archetype: a sum of damped sinusoid bursts with random inter-burst gaps on
top of white noise. Relay classes get contact-bounce sub-bursts, the CFL gets
bursts on a 100 Hz-like envelope and the cable class is a short broadband
spike. The physics is invented; the archetypes only need to be distinct and
learnable.

Randomness comes from numpy's ``Philox`` bit generator (Philox-4x64-10, a
counter-based generator) keyed through ``SeedSequence``. A transient is a pure
function of ``(archetype, seed)``; inside a dataset the seed of transient
``index`` of class ``c`` is ``SeedSequence(seed, spawn_key=(c, index))``, so
any subset can be regenerated on its own.
"""

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, model_validator

from src.errors import ConfigError, DataError

# per-class sample counts of the recorded dataset
DEFAULT_CLASS_COUNTS: tuple[int, ...] = (662, 543, 5523, 264, 16006, 35932, 3675, 525)
NUM_CLASSES = 8

MIN_LENGTH = 500
MAX_LENGTH = 8000
MAX_NOISE_REDRAWS = 8

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True, eq=False)
class Transient:
    """One variable-length waveform and its class label (1-based)"""

    samples: np.ndarray
    label: int
    item_id: int = -1

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise DataError(f"Transient {self.item_id} has no samples")
        if self.label < 1:
            raise DataError(f"Transient {self.item_id} has invalid label {self.label}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def length(self) -> int:
        return int(self.samples.size)


class ClassArchetype(BaseModel):
    """Parameter ranges from which transients of one class are drawn"""

    model_config = ConfigDict(frozen=True)

    class_id: int
    name: str
    short_name: str
    carrier_freq_range: tuple[float, float]  # fraction of the sample rate
    damping_range: tuple[float, float]  # per-sample decay constant
    burst_count_range: tuple[int, int]
    length_range: tuple[int, int]
    amplitude_range: tuple[float, float] = (0.5, 1.5)
    gap_range: tuple[int, int] = (1, 1)
    noise_floor: float = 0.02

    @model_validator(mode="after")
    def _check_ranges(self):
        for field in (
            "carrier_freq_range",
            "damping_range",
            "burst_count_range",
            "length_range",
            "amplitude_range",
            "gap_range",
        ):
            low, high = getattr(self, field)
            if low > high:
                raise ConfigError(
                    f"Archetype {self.class_id}: empty interval {field}=({low}, {high})"
                )
        if not 1 <= self.class_id:
            raise ConfigError(f"Archetype class_id must be >= 1, got {self.class_id}")
        f_low, f_high = self.carrier_freq_range
        if f_low <= 0 or f_high >= 0.5:
            raise ConfigError(
                f"Archetype {self.class_id}: carrier frequency must lie in (0, 0.5)"
            )
        if self.damping_range[0] <= 0:
            raise ConfigError(f"Archetype {self.class_id}: damping must be > 0")
        if self.burst_count_range[0] < 1:
            raise ConfigError(f"Archetype {self.class_id}: burst count must be >= 1")
        if self.length_range[0] < MIN_LENGTH or self.length_range[1] > MAX_LENGTH:
            raise ConfigError(
                f"Archetype {self.class_id}: length_range must lie in "
                f"[{MIN_LENGTH}, {MAX_LENGTH}]"
            )
        if self.amplitude_range[0] <= 0:
            raise ConfigError(f"Archetype {self.class_id}: amplitude must be > 0")
        if self.gap_range[0] < 1:
            raise ConfigError(f"Archetype {self.class_id}: gaps must be >= 1 sample")
        if self.noise_floor < 0:
            raise ConfigError(f"Archetype {self.class_id}: noise_floor must be >= 0")
        last_onset = self.gap_range[1] * (self.burst_count_range[1] - 1)
        if last_onset >= self.length_range[0]:
            raise ConfigError(
                f"Archetype {self.class_id}: bursts may start after the shortest "
                f"transient ends ({last_onset} >= {self.length_range[0]})"
            )
        return self

    def range_signature(self) -> tuple:
        return (
            self.carrier_freq_range,
            self.damping_range,
            self.burst_count_range,
            self.length_range,
            self.amplitude_range,
            self.gap_range,
            self.noise_floor,
        )


DEFAULT_ARCHETYPES: tuple[ClassArchetype, ...] = (
    ClassArchetype(
        class_id=1,
        name="Compact fluorescent lamp",
        short_name="CFL",
        carrier_freq_range=(0.020, 0.028),
        damping_range=(0.004, 0.008),
        burst_count_range=(3, 4),
        gap_range=(400, 600),
        length_range=(2500, 4000),
        noise_floor=0.02,
    ),
    ClassArchetype(
        class_id=2,
        name="Power tool",
        short_name="power tool",
        carrier_freq_range=(0.300, 0.330),
        damping_range=(0.010, 0.020),
        burst_count_range=(4, 6),
        gap_range=(80, 200),
        length_range=(1500, 3000),
        noise_floor=0.05,
    ),
    ClassArchetype(
        class_id=3,
        name="Step-down transformer",
        short_name="transformer",
        carrier_freq_range=(0.060, 0.070),
        damping_range=(0.0008, 0.0015),
        burst_count_range=(1, 1),
        length_range=(5000, 8000),
        noise_floor=0.02,
    ),
    ClassArchetype(
        class_id=4,
        name="Cable",
        short_name="cable",
        carrier_freq_range=(0.400, 0.460),
        damping_range=(0.15, 0.30),
        burst_count_range=(1, 2),
        gap_range=(20, 60),
        length_range=(500, 1200),
        noise_floor=0.01,
    ),
    ClassArchetype(
        class_id=5,
        name="Mechanical relay (700W resistive load)",
        short_name="relay (load)",
        carrier_freq_range=(0.120, 0.135),
        damping_range=(0.02, 0.04),
        burst_count_range=(3, 6),
        gap_range=(150, 300),
        length_range=(2000, 4000),
        noise_floor=0.03,
    ),
    ClassArchetype(
        class_id=6,
        name="Mechanical relay (without load)",
        short_name="relay",
        carrier_freq_range=(0.170, 0.185),
        damping_range=(0.03, 0.06),
        burst_count_range=(2, 5),
        gap_range=(100, 250),
        length_range=(1500, 3500),
        noise_floor=0.03,
    ),
    ClassArchetype(
        class_id=7,
        name="AC motor (approximately 1 kW)",
        short_name="AC motor",
        carrier_freq_range=(0.230, 0.250),
        damping_range=(0.002, 0.004),
        burst_count_range=(2, 3),
        gap_range=(700, 900),
        length_range=(4000, 7000),
        noise_floor=0.04,
    ),
    ClassArchetype(
        class_id=8,
        name="Small switching power supply",
        short_name="PSU",
        carrier_freq_range=(0.085, 0.100),
        damping_range=(0.008, 0.015),
        burst_count_range=(1, 2),
        gap_range=(300, 500),
        length_range=(1500, 3000),
        noise_floor=0.02,
    ),
)


@dataclass(frozen=True)
class Burst:
    onset: int
    amplitude: float
    phase: float


@dataclass(frozen=True)
class BurstPlan:
    """Everything drawn for one transient before noise is added"""

    length: int
    carrier: float
    damping: float
    bursts: tuple[Burst, ...]

    def render(self) -> np.ndarray:
        samples = np.zeros(self.length, dtype=np.float64)
        n = np.arange(self.length, dtype=np.float64)
        for burst in self.bursts:
            m = n[burst.onset :] - burst.onset
            samples[burst.onset :] += (
                burst.amplitude
                * np.exp(-self.damping * m)
                * np.sin(2 * math.pi * self.carrier * m + burst.phase)
            )
        return samples


def make_rng(seed: int, *spawn_key: int) -> np.random.Generator:
    sequence = np.random.SeedSequence(seed & _SEED_MASK, spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(sequence))


def derive_seed(seed: int, class_id: int, index: int) -> int:
    """64-bit seed of transient ``index`` of class ``class_id``"""
    sequence = np.random.SeedSequence(seed & _SEED_MASK, spawn_key=(class_id, index))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def _draw_plan(archetype: ClassArchetype, rng: np.random.Generator) -> BurstPlan:
    length = int(rng.integers(archetype.length_range[0], archetype.length_range[1] + 1))
    carrier = float(rng.uniform(*archetype.carrier_freq_range))
    damping = float(rng.uniform(*archetype.damping_range))
    count = int(
        rng.integers(archetype.burst_count_range[0], archetype.burst_count_range[1] + 1)
    )
    bursts = []
    onset = 0
    for k in range(count):
        if k > 0:
            onset += int(rng.integers(archetype.gap_range[0], archetype.gap_range[1] + 1))
        amplitude = float(rng.uniform(*archetype.amplitude_range))
        phase = float(rng.uniform(0.0, 2 * math.pi))
        bursts.append(Burst(onset=onset, amplitude=amplitude, phase=phase))
    return BurstPlan(length=length, carrier=carrier, damping=damping, bursts=tuple(bursts))


def burst_plan(archetype: ClassArchetype, seed: int) -> BurstPlan:
    """The parameters ``synth_transient`` draws for ``(archetype, seed)``"""
    return _draw_plan(archetype, make_rng(seed))


def synth_transient(archetype: ClassArchetype, seed: int, item_id: int = -1) -> Transient:
    rng = make_rng(seed)
    plan = _draw_plan(archetype, rng)
    clean = plan.render()
    if archetype.noise_floor == 0:
        return Transient(samples=clean, label=archetype.class_id, item_id=item_id)

    threshold = 3 * archetype.noise_floor
    for _ in range(MAX_NOISE_REDRAWS):
        samples = clean + rng.normal(0.0, archetype.noise_floor, plan.length)
        if np.max(np.abs(samples)) > threshold:
            return Transient(samples=samples, label=archetype.class_id, item_id=item_id)
    raise ConfigError(
        f"Archetype {archetype.class_id}: peak never exceeds 3x noise floor "
        f"{archetype.noise_floor}"
    )


def scaled_counts(
    scale: float, counts: Sequence[int] = DEFAULT_CLASS_COUNTS, minimum: int = 3
) -> list[int]:
    if scale <= 0:
        raise ConfigError(f"scale must be > 0, got {scale}")
    return [max(minimum, math.floor(scale * c + 1e-9)) for c in counts]


def iter_synth_dataset(
    counts: Sequence[int],
    seed: int,
    archetypes: Sequence[ClassArchetype] = DEFAULT_ARCHETYPES,
) -> Iterator[Transient]:
    if len(counts) == 0:
        raise ConfigError("counts vector is empty")
    if len(counts) != len(archetypes):
        raise ConfigError(
            f"counts has {len(counts)} entries but there are {len(archetypes)} archetypes"
        )
    for archetype, count in zip(archetypes, counts):
        if count < 1:
            raise ConfigError(f"class {archetype.class_id}: count must be >= 1, got {count}")

    item_id = 0
    for archetype, count in zip(archetypes, counts):
        logger.debug(f"Generating {count} transients of class {archetype.class_id}")
        for index in range(count):
            seed_i = derive_seed(seed, archetype.class_id, index)
            yield synth_transient(archetype, seed_i, item_id=item_id)
            item_id += 1


def synth_dataset(
    counts: Sequence[int],
    seed: int,
    archetypes: Sequence[ClassArchetype] = DEFAULT_ARCHETYPES,
) -> list[Transient]:
    return list(iter_synth_dataset(counts, seed, archetypes))


def class_names(archetypes: Sequence[ClassArchetype] = DEFAULT_ARCHETYPES) -> list[str]:
    return [a.short_name for a in archetypes]
