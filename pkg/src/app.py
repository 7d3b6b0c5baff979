import json
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, ValidationError, model_validator
from pydantic_settings import BaseSettings

from src.dataset import LabeledDataset, SplitSpec, counts_summary, stratified_split
from src.errors import ConfigError, DataError, ShapeError
from src.export import (
    ArtifactWriter,
    file_digest,
    read_jsonl,
    read_predictions_csv,
    write_confusion_csv,
    write_filters_csv,
    write_json,
    write_jsonl,
    write_vectors_jsonl,
)
from src.loss import class_weights, one_hot
from src.metrics import MetricsReport, confusion, metrics_report
from src.nn.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from src.nn.gradcheck import (
    DEFAULT_EPSILON,
    DEFAULT_TOLERANCE,
    MIN_SAMPLES,
    GradCheckResult,
    grad_check,
)
from src.nn.model import MODEL_TENSORS, Activation, Architecture, Readout, classifier, init_params
from src.preprocess import Standardizer, fit_standardizer, prepare
from src.synth import DEFAULT_CLASS_COUNTS, iter_synth_dataset, make_rng, scaled_counts
from src.train import (
    LeakageAudit,
    TrainConfig,
    TrainReport,
    label_names,
    predict,
    run_experiment,
)


class SynthConfig(BaseModel):
    seed: int = 0
    scale: float | None = None
    counts: list[int] | None = None  # explicit per-class counts win over scale

    def resolved_counts(self) -> list[int]:
        if self.counts is not None:
            return list(self.counts)
        if self.scale is not None:
            return scaled_counts(self.scale)
        return list(DEFAULT_CLASS_COUNTS)


class GradCheckConfig(BaseModel):
    """Tiny Conv -> BiLSTM -> dense instance checked against finite differences"""

    input_length: int = 64
    kernel_len: int = 8
    stride: int | None = None
    num_filters: int = 4
    hidden_size: int = 4
    num_classes: int = 3
    batch: int = 4
    activation: Activation = Activation.RELU
    readout: Readout = Readout.FINAL
    epsilon: float = DEFAULT_EPSILON
    tolerance: float = DEFAULT_TOLERANCE
    samples: int | None = None
    seed: int = 0
    mutate: list[str] = []

    @model_validator(mode="after")
    def _check(self):
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.samples is not None and self.samples < MIN_SAMPLES:
            raise ConfigError(f"samples must be >= {MIN_SAMPLES}, got {self.samples}")
        unknown = sorted(set(self.mutate) - set(MODEL_TENSORS))
        if unknown:
            raise ConfigError(f"Unknown tensors to mutate: {unknown}")
        return self

    def architecture(self) -> Architecture:
        return Architecture(
            input_length=self.input_length,
            num_filters=self.num_filters,
            kernel_len=self.kernel_len,
            stride=self.stride or self.kernel_len,
            hidden_size=self.hidden_size,
            num_classes=self.num_classes,
            activation=self.activation,
            readout=self.readout,
        )


class PipelineSettings(BaseSettings):
    """Pipeline configuration: JSON config file, then RFI_* env vars, then defaults"""

    synth: SynthConfig = SynthConfig()
    train: TrainConfig = TrainConfig()
    gradcheck: GradCheckConfig = GradCheckConfig()
    log_level: str = "INFO"

    class Config:
        env_prefix = "RFI_"
        env_nested_delimiter = "__"
        env_file = ".env"
        env_file_encoding = "utf-8"
        extra = "ignore"


def _deep_update(base: dict, updates: dict) -> dict:
    merged = dict(base)
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_update(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_settings(
    config_path: Path | None = None, overrides: dict[str, Any] | None = None
) -> PipelineSettings:
    """Settings from an optional JSON file with CLI overrides on top"""
    payload: dict = {}
    if config_path is not None:
        config_path = Path(config_path)
        if not config_path.exists():
            raise ConfigError(f"Config file not found: {config_path}")
        try:
            payload = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {config_path} is not valid JSON: {e}") from e
        if not isinstance(payload, dict):
            raise ConfigError(f"Config file {config_path} must hold a JSON object")
    payload = _deep_update(payload, overrides or {})
    try:
        return PipelineSettings(**payload)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def setup_logger(level: str = "INFO") -> None:
    logger.remove()
    logger.add(
        sys.stderr,
        level=level.upper(),
        format="<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | {message}",
    )


class RunManifest(BaseModel):
    command: str
    version: str
    created_at: str
    seed: int
    config: dict
    inputs: dict[str, str] = {}  # path -> sha256
    artifacts: dict[str, str] = {}


class RunReport(BaseModel):
    stages: list[TrainReport]
    audit: LeakageAudit
    split_sizes: dict[str, int]
    class_counts: list[int]
    test_accuracy: float


class App:
    name = "RFI Transient Classifier"

    def __init__(self, settings: PipelineSettings | None = None, **kwargs):
        self.settings = settings or PipelineSettings(**kwargs)

    @classmethod
    def from_config(
        cls, config_path: Path | None = None, overrides: dict[str, Any] | None = None
    ) -> "App":
        return cls(load_settings(config_path, overrides))

    # ---- Run manifest ----

    def _manifest(
        self,
        command: str,
        writer: ArtifactWriter,
        inputs: Sequence[Path],
        seed: int,
        filename: str = "manifest.json",
    ) -> Path:
        from src import __version__

        manifest = RunManifest(
            command=command,
            version=__version__,
            created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
            seed=seed,
            config=self.settings.model_dump(mode="json"),
            inputs={str(p): file_digest(p) for p in inputs},
            artifacts=dict(writer.artifacts),
        )
        return write_json(manifest, writer.out_dir / filename)

    # ---- Pipeline commands ----

    def synth(self, out_path: Path) -> list[int]:
        """Write the dataset to ``out_path`` and ``<stem>.manifest.json`` beside it"""
        config = self.settings.synth
        counts = config.resolved_counts()
        out_path = Path(out_path)
        writer = ArtifactWriter(out_path.parent)
        logger.info(f"Synthesizing {sum(counts)} transients with seed {config.seed}")
        written = write_jsonl(
            iter_synth_dataset(counts, config.seed), writer.path("dataset", out_path.name)
        )
        logger.info(counts_summary(written, label_names(len(written))))
        self._manifest("synth", writer, [], config.seed, f"{out_path.stem}.manifest.json")
        return written

    def _load_dataset(self, path: Path) -> LabeledDataset:
        items = read_jsonl(path)
        if not items:
            raise DataError(f"Dataset file {path} is empty")
        return LabeledDataset.from_items(items)

    def split(self, dataset_path: Path, out_prefix: str) -> dict[str, Path]:
        """Write ``<prefix>.train.jsonl``, ``<prefix>.val.jsonl`` and ``<prefix>.test.jsonl``"""
        config = self.settings.train
        data = self._load_dataset(dataset_path)
        parts = stratified_split(data, SplitSpec(fractions=config.split_fractions, seed=config.seed))
        prefix = Path(out_prefix)
        writer = ArtifactWriter(prefix.parent)
        paths = {}
        for name, part in zip(("train", "val", "test"), parts):
            paths[name] = writer.path(name, f"{prefix.name}.{name}.jsonl")
            write_jsonl(part.items, paths[name])
        logger.info(
            "Split sizes: " + ", ".join(f"{n} {len(p)}" for n, p in zip(paths, parts))
        )
        self._manifest(
            "split", writer, [dataset_path], config.seed, f"{prefix.name}.manifest.json"
        )
        return paths

    def preprocess(
        self, train_path: Path, out_dir: Path, apply_paths: Sequence[Path] = ()
    ) -> Path:
        """Fit the standardizer on ``train_path``, then standardize every input"""
        config = self.settings.train
        writer = ArtifactWriter(out_dir)
        raw_train = prepare(read_jsonl(train_path), config.input_length, config.anchor)
        standardizer = fit_standardizer(raw_train)
        standardizer.save(writer.path("standardizer", "standardizer.json"))

        inputs = [(Path(train_path), raw_train)]
        for path in map(Path, apply_paths):
            inputs.append((path, prepare(read_jsonl(path), config.input_length, config.anchor)))
        for path, data in inputs:
            out = writer.path(path.stem, f"{path.stem}.vectors.jsonl")
            write_vectors_jsonl(standardizer.transform_set(data), out)
        self._manifest("preprocess", writer, [train_path, *apply_paths], config.seed)
        return writer.out_dir / "standardizer.json"

    def train(self, dataset_path: Path, out_dir: Path) -> RunReport:
        config = self.settings.train
        writer = ArtifactWriter(out_dir)
        data = self._load_dataset(dataset_path)
        logger.info(f"Training on {len(data)} transients: {data.class_counts.tolist()}")
        result = run_experiment(data, config)

        checkpoint_path = writer.path("checkpoint", "checkpoint.json")
        save_checkpoint(Checkpoint(params=result.params, anchor=config.anchor), checkpoint_path)
        logger.info(f"Checkpoint holds {result.params.parameter_count} parameters")
        result.reports[-1].checkpoint = str(checkpoint_path)
        result.standardizer.save(writer.path("standardizer", "standardizer.json"))
        report = RunReport(
            stages=result.reports,
            audit=result.audit,
            split_sizes={name: len(ids) for name, ids in result.split_ids.items()},
            class_counts=data.class_counts.tolist(),
            test_accuracy=result.metrics.accuracy,
        )
        writer.json("report", "report.json", report)
        writer.json("metrics", "metrics.json", result.metrics)
        names = label_names(result.params.architecture.num_classes)
        write_confusion_csv(result.confusion, names, writer.path("confusion", "confusion.csv"))
        write_jsonl(result.test.items, writer.path("test_set", "test.jsonl"))
        self._manifest("train", writer, [dataset_path], config.seed)
        return report

    def evaluate(
        self,
        checkpoint_path: Path,
        test_path: Path,
        standardizer_path: Path,
        out_dir: Path,
    ) -> MetricsReport:
        checkpoint = load_checkpoint(checkpoint_path)
        arch = checkpoint.architecture
        standardizer = Standardizer.load(standardizer_path)
        if standardizer.length != arch.input_length:
            raise ShapeError(
                f"Standardizer T={standardizer.length} does not match model T={arch.input_length}"
            )
        items = read_jsonl(test_path)
        if not items:
            raise DataError(f"Test file {test_path} is empty")
        vectors = prepare(items, arch.input_length, checkpoint.anchor)
        predicted = predict(
            checkpoint.params,
            standardizer.transform(vectors.X),
            self.settings.train.eval_batch_size,
        )
        writer = ArtifactWriter(out_dir)
        report = self._write_metrics(writer, vectors.labels, predicted, arch.num_classes)
        self._manifest(
            "evaluate",
            writer,
            [checkpoint_path, test_path, standardizer_path],
            self.settings.train.seed,
        )
        return report

    def evaluate_predictions(self, predictions_path: Path, out_dir: Path) -> MetricsReport:
        true, predicted = read_predictions_csv(predictions_path)
        num_classes = int(max(true.max(), predicted.max(), len(DEFAULT_CLASS_COUNTS)))
        writer = ArtifactWriter(out_dir)
        report = self._write_metrics(writer, true, predicted, num_classes)
        self._manifest("evaluate", writer, [predictions_path], self.settings.train.seed)
        return report

    def _write_metrics(
        self, writer: ArtifactWriter, true: np.ndarray, predicted: np.ndarray, num_classes: int
    ) -> MetricsReport:
        names = label_names(num_classes)
        cm = confusion(true, predicted, num_classes)
        report = metrics_report(cm, names)
        writer.json("metrics", "metrics.json", report)
        write_confusion_csv(cm, names, writer.path("confusion", "confusion.csv"))
        logger.info(f"Metrics: {report.summary()}")
        return report

    def gradcheck(self) -> GradCheckResult:
        config = self.settings.gradcheck
        arch = config.architecture()
        rng = make_rng(config.seed, 99)
        X = rng.standard_normal((config.batch, arch.input_length))
        labels = rng.integers(1, arch.num_classes + 1, size=config.batch)
        C = class_weights(rng.integers(1, 20, size=arch.num_classes))
        params = init_params(arch, config.seed)
        result = grad_check(
            classifier(arch),
            params.tensors,
            X,
            one_hot(labels, arch.num_classes),
            C,
            epsilon=config.epsilon,
            samples=config.samples,
            seed=config.seed,
            mutate=config.mutate,
        )
        verdict = "passed" if result.passed(config.tolerance) else "FAILED"
        logger.info(
            f"Gradient check {verdict}: max relative error {result.max_rel_error:.3e} "
            f"over {result.compared} of {result.checked} parameters "
            f"(worst {result.worst or '-'})"
        )
        return result

    def filters_dump(self, checkpoint_path: Path, out_csv: Path) -> Path:
        checkpoint = load_checkpoint(checkpoint_path)
        return write_filters_csv(checkpoint.params.conv_filters, out_csv)

    @staticmethod
    def config_schema() -> dict:
        return PipelineSettings.model_json_schema()
