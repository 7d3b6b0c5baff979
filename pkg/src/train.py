"""Two-stage training and the end-to-end experiment.

Stage one trains the conv layer under a temporary flatten+dense head. Stage
two freezes the conv filters, runs them once over every vector and trains the
BiLSTM + dense classifier on the resulting feature maps. Both stages keep the
weights of the epoch with the lowest validation loss.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, model_validator

from src.dataset import (
    LabeledDataset,
    SplitSpec,
    balance_by_downsampling,
    class_counts,
    ids_digest,
    merge,
    stratified_split,
)
from src.errors import ConfigError, DataError, StratificationError, TrainingError
from src.loss import (
    class_weights,
    loss_gradient_at_logits,
    one_hot,
    uniform_weights,
    weighted_cross_entropy,
)
from src.metrics import ConfusionMatrix, MetricsReport, confusion, metrics_report
from src.nn.model import (
    CONV_TENSORS,
    Activation,
    Architecture,
    ModelParams,
    Network,
    Readout,
    Tensors,
    classifier,
    init_conv,
    init_dense,
    init_head,
    init_lstm,
    pretrainer,
)
from src.nn.optim import OptimizerKind, OptimizerState, optimizer_step
from src.preprocess import Standardizer, VectorSet, fit_standardizer, prepare
from src.synth import DEFAULT_ARCHETYPES, NUM_CLASSES, class_names, make_rng


class ImbalanceMode(str, Enum):
    DOWNSAMPLE = "downsample"
    CLASS_WEIGHTED = "class_weighted"


class Stage(str, Enum):
    CNN_PRETRAIN = "cnn_pretrain"
    LSTM_TRAIN = "lstm_train"


# spawn keys for the per-stage generators
_INIT_KEYS = {Stage.CNN_PRETRAIN: 1, Stage.LSTM_TRAIN: 2}
_SHUFFLE_KEYS = {Stage.CNN_PRETRAIN: 11, Stage.LSTM_TRAIN: 12}


class TrainConfig(BaseModel):
    model_config = ConfigDict(validate_assignment=True)

    input_length: int = 5000
    anchor: int = 100
    batch_size: int = 256
    kernel_len: int = 160
    num_filters: int = 64
    hidden_size: int = 32
    stride: int | None = None  # defaults to kernel_len
    activation: Activation = Activation.RELU
    readout: Readout = Readout.FINAL
    learning_rate: float = 1e-3
    optimizer: OptimizerKind = OptimizerKind.ADAM
    max_epochs: int = 50
    pretrain_epochs: int | None = None  # defaults to max_epochs
    patience: int = 10
    imbalance_mode: ImbalanceMode = ImbalanceMode.CLASS_WEIGHTED
    merge_train_val: bool = True
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    eval_batch_size: int = 512
    seed: int = 0
    threads: int = 1
    deterministic: bool = False

    @model_validator(mode="after")
    def _check(self):
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_epochs < 0 or (self.pretrain_epochs is not None and self.pretrain_epochs < 0):
            raise ConfigError("epoch counts must be >= 0")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.kernel_len > self.input_length:
            raise ConfigError(
                f"kernel_len {self.kernel_len} exceeds input_length {self.input_length}"
            )
        SplitSpec(fractions=self.split_fractions, seed=self.seed)
        return self

    def architecture(self, num_classes: int = NUM_CLASSES) -> Architecture:
        return Architecture(
            input_length=self.input_length,
            num_filters=self.num_filters,
            kernel_len=self.kernel_len,
            stride=self.stride or self.kernel_len,
            hidden_size=self.hidden_size,
            num_classes=num_classes,
            activation=self.activation,
            readout=self.readout,
        )

    @property
    def effective_threads(self) -> int:
        return 1 if self.deterministic else self.threads

    def epochs_for(self, stage: Stage) -> int:
        if stage is Stage.CNN_PRETRAIN and self.pretrain_epochs is not None:
            return self.pretrain_epochs
        return self.max_epochs


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    val_loss: float | None = None
    val_accuracy: float | None = None

    @model_validator(mode="after")
    def _check(self):
        for loss in (self.train_loss, self.val_loss):
            if loss is not None and (not math.isfinite(loss) or loss < 0):
                raise TrainingError(f"Epoch {self.epoch}: invalid loss {loss}")
        return self


class TrainReport(BaseModel):
    stage: Stage
    epochs: list[EpochRecord] = []
    best_epoch: int | None = None
    class_weights: list[float] = []
    batch_size: int = 0
    checkpoint: str | None = None

    @property
    def best(self) -> EpochRecord | None:
        if self.best_epoch is None:
            return None
        return next(r for r in self.epochs if r.epoch == self.best_epoch)

    @property
    def epochs_to_best(self) -> int:
        return 0 if self.best_epoch is None else self.best_epoch + 1


def stage_weights(labels: np.ndarray, config: TrainConfig, num_classes: int) -> np.ndarray:
    """C from the training labels in class_weighted mode, ones otherwise"""
    if ImbalanceMode(config.imbalance_mode) is ImbalanceMode.CLASS_WEIGHTED:
        counts = np.bincount(np.asarray(labels) - 1, minlength=num_classes)
        return class_weights(counts)
    return uniform_weights(num_classes)


def _batch_gradients(
    model: Network,
    tensors: Tensors,
    inputs: np.ndarray,
    Y: np.ndarray,
    C: np.ndarray,
    threads: int,
    pool: ThreadPoolExecutor | None,
) -> tuple[float, Tensors]:
    """Loss and gradient of one minibatch, summed over chunks in chunk order"""
    n = len(inputs)
    chunks = [c for c in np.array_split(np.arange(n), threads) if c.size]

    def work(index: np.ndarray):
        trace = model.forward(tensors, inputs[index])
        share = index.size / n
        loss = weighted_cross_entropy(Y[index], trace.probs, C) * share
        grad_logits = loss_gradient_at_logits(Y[index], trace.probs, C) * share
        grads, _ = model.backward(tensors, trace, grad_logits)
        return loss, grads

    results = list(pool.map(work, chunks)) if pool else [work(c) for c in chunks]
    loss, grads = results[0]
    grads = dict(grads)
    for chunk_loss, chunk_grads in results[1:]:
        loss += chunk_loss
        for name, grad in chunk_grads.items():
            grads[name] = grads[name] + grad
    return loss, grads


def _evaluate(
    model: Network,
    tensors: Tensors,
    inputs: np.ndarray,
    labels: np.ndarray,
    C: np.ndarray,
    batch_size: int,
) -> tuple[float, float]:
    probs = model.predict_proba(tensors, inputs, batch_size)
    loss = weighted_cross_entropy(one_hot(labels, probs.shape[1]), probs, C)
    acc = float(np.mean(np.argmax(probs, axis=1) + 1 == labels))
    return loss, acc


def _fit(
    model: Network,
    tensors: Tensors,
    train: tuple[np.ndarray, np.ndarray],
    val: tuple[np.ndarray, np.ndarray] | None,
    weights: np.ndarray,
    config: TrainConfig,
    stage: Stage,
    epochs: int | None = None,
) -> tuple[Tensors, TrainReport]:
    inputs, labels = train
    n_train = len(inputs)
    batch_size = config.batch_size
    if batch_size > n_train:
        logger.warning(f"{stage.value}: batch size {batch_size} clamped to {n_train} samples")
        batch_size = n_train
    report = TrainReport(stage=stage, class_weights=weights.tolist(), batch_size=batch_size)

    total_epochs = config.epochs_for(stage) if epochs is None else epochs
    if total_epochs == 0 or n_train == 0:
        return dict(tensors), report

    Y = one_hot(labels, len(weights))
    rng = make_rng(config.seed, _SHUFFLE_KEYS[stage])
    state = OptimizerState(kind=OptimizerKind(config.optimizer))
    threads = config.effective_threads
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    tensors = dict(tensors)
    best_tensors, best_loss, best_epoch = tensors, math.inf, None
    try:
        for epoch in range(total_epochs):
            order = rng.permutation(n_train)
            loss_sum = 0.0
            for start in range(0, n_train, batch_size):
                index = order[start : start + batch_size]
                loss, grads = _batch_gradients(
                    model, tensors, inputs[index], Y[index], weights, threads, pool
                )
                if not math.isfinite(loss):
                    raise TrainingError(f"{stage.value}: loss diverged at epoch {epoch}")
                loss_sum += loss * index.size
                tensors = optimizer_step(tensors, grads, state, config.learning_rate)
            record = EpochRecord(epoch=epoch, train_loss=loss_sum / n_train)

            if val is not None and len(val[0]):
                val_loss, val_acc = _evaluate(
                    model, tensors, val[0], val[1], weights, config.eval_batch_size
                )
                if not math.isfinite(val_loss):
                    raise TrainingError(
                        f"{stage.value}: validation loss diverged at epoch {epoch}"
                    )
                record.val_loss, record.val_accuracy = val_loss, val_acc
                report.epochs.append(record)
                logger.info(
                    f"{stage.value} epoch {epoch}: train {record.train_loss:.4f}, "
                    f"val {val_loss:.4f}, val acc {val_acc:.4f}"
                )
                if val_loss < best_loss:
                    best_tensors, best_loss, best_epoch = tensors, val_loss, epoch
                elif epoch - best_epoch >= config.patience:
                    logger.info(f"{stage.value}: early stop after epoch {epoch}")
                    break
            else:
                report.epochs.append(record)
                logger.info(f"{stage.value} epoch {epoch}: train {record.train_loss:.4f}")
                best_tensors, best_epoch = tensors, epoch
    finally:
        if pool is not None:
            pool.shutdown()

    report.best_epoch = best_epoch
    logger.info(f"{stage.value}: best epoch {best_epoch}")
    return best_tensors, report


def _as_pair(data: VectorSet | None) -> tuple[np.ndarray, np.ndarray] | None:
    if data is None or len(data) == 0:
        return None
    return data.X, data.labels


def pretrain_cnn(
    train: VectorSet,
    val: VectorSet | None,
    config: TrainConfig,
    num_classes: int = NUM_CLASSES,
    weights: np.ndarray | None = None,
    epochs: int | None = None,
) -> tuple[Tensors, TrainReport]:
    """Train conv + temporary flatten/dense head; returns the conv tensors only"""
    arch = config.architecture(num_classes)
    rng = make_rng(config.seed, _INIT_KEYS[Stage.CNN_PRETRAIN])
    tensors = {**init_conv(arch, rng), **init_head(arch, rng)}
    if weights is None:
        weights = stage_weights(train.labels, config, num_classes)
    best, report = _fit(
        pretrainer(arch),
        tensors,
        (train.X, train.labels),
        _as_pair(val),
        weights,
        config,
        Stage.CNN_PRETRAIN,
        epochs,
    )
    return {name: best[name] for name in CONV_TENSORS}, report


def train_full(
    conv: Tensors,
    train: VectorSet,
    val: VectorSet | None,
    config: TrainConfig,
    num_classes: int = NUM_CLASSES,
    weights: np.ndarray | None = None,
    epochs: int | None = None,
) -> tuple[ModelParams, TrainReport]:
    """Freeze ``conv`` and train BiLSTM + dense on its feature maps"""
    arch = config.architecture(num_classes)
    network = classifier(arch)
    conv = {name: np.array(conv[name], dtype=np.float64) for name in CONV_TENSORS}
    train_features = network.feature_maps(conv, train.X, config.eval_batch_size)
    val_pair = _as_pair(val)
    if val_pair is not None:
        val_pair = (network.feature_maps(conv, val.X, config.eval_batch_size), val.labels)

    rng = make_rng(config.seed, _INIT_KEYS[Stage.LSTM_TRAIN])
    tensors = {**init_lstm(arch, rng), **init_dense(arch, rng)}
    if weights is None:
        weights = stage_weights(train.labels, config, num_classes)
    best, report = _fit(
        network.head,
        tensors,
        (train_features, train.labels),
        val_pair,
        weights,
        config,
        Stage.LSTM_TRAIN,
        epochs,
    )
    return ModelParams(architecture=arch, tensors={**conv, **best}), report


def predict(params: ModelParams, X: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """1-based predicted labels"""
    probs = classifier(params.architecture).predict_proba(params.tensors, X, batch_size)
    return np.argmax(probs, axis=1) + 1


class LeakageAudit(BaseModel):
    fitted_on: str
    training_digest: str
    training_items: int
    test_overlap: int

    @property
    def passed(self) -> bool:
        return self.fitted_on == self.training_digest and self.test_overlap == 0


@dataclass
class ExperimentResult:
    params: ModelParams
    standardizer: Standardizer
    reports: list[TrainReport]
    confusion: ConfusionMatrix
    metrics: MetricsReport
    split_ids: dict[str, list[int]]
    audit: LeakageAudit
    test: LabeledDataset


def label_names(num_classes: int) -> list[str]:
    if num_classes == len(DEFAULT_ARCHETYPES):
        return class_names()
    return [str(i) for i in range(1, num_classes + 1)]


def _fit_stages(
    train: VectorSet,
    val: VectorSet | None,
    config: TrainConfig,
    num_classes: int,
    epochs: tuple[int, int] | None = None,
) -> tuple[Standardizer, ModelParams, list[TrainReport]]:
    standardizer = fit_standardizer(train)
    train = standardizer.transform_set(train)
    val = standardizer.transform_set(val) if val is not None else None
    weights = stage_weights(train.labels, config, num_classes)
    pre_epochs, full_epochs = epochs if epochs is not None else (None, None)
    conv, pre_report = pretrain_cnn(train, val, config, num_classes, weights, pre_epochs)
    params, full_report = train_full(conv, train, val, config, num_classes, weights, full_epochs)
    return standardizer, params, [pre_report, full_report]


def run_experiment(dataset: LabeledDataset, config: TrainConfig) -> ExperimentResult:
    """split -> (downsample) -> preprocess -> pretrain -> train_full -> test metrics"""
    num_classes = dataset.num_classes
    data = dataset
    if ImbalanceMode(config.imbalance_mode) is ImbalanceMode.DOWNSAMPLE:
        data = balance_by_downsampling(dataset, config.seed)
    train, val, test = stratified_split(
        data, SplitSpec(fractions=config.split_fractions, seed=config.seed)
    )
    missing = np.flatnonzero(class_counts(test, allow_empty=True) == 0)
    if missing.size:
        raise StratificationError(
            f"Class {int(missing[0]) + 1} gets no test items under fractions "
            f"{tuple(config.split_fractions)}; it needs more samples"
        )
    logger.info(f"Training class counts: {class_counts(train, allow_empty=True).tolist()}")

    raw_train, raw_val, raw_test = (
        prepare(part.items, config.input_length, config.anchor) for part in (train, val, test)
    )
    standardizer, params, reports = _fit_stages(raw_train, raw_val, config, num_classes)
    training_ids = train.ids
    if config.merge_train_val:
        fixed = (reports[0].epochs_to_best, reports[1].epochs_to_best)
        logger.info(f"Retraining on train+val for {fixed[0]} + {fixed[1]} epochs")
        standardizer, params, final_reports = _fit_stages(
            raw_train.concat(raw_val), None, config, num_classes, fixed
        )
        reports += final_reports
        training_ids = merge(train, val).ids

    audit = LeakageAudit(
        fitted_on=standardizer.fitted_on,
        training_digest=ids_digest(training_ids),
        training_items=len(training_ids),
        test_overlap=len(set(training_ids) & set(test.ids)),
    )
    if not audit.passed:
        raise DataError("Standardizer was fitted on items outside the training set")

    predicted = predict(params, standardizer.transform(raw_test.X), config.eval_batch_size)
    cm = confusion(raw_test.labels, predicted, num_classes)
    metrics = metrics_report(cm, label_names(num_classes))
    logger.info(f"Test metrics: {metrics.summary()}")
    return ExperimentResult(
        params=params,
        standardizer=standardizer,
        reports=reports,
        confusion=cm,
        metrics=metrics,
        split_ids={"train": train.ids, "validation": val.ids, "test": test.ids},
        audit=audit,
        test=test,
    )
