"""Command-line entry point: parses arguments, runs one App command, maps errors to exit codes.

Exit codes: 0 success, 1 gradient check failed, 2 invalid config or shapes,
3 bad or missing data, 4 numeric failure during training.
"""

import argparse
import json
import os
from pathlib import Path
from typing import Any, Callable, Sequence

from loguru import logger

from src.app import App, setup_logger
from src.errors import ConfigError, RFIError
from src.nn.model import MODEL_TENSORS, Activation, Readout
from src.nn.optim import OptimizerKind
from src.train import ImbalanceMode

# flag dest -> (settings section, field)
OVERRIDES: dict[str, tuple[str, str]] = {
    "synth_seed": ("synth", "seed"),
    "scale": ("synth", "scale"),
    "counts": ("synth", "counts"),
    "seed": ("train", "seed"),
    "fractions": ("train", "split_fractions"),
    "length": ("train", "input_length"),
    "anchor": ("train", "anchor"),
    "batch_size": ("train", "batch_size"),
    "learning_rate": ("train", "learning_rate"),
    "max_epochs": ("train", "max_epochs"),
    "pretrain_epochs": ("train", "pretrain_epochs"),
    "patience": ("train", "patience"),
    "imbalance_mode": ("train", "imbalance_mode"),
    "merge_train_val": ("train", "merge_train_val"),
    "kernel_len": ("train", "kernel_len"),
    "num_filters": ("train", "num_filters"),
    "hidden_size": ("train", "hidden_size"),
    "stride": ("train", "stride"),
    "activation": ("train", "activation"),
    "readout": ("train", "readout"),
    "optimizer": ("train", "optimizer"),
    "threads": ("train", "threads"),
    "deterministic": ("train", "deterministic"),
    "eps": ("gradcheck", "epsilon"),
    "samples": ("gradcheck", "samples"),
    "gradcheck_seed": ("gradcheck", "seed"),
    "mutate": ("gradcheck", "mutate"),
    "tolerance": ("gradcheck", "tolerance"),
}


def collect_overrides(args: argparse.Namespace) -> dict[str, Any]:
    overrides: dict[str, dict[str, Any]] = {}
    for dest, (section, field) in OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if isinstance(value, tuple):
            value = list(value)
        overrides.setdefault(section, {})[field] = value
    return overrides


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--debug", action="store_true", help="Enable debug logging")
    return common


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int)
    p.add_argument("--length", type=int, help="Fixed vector length T")
    p.add_argument("--anchor", type=int, help="Peak anchor index")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--pretrain-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--imbalance-mode", choices=[m.value for m in ImbalanceMode])
    p.add_argument(
        "--no-merge",
        dest="merge_train_val",
        action="store_const",
        const=False,
        help="Keep the validation set out of the final fit",
    )
    p.add_argument("--kernel-len", type=int)
    p.add_argument("--num-filters", type=int)
    p.add_argument("--hidden-size", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--activation", choices=[a.value for a in Activation])
    p.add_argument("--readout", choices=[r.value for r in Readout])
    p.add_argument("--optimizer", choices=[o.value for o in OptimizerKind])
    p.add_argument("--threads", type=int)
    p.add_argument("--deterministic", action="store_const", const=True)
    p.add_argument(
        "--fractions", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST")
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rfi-classify", description="Transient RFI source classifier"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()

    p = sub.add_parser("synth", parents=[common], help="Generate a synthetic dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--scale", type=float, help="Multiply the default class counts")
    p.add_argument("--counts", type=int, nargs="+", help="Explicit per-class counts")
    p.add_argument("--seed", dest="synth_seed", type=int)

    p = sub.add_parser("split", parents=[common], help="Stratified train/val/test split")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--fractions", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--seed", type=int)

    p = sub.add_parser("preprocess", parents=[common], help="Fit and apply the standardizer")
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--apply", type=Path, nargs="*", default=[])
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--length", type=int)
    p.add_argument("--anchor", type=int)

    p = sub.add_parser("train", parents=[common], help="Run the two-stage experiment")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    _add_model_flags(p)

    p = sub.add_parser("evaluate", parents=[common], help="Metrics on a test set")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--test", type=Path)
    p.add_argument("--standardizer", type=Path)
    p.add_argument(
        "--from-predictions", type=Path, help="CSV with columns true,predicted"
    )
    p.add_argument("--out-dir", type=Path, required=True)

    p = sub.add_parser("gradcheck", parents=[common], help="Finite-difference gradient check")
    p.add_argument("--eps", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", dest="gradcheck_seed", type=int)
    p.add_argument("--mutate", nargs="+", choices=list(MODEL_TENSORS))
    p.add_argument("--tolerance", type=float)

    p = sub.add_parser("filters-dump", parents=[common], help="Write conv filters as CSV")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    sub.add_parser("config-schema", parents=[common], help="Print the config JSON schema")
    return parser


def _synth(app: App, args) -> int:
    counts = app.synth(args.out)
    print(json.dumps({"total": sum(counts), "counts": counts}))
    return 0


def _split(app: App, args) -> int:
    for name, path in app.split(args.dataset, args.out_prefix).items():
        print(f"{name}: {path}")
    return 0


def _preprocess(app: App, args) -> int:
    print(app.preprocess(args.train, args.out_dir, args.apply))
    return 0


def _train(app: App, args) -> int:
    report = app.train(args.dataset, args.out_dir)
    print(f"test accuracy {report.test_accuracy:.4f}")
    return 0


def _evaluate(app: App, args) -> int:
    if args.from_predictions is not None:
        report = app.evaluate_predictions(args.from_predictions, args.out_dir)
    else:
        missing = [
            flag
            for flag, value in (
                ("--checkpoint", args.checkpoint),
                ("--test", args.test),
                ("--standardizer", args.standardizer),
            )
            if value is None
        ]
        if missing:
            raise ConfigError(f"evaluate needs {', '.join(missing)} or --from-predictions")
        report = app.evaluate(args.checkpoint, args.test, args.standardizer, args.out_dir)
    print(report.summary())
    return 0


def _gradcheck(app: App, args) -> int:
    result = app.gradcheck()
    tolerance = app.settings.gradcheck.tolerance
    print(
        f"max relative error {result.max_rel_error:.3e} "
        f"({result.compared} of {result.checked} parameters compared, "
        f"{result.skipped} skipped)"
    )
    return 0 if result.passed(tolerance) else 1


def _filters_dump(app: App, args) -> int:
    print(app.filters_dump(args.checkpoint, args.out))
    return 0


def _config_schema(app: App, args) -> int:
    print(json.dumps(app.config_schema(), indent=2))
    return 0


COMMANDS: dict[str, Callable[[App, argparse.Namespace], int]] = {
    "synth": _synth,
    "split": _split,
    "preprocess": _preprocess,
    "train": _train,
    "evaluate": _evaluate,
    "gradcheck": _gradcheck,
    "filters-dump": _filters_dump,
    "config-schema": _config_schema,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    debug = args.debug if args.debug else bool(os.getenv("DEBUG"))
    setup_logger("DEBUG" if debug else "INFO")
    try:
        app = App.from_config(args.config, collect_overrides(args))
        if not debug:
            setup_logger(app.settings.log_level)
        return COMMANDS[args.command](app, args)
    except RFIError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
