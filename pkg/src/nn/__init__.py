from src.nn.model import (
    Architecture,
    ModelParams,
    Network,
    classifier,
    init_params,
    pretrainer,
)

__all__ = [
    "Architecture",
    "ModelParams",
    "Network",
    "classifier",
    "init_params",
    "pretrainer",
]
