import numpy as np
import pytest

from src.dataset import LabeledDataset
from src.synth import synth_dataset
from src.train import TrainConfig

# Published confusion matrices, rows = true class, same class order as DEFAULT_ARCHETYPES
BALANCED_CONFUSION = np.array(
    [
        [44, 0, 2, 0, 2, 0, 2, 2],
        [2, 38, 1, 1, 0, 1, 0, 9],
        [3, 0, 36, 1, 0, 4, 1, 7],
        [2, 0, 0, 49, 0, 1, 0, 0],
        [4, 0, 0, 1, 45, 1, 1, 0],
        [1, 0, 4, 0, 0, 47, 0, 0],
        [1, 0, 0, 1, 1, 1, 48, 0],
        [1, 3, 3, 1, 0, 1, 0, 43],
    ]
)

WEIGHTED_CONFUSION = np.array(
    [
        [120, 1, 7, 0, 2, 0, 0, 2],
        [1, 88, 6, 2, 2, 3, 0, 6],
        [9, 4, 1035, 0, 1, 19, 5, 31],
        [0, 1, 1, 50, 0, 0, 0, 0],
        [43, 4, 9, 2, 3117, 13, 13, 0],
        [2, 9, 166, 0, 18, 6957, 22, 12],
        [1, 0, 11, 0, 4, 3, 716, 0],
        [2, 3, 16, 0, 0, 3, 0, 81],
    ]
)


@pytest.fixture(autouse=True)
def clean_env(monkeypatch, tmp_path):
    """No RFI_* variables or stray .env file leak into settings"""
    import os

    for key in list(os.environ):
        if key.startswith("RFI_") or key == "DEBUG":
            monkeypatch.delenv(key)
    monkeypatch.chdir(tmp_path)


@pytest.fixture
def balanced_confusion():
    return BALANCED_CONFUSION.copy()


@pytest.fixture
def weighted_confusion():
    return WEIGHTED_CONFUSION.copy()


@pytest.fixture(scope="session")
def small_items():
    return synth_dataset([8, 6, 10, 5, 12, 14, 7, 6], seed=1)


@pytest.fixture
def small_dataset(small_items):
    return LabeledDataset.from_items(small_items)


@pytest.fixture
def tiny_config():
    return TrainConfig(
        input_length=200,
        anchor=20,
        kernel_len=20,
        num_filters=4,
        hidden_size=4,
        batch_size=16,
        learning_rate=0.01,
        max_epochs=3,
        patience=2,
        seed=0,
        deterministic=True,
    )
