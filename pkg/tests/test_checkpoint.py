import json

import numpy as np
import pytest

from src.errors import DataError, ShapeError
from src.nn.checkpoint import Checkpoint, from_dict, load_checkpoint, save_checkpoint, to_dict
from src.nn.model import Architecture, init_params


@pytest.fixture
def checkpoint():
    arch = Architecture(input_length=80, num_filters=4, kernel_len=10, stride=10, hidden_size=2)
    return Checkpoint(params=init_params(arch, 11), anchor=15)


class TestCheckpoint:
    """Tests for JSON checkpoints"""

    def test_round_trip_is_bit_identical(self, checkpoint, tmp_path):
        path = save_checkpoint(checkpoint, tmp_path / "checkpoint.json")
        loaded = load_checkpoint(path)
        assert loaded.architecture == checkpoint.architecture
        assert loaded.anchor == 15
        for name, tensor in checkpoint.params.tensors.items():
            assert np.array_equal(loaded.params.tensors[name], tensor)

    def test_layout(self, checkpoint):
        payload = to_dict(checkpoint)
        assert payload["format_version"] == 1
        assert payload["preprocessing"] == {"T": 80, "anchor": 15}
        entry = payload["tensors"]["conv_filters"]
        assert entry["shape"] == [4, 10]
        assert len(entry["values"]) == 40
        assert entry["values"][:10] == checkpoint.params.conv_filters[0].tolist()

    def test_unknown_version(self, checkpoint):
        payload = to_dict(checkpoint)
        payload["format_version"] = 99
        with pytest.raises(DataError):
            from_dict(payload)

    def test_wrong_tensor_shape(self, checkpoint):
        payload = to_dict(checkpoint)
        payload["tensors"]["conv_bias"] = {"shape": [3], "values": [0.0, 0.0, 0.0]}
        with pytest.raises(ShapeError):
            from_dict(payload)

    def test_missing_and_malformed_files(self, tmp_path):
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(DataError):
            load_checkpoint(bad)
        partial = tmp_path / "partial.json"
        partial.write_text(json.dumps({"format_version": 1}))
        with pytest.raises(DataError):
            load_checkpoint(partial)
