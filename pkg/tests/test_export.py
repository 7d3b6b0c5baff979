import json

import numpy as np
import pytest

from src.errors import DataError, InputError
from src.export import (
    ArtifactWriter,
    file_digest,
    read_filters_csv,
    read_jsonl,
    read_predictions_csv,
    write_confusion_csv,
    write_filters_csv,
    write_jsonl,
)
from src.metrics import ConfusionMatrix
from src.synth import Transient, class_names


class TestJsonLines:
    """Tests for the JSON Lines dataset format"""

    def test_record_layout(self, tmp_path):
        path = tmp_path / "data.jsonl"
        counts = write_jsonl([Transient(np.array([0.5, -1.0]), label=3, item_id=7)], path)
        assert counts == [1]
        record = json.loads(path.read_text().splitlines()[0])
        assert record == {"id": 7, "class": 3, "samples": [0.5, -1.0]}

    def test_values_survive_exactly(self, tmp_path, small_items):
        path = tmp_path / "data.jsonl"
        write_jsonl(small_items[:5], path)
        loaded = read_jsonl(path)
        assert [t.item_id for t in loaded] == [t.item_id for t in small_items[:5]]
        assert all(np.array_equal(a.samples, b.samples) for a, b in zip(loaded, small_items))

    def test_missing_id_falls_back_to_line_index(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text('{"class": 1, "samples": [1.0]}\n{"class": 2, "samples": [2.0]}\n')
        assert [t.item_id for t in read_jsonl(path)] == [0, 1]

    def test_byte_identical_rewrites(self, tmp_path, small_items):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_jsonl(small_items, a)
        write_jsonl(small_items, b)
        assert file_digest(a) == file_digest(b)

    def test_malformed_and_missing(self, tmp_path):
        with pytest.raises(DataError):
            read_jsonl(tmp_path / "nope.jsonl")
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"class": 1}\n')
        with pytest.raises(DataError, match=":1:"):
            read_jsonl(bad)

    def test_invalid_utf8_line(self, tmp_path):
        bad = tmp_path / "binary.jsonl"
        bad.write_bytes(b'{"class": 1, "samples": [1.0]}\n\xff\xfe\n')
        with pytest.raises(DataError, match=":2: not valid UTF-8"):
            read_jsonl(bad)

    def test_rejects_non_finite_samples(self, tmp_path):
        with pytest.raises(DataError):
            write_jsonl([Transient(np.array([np.nan]), label=1)], tmp_path / "x.jsonl")


class TestCsv:
    """Tests for the CSV outputs"""

    def test_confusion_csv_header(self, tmp_path, balanced_confusion):
        path = tmp_path / "confusion.csv"
        write_confusion_csv(ConfusionMatrix(counts=balanced_confusion), class_names(), path)
        lines = path.read_text().splitlines()
        assert lines[0].split(",")[1:4] == ["CFL", "power tool", "transformer"]
        assert lines[1] == "CFL,44,0,2,0,2,0,2,2"

    def test_filters_round_trip(self, tmp_path):
        filters = np.random.default_rng(0).normal(size=(4, 6)) * 1e-3
        path = write_filters_csv(filters, tmp_path / "filters.csv")
        loaded = read_filters_csv(path)
        assert loaded.shape == (4, 6)
        np.testing.assert_allclose(loaded, filters, rtol=0, atol=1e-15)

    def test_predictions_csv(self, tmp_path):
        path = tmp_path / "pred.csv"
        path.write_text("true,predicted\n1,2\n3,3\n")
        true, predicted = read_predictions_csv(path)
        assert true.tolist() == [1, 3]
        assert predicted.tolist() == [2, 3]

    def test_predictions_csv_errors(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("true,predicted\n")
        with pytest.raises(DataError):
            read_predictions_csv(empty)
        wrong = tmp_path / "wrong.csv"
        wrong.write_text("a,b\n1,2\n")
        with pytest.raises(InputError):
            read_predictions_csv(wrong)
        with pytest.raises(DataError):
            read_predictions_csv(tmp_path / "missing.csv")

    @pytest.mark.parametrize("row", ["1,\n", "1.5,2\n", "x,2\n"])
    def test_predictions_csv_rejects_non_integer_labels(self, tmp_path, row):
        path = tmp_path / "pred.csv"
        path.write_text("true,predicted\n2,2\n" + row)
        with pytest.raises(InputError, match="row 2"):
            read_predictions_csv(path)


def test_artifact_writer_tracks_paths(tmp_path):
    writer = ArtifactWriter(tmp_path / "run")
    writer.json("report", "report.json", {"a": 1})
    assert writer.artifacts == {"report": str(tmp_path / "run" / "report.json")}
    assert json.loads((tmp_path / "run" / "report.json").read_text()) == {"a": 1}
