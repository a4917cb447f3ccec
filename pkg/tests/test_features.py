import json

import numpy as np
import pytest

from compsearch.features import (
    ClassEmbeddingTable,
    TableError,
    embed_class,
    load_embedding_table,
    save_embedding_table,
    synthetic_table,
)


class TestEmbedClass:
    def test_deterministic(self):
        a = embed_class("dog", 256, seed=7)
        b = embed_class("dog", 256, seed=7)
        assert (a == b).all()

    def test_unit_norm(self):
        for label in ("dog", "cat", "x" * 100, "émoji"):
            v = embed_class(label, 64, seed=3)
            assert abs(np.linalg.norm(v.astype(np.float64)) - 1.0) < 1e-6

    def test_varies_with_label_and_seed(self):
        assert not (embed_class("dog", 32, 0) == embed_class("cat", 32, 0)).all()
        assert not (embed_class("dog", 32, 0) == embed_class("dog", 32, 1)).all()

    def test_many_labels_near_orthogonal(self):
        # brute-force pairwise cosine scan over 10k distinct labels
        labels = [f"label-{i}" for i in range(10_000)]
        mat = np.stack([embed_class(l, 256, seed=7) for l in labels])
        gram = mat @ mat.T
        np.fill_diagonal(gram, 0.0)
        assert float(np.abs(gram).max()) < 0.5


class TestTable:
    def test_round_trip_bit_exact(self, tmp_path):
        table = synthetic_table(["dog", "cat", "car"], dim=32, seed=5)
        path = tmp_path / "table.json"
        save_embedding_table(table, path)
        loaded = load_embedding_table(path)
        assert loaded.dim == table.dim
        assert loaded.labels() == table.labels()
        for label in table.labels():
            assert (loaded[label] == table[label]).all()
        assert loaded.provenance == "loaded"

    def test_dimension_mismatch(self, tmp_path):
        path = tmp_path / "table.json"
        v256 = [float(x) for x in embed_class("a", 256)]
        v128 = [float(x) for x in embed_class("b", 128)]
        path.write_text(json.dumps({"dim": 256, "classes": {"a": v256, "b": v128}}))
        with pytest.raises(TableError, match="dimension"):
            load_embedding_table(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "table.json"
        path.write_text("")
        with pytest.raises(TableError, match="no classes"):
            load_embedding_table(path)

    def test_no_classes(self, tmp_path):
        path = tmp_path / "table.json"
        path.write_text(json.dumps({"dim": 4, "classes": {}}))
        with pytest.raises(TableError, match="no classes"):
            load_embedding_table(path)

    def test_duplicate_label(self, tmp_path):
        path = tmp_path / "table.json"
        v = json.dumps([float(x) for x in embed_class("a", 8)])
        path.write_text('{"dim": 8, "classes": {"a": %s, "a": %s}}' % (v, v))
        with pytest.raises(TableError, match="duplicate label"):
            load_embedding_table(path)

    def test_non_unit_vector_rejected(self, tmp_path):
        path = tmp_path / "table.json"
        path.write_text(json.dumps({"dim": 3, "classes": {"a": [1.0, 1.0, 1.0]}}))
        with pytest.raises(TableError, match="unit norm"):
            load_embedding_table(path)

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "table.json"
        path.write_text("{nope")
        with pytest.raises(TableError, match="malformed"):
            load_embedding_table(path)

    def test_table_shape_validation(self):
        with pytest.raises(TableError, match="dimension"):
            ClassEmbeddingTable(4, {"a": np.zeros(3, dtype=np.float32)})

    def test_matrix_lookup_missing_class(self):
        table = synthetic_table(["dog"], dim=8)
        with pytest.raises(KeyError, match="not in embedding table"):
            table.matrix(["dog", "zebra"])
