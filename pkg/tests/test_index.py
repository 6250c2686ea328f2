"""Retrieval index and the binary model container."""

import numpy as np
import pytest

from sml import data, encoders, index
from conftest import make_model


def make_vocab(size):
    vocab = data.ItemVocab()
    for i in range(size):
        vocab.add(f"i{i}")
    vocab.counts = [1] * size
    return vocab


class TestItemIndex:
    def test_rows_are_unit_norm(self):
        idx = index.build_index(make_model(vocab=20, dim=8, seed=1))
        norms = np.linalg.norm(idx.vectors, axis=1)
        assert np.allclose(norms, 1.0, atol=1e-5)

    def test_matches_per_item_scoring(self):
        model = make_model(vocab=30, dim=8, seed=4)
        idx = index.ItemIndex.from_model(model)
        prefix = [3, 17, 5]
        query = encoders.encode_session(model, prefix).values
        sims = idx.scores(query)
        for item in range(30):
            assert sims[item] == pytest.approx(
                encoders.score(model, prefix, item), abs=1e-6)

    def test_scores_stay_in_band(self):
        model = make_model(vocab=30, dim=8, seed=4)
        idx = index.ItemIndex.from_model(model)
        query = encoders.encode_session(model, [7]).values
        sims = idx.scores(query)
        assert np.all(sims >= -1.0 - 1e-6) and np.all(sims <= 1.0 + 1e-6)

    def test_topn_agrees_with_exhaustive_sort(self):
        model = make_model(vocab=40, dim=8, seed=9)
        idx = index.ItemIndex.from_model(model)
        query = encoders.encode_session(model, [1, 2]).values
        sims = idx.scores(query)
        want = sorted(range(40), key=lambda i: (-sims[i], i))[:10]
        got = idx.topn(query, 10)
        assert [item for item, _ in got] == want
        for item, score in got:
            assert score == float(sims[item])

    def test_identical_rows_tie_on_ascending_index(self):
        row = np.array([0.6, 0.8], dtype=np.float32)
        vectors = np.stack([row, -row, row, row])
        idx = index.ItemIndex(vectors)
        assert [i for i, _ in idx.topn(row, 4)] == [0, 2, 3, 1]

    def test_exclusion_removes_items(self):
        idx = index.ItemIndex(np.eye(4, dtype=np.float32))
        query = np.array([1, 0, 0, 0], dtype=np.float32)
        got = idx.topn(query, 2, exclude={0})
        assert 0 not in [i for i, _ in got]
        assert len(got) == 2

    def test_excluding_everything_gives_empty_list(self):
        idx = index.ItemIndex(np.eye(3, dtype=np.float32))
        assert idx.topn(np.ones(3, dtype=np.float32), 2, exclude={0, 1, 2}) == []

    def test_query_matching_a_row_ranks_it_first_with_score_one(self):
        model = make_model(vocab=15, dim=8, seed=3)
        idx = index.ItemIndex.from_model(model)
        item, score = idx.topn(idx.vectors[6], 1)[0]
        assert item == 6
        assert score == pytest.approx(1.0, abs=1e-5)

    def test_n_beyond_vocab_returns_everything(self):
        idx = index.ItemIndex(np.eye(3, dtype=np.float32))
        assert len(idx.topn(np.ones(3, dtype=np.float32), 50)) == 3

    def test_single_item_index(self):
        model = make_model(vocab=1, dim=4)
        idx = index.build_index(model)
        assert idx.vectors.shape == (1, 4)
        assert np.array_equal(idx.vectors[0], encoders.encode_item(model, 0).values)

    def test_rejects_bad_query_shape(self):
        idx = index.ItemIndex(np.eye(3, dtype=np.float32))
        with pytest.raises(ValueError):
            idx.scores(np.ones(4, dtype=np.float32))

    def test_rejects_nonpositive_n(self):
        idx = index.ItemIndex(np.eye(3, dtype=np.float32))
        with pytest.raises(ValueError):
            idx.topn(np.ones(3, dtype=np.float32), 0)


class TestSmlRecommender:
    def test_returns_distinct_items(self):
        model = make_model(vocab=25, dim=8)
        rec = index.SmlRecommender.from_model(model)
        out = rec.recommend([1, 2, 3], 10)
        assert len(out) == 10
        assert len(set(out)) == 10

    def test_long_prefix_keeps_most_recent_window(self):
        model = make_model(vocab=25, dim=8, max_session_length=4)
        rec = index.SmlRecommender.from_model(model)
        long = [9, 8, 7, 1, 2, 3, 4]
        assert rec.recommend(long, 5) == rec.recommend([1, 2, 3, 4], 5)

    def test_scored_variant_matches_plain(self):
        model = make_model(vocab=25, dim=8)
        rec = index.SmlRecommender.from_model(model)
        scored = rec.recommend_scored([4, 2], 6)
        assert [i for i, _ in scored] == rec.recommend([4, 2], 6)
        assert all(b[1] <= a[1] + 1e-12 for a, b in zip(scored, scored[1:]))

    def test_empty_prefix_rejected(self):
        model = make_model(vocab=25, dim=8)
        rec = index.SmlRecommender.from_model(model)
        with pytest.raises(ValueError):
            rec.recommend([], 5)


class TestSaveLoad:
    def _model_and_vocab(self, tmp_path, **overrides):
        model = make_model(vocab=12, dim=8, seed=2, **overrides)
        vocab = make_vocab(12)
        path = str(tmp_path / "model.bin")
        index.save_model(model, vocab, path)
        return model, vocab, path

    @pytest.mark.parametrize("kind", ["MaxPool", "AvgPool", "GRU", "TextCNN"])
    def test_round_trip_is_bit_exact(self, tmp_path, kind):
        overrides = {"conv_filter_sizes": (1, 2)} if kind == "TextCNN" else {}
        model, _, path = self._model_and_vocab(tmp_path, kind=kind, **overrides)
        loaded, vocab2 = index.load_model(path)
        assert loaded.config == model.config
        assert vocab2.ids == [f"i{i}" for i in range(12)]
        for name, tensor in model.params.items():
            got = loaded.params[name]
            assert got.values.dtype == np.float32
            assert np.array_equal(got.values, tensor.values)
        before = encoders.encode_session(model, [0, 3, 5]).values
        after = encoders.encode_session(loaded, [0, 3, 5]).values
        assert np.array_equal(before, after)

    def test_save_load_save_is_byte_identical(self, tmp_path):
        model, vocab, path = self._model_and_vocab(tmp_path)
        first = open(path, "rb").read()
        loaded, vocab2 = index.load_model(path)
        assert index.model_to_bytes(loaded, vocab2) == first

    def test_loaded_parameters_keep_training_flags(self, tmp_path):
        _, _, path = self._model_and_vocab(tmp_path)
        loaded, _ = index.load_model(path)
        assert all(t.requires_grad for _, t in loaded.params.items())

    def test_vocab_size_mismatch_rejected(self, tmp_path):
        model = make_model(vocab=12, dim=8)
        with pytest.raises(ValueError):
            index.save_model(model, make_vocab(11), str(tmp_path / "m.bin"))

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(index.ModelFormatError, match="magic"):
            index.load_model(str(path))

    def test_unsupported_version(self, tmp_path):
        _, _, path = self._model_and_vocab(tmp_path)
        blob = bytearray(open(path, "rb").read())
        blob[4:8] = (99).to_bytes(4, "little")
        open(path, "wb").write(bytes(blob))
        with pytest.raises(index.ModelFormatError, match="version"):
            index.load_model(path)

    def test_truncated_file(self, tmp_path):
        _, _, path = self._model_and_vocab(tmp_path)
        blob = open(path, "rb").read()
        open(path, "wb").write(blob[:len(blob) // 2])
        with pytest.raises(index.ModelFormatError, match="truncated"):
            index.load_model(path)

    def test_trailing_garbage(self, tmp_path):
        _, _, path = self._model_and_vocab(tmp_path)
        with open(path, "ab") as handle:
            handle.write(b"\x00")
        with pytest.raises(index.ModelFormatError, match="trailing"):
            index.load_model(path)

    def test_header_corruption(self, tmp_path):
        _, _, path = self._model_and_vocab(tmp_path)
        blob = bytearray(open(path, "rb").read())
        blob[17] ^= 0xFF  # inside the JSON header
        open(path, "wb").write(bytes(blob))
        with pytest.raises(index.ModelFormatError):
            index.load_model(path)

    def test_format_error_is_a_data_error(self):
        assert issubclass(index.ModelFormatError, data.DataError)

    def test_saved_recommender_scores_identically(self, tmp_path):
        model, _, path = self._model_and_vocab(tmp_path)
        loaded, _ = index.load_model(path)
        a = index.SmlRecommender.from_model(model)
        b = index.SmlRecommender.from_model(loaded)
        for prefix in ([0], [5, 2], [1, 1, 4]):
            assert a.recommend_scored(prefix, 12) == b.recommend_scored(prefix, 12)
