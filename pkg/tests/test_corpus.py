"""
Tests for corpus splitting, vocabulary handling and window batching.
"""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from moesearch.core.errors import DataError, ParameterError
from moesearch.io.corpus import (
    BatchIterator,
    Corpus,
    bundled_corpus_path,
    load_corpus,
    synthetic_text,
)


class TestCorpus:
    def test_splits_are_ordered_and_disjoint(self):
        corpus = Corpus.from_text("abcdefghij" * 10)
        assert corpus.splits == {"train": (0, 80), "valid": (80, 90), "test": (90, 100)}
        joined = "".join(corpus.split_text(s) for s in ("train", "valid", "test"))
        assert joined == corpus.text

    @given(st.text(alphabet="abc xyz\n.,", min_size=1, max_size=200))
    def test_any_text_splits_and_round_trips(self, text):
        corpus = Corpus.from_text(text)
        assert corpus.decode(corpus.encode(text)) == text
        joined = "".join(corpus.split_text(s) for s in ("train", "valid", "test"))
        assert joined == text

    def test_vocab_is_sorted(self):
        corpus = Corpus.from_text("cab ba")
        assert corpus.symbols == [" ", "a", "b", "c"]
        assert corpus.decode(corpus.encode("cab")) == "cab"

    def test_unknown_symbol(self):
        corpus = Corpus.from_text("aabb")
        with pytest.raises(DataError, match="'z'"):
            corpus.encode("az")
        with pytest.raises(DataError):
            Corpus.from_text("abz", vocab={"a": 0, "b": 1})
        with pytest.raises(DataError, match="out of range"):
            corpus.decode([5])

    @pytest.mark.parametrize("ratios", [(0.5, 0.5), (0.8, 0.3, -0.1), (0.5, 0.2, 0.2)])
    def test_bad_ratios(self, ratios):
        with pytest.raises(ParameterError, match="split ratios"):
            Corpus.from_text("abc", ratios)

    def test_empty_and_unknown_split(self):
        with pytest.raises(DataError, match="empty"):
            Corpus.from_text("")
        with pytest.raises(DataError, match="unknown split"):
            Corpus.from_text("abc").split_text("dev")

    def test_vocab_file_round_trip(self, tmp_path):
        corpus = Corpus.from_text("hello world")
        path = corpus.save_vocab(tmp_path / "vocab.json")
        assert Corpus.load_vocab(path) == corpus.vocab

    def test_load_corpus(self, tmp_path):
        path = tmp_path / "text.txt"
        path.write_text("some text " * 20, encoding="utf-8")
        assert load_corpus(path).vocab_size == len(set("some text "))
        with pytest.raises(FileNotFoundError):
            load_corpus(tmp_path / "absent.txt")
        (tmp_path / "empty.txt").write_text("")
        with pytest.raises(DataError, match="empty"):
            load_corpus(tmp_path / "empty.txt")

    def test_bundled_corpus(self):
        assert bundled_corpus_path().exists()
        corpus = load_corpus()
        assert len(corpus.split_text("train")) > len(corpus.split_text("valid")) > 0

    def test_synthetic_text_is_deterministic(self):
        assert synthetic_text(500, seed=1) == synthetic_text(500, seed=1)
        assert synthetic_text(500, seed=1) != synthetic_text(500, seed=2)
        assert len(synthetic_text(123)) == 123


class TestBatchIterator:
    def test_window_and_batch_counts(self):
        batches = BatchIterator(np.arange(101), batch_size=3, seq_len=10)
        assert batches.n_windows == 10
        assert len(batches) == 3
        assert batches.tokens_covered == 90

    def test_targets_are_inputs_shifted_by_one(self):
        batches = BatchIterator(np.arange(50), batch_size=2, seq_len=6, shuffle=False)
        inputs, targets = batches.epoch_batches(0)[0]
        assert inputs.shape == targets.shape == (2, 6)
        np.testing.assert_array_equal(inputs[0], np.arange(6))
        np.testing.assert_array_equal(targets[0], np.arange(1, 7))
        np.testing.assert_array_equal(inputs[1], np.arange(6, 12))

    def test_epoch_covers_distinct_windows(self):
        batches = BatchIterator(np.arange(81), batch_size=2, seq_len=8, seed=3)
        starts = [int(x[0]) for inputs, _ in batches.epoch_batches(1) for x in inputs]
        assert len(set(starts)) == len(starts) == 10
        assert all(s % 8 == 0 for s in starts)

    def test_shuffle_depends_on_epoch_and_seed(self):
        batches = BatchIterator(np.arange(401), batch_size=5, seq_len=8, seed=0)
        order0 = batches.window_order(0)
        assert not np.array_equal(order0, batches.window_order(1))
        np.testing.assert_array_equal(order0, batches.window_order(0))
        other = BatchIterator(np.arange(401), batch_size=5, seq_len=8, seed=1)
        assert not np.array_equal(order0, other.window_order(0))

    def test_unshuffled_order(self):
        batches = BatchIterator(np.arange(41), batch_size=2, seq_len=4, shuffle=False)
        np.testing.assert_array_equal(batches.window_order(7), np.arange(10))
        assert len(list(batches)) == 5

    def test_too_few_tokens(self):
        with pytest.raises(DataError, match="at least 18"):
            BatchIterator(np.arange(17), batch_size=2, seq_len=8)
        assert len(BatchIterator(np.arange(18), batch_size=2, seq_len=8)) == 1

    def test_positive_sizes(self):
        with pytest.raises(ParameterError):
            BatchIterator(np.arange(100), batch_size=0, seq_len=8)
