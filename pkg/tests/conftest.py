"""
Pytest configuration file for moesearch tests.
"""

import numpy as np
import pytest

from moesearch.blocks.specs import BlockKind, parse_block_key
from moesearch.config.settings import RunConfig
from moesearch.core.rng import RngStream
from moesearch.io.corpus import BatchIterator, Corpus, synthetic_text
from moesearch.search.latency import LatencyEntry, LatencyTable, ProfilingContext
from moesearch.search.supernet import BackboneSpec, SearchSpace

MODEL_DIM = 8
TINY_MENU = ["skip", "mha:h=1", "mha:h=2", "ffl:d=16", "moe:d=16:e=2:k=1"]


def fake_latency_us(key: str, model_dim: int = MODEL_DIM) -> float:
    """Deterministic stand-in for a profiled latency: grows with size and head count."""
    spec = parse_block_key(key)
    if spec.is_skip:
        return 1.0
    base = spec.parameter_count(model_dim) / 10.0
    if spec.kind == BlockKind.MHA:
        base += 5.0 * spec.heads
    if spec.is_moe:
        base = base * spec.top_k / spec.experts + 2.0
    return float(base)


def make_table(keys, model_dim: int = MODEL_DIM, **context) -> LatencyTable:
    ctx = ProfilingContext(
        batch_size=context.get("batch_size", 2),
        seq_len=context.get("seq_len", 8),
        model_dim=model_dim,
    )
    entries = {
        k: LatencyEntry(fake_latency_us(k, model_dim), reps=10, warmup=3, iqr_us=0.1)
        for k in dict.fromkeys(keys)
    }
    return LatencyTable(ctx, entries)


def write_tiny_corpus(path, n_chars: int = 2400):
    path.write_text(synthetic_text(n_chars, seed=3), encoding="utf-8")
    return path


def tiny_settings(output_dir, corpus_path=None) -> dict:
    """A run small enough for the CLI and pipeline tests to finish in seconds."""
    return {
        "run": {"seed": 0, "output_dir": str(output_dir), "progress_bar": False},
        "corpus": {
            "path": None if corpus_path is None else str(corpus_path),
            "batch_size": 4,
            "seq_len": 8,
        },
        "model": {"model_dim": MODEL_DIM, "n_layers": 1, "heads": 2, "inner_dim": 16},
        "search_space": {"menu": list(TINY_MENU)},
        "profiling": {"batch_size": 2, "seq_len": 8, "repetitions": 10, "warmup": 3},
        "phase1": {"epochs": 2, "arch_warmup_fraction": 0.0, "arch_data_fraction": 0.5},
        "phase2": {"epochs": 1},
        "target_ratio": 0.9,
        "report": {"sweep_targets": [0.6, 0.9], "measure_repetitions": 3},
    }


@pytest.fixture
def fake_profiler(mocker):
    """Replace block timing with ``fake_latency_us``; returns the mock for call counting."""

    def fake(spec, context, repetitions=50, warmup=5, rng=None, routing="balanced"):
        key = spec if isinstance(spec, str) else spec.key
        return LatencyEntry(fake_latency_us(key, context.model_dim), repetitions, warmup, 0.1)

    return mocker.patch("moesearch.search.latency.profile_block", side_effect=fake)


@pytest.fixture
def rng():
    return RngStream(1234)


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_backbone():
    return BackboneSpec.interleaved(MODEL_DIM, n_layers=1, heads=2, inner_dim=16)


@pytest.fixture
def tiny_space(tiny_backbone):
    return SearchSpace.uniform(TINY_MENU, len(tiny_backbone))


@pytest.fixture
def tiny_table(tiny_space, tiny_backbone):
    return make_table(tiny_space.keys() + tiny_backbone.keys)


@pytest.fixture(scope="session")
def tiny_corpus():
    return Corpus.from_text(synthetic_text(2000, seed=0))


@pytest.fixture
def tiny_batches(tiny_corpus):
    return BatchIterator(tiny_corpus.split_ids("train"), batch_size=4, seq_len=8, seed=0)


@pytest.fixture
def tiny_corpus_file(tmp_path):
    return write_tiny_corpus(tmp_path / "corpus.txt")


@pytest.fixture
def tiny_config(tmp_path, tiny_corpus_file):
    return RunConfig(tiny_settings(tmp_path / "run", tiny_corpus_file))
