"""File formats: corpus and batching, metrics CSVs, checkpoints, atomic writes."""

from .atomic import atomic_open, atomic_write
from .checkpoint import SearchCheckpoint, load_weights, save_weights
from .corpus import BatchIterator, Corpus, bundled_corpus_path, load_corpus, synthetic_text
from .metrics import MetricsLog, read_frame, write_frame

__all__ = [
    "BatchIterator",
    "Corpus",
    "MetricsLog",
    "SearchCheckpoint",
    "atomic_open",
    "atomic_write",
    "bundled_corpus_path",
    "load_corpus",
    "load_weights",
    "read_frame",
    "save_weights",
    "synthetic_text",
    "write_frame",
]
