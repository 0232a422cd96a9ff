"""
Character-level corpus ingestion and contiguous-window batching.
"""

import json
import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..core.errors import DataError, ParameterError
from ..core.rng import RngStream, StreamId
from .atomic import atomic_write

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
DEFAULT_RATIOS = (0.8, 0.1, 0.1)
BUNDLED_CORPUS = "tiny_corpus.txt"


def bundled_corpus_path() -> Path:
    """Path of the small public-domain text shipped with the package."""
    return Path(str(resources.files("moesearch.resources").joinpath(BUNDLED_CORPUS)))


def synthetic_text(n_chars: int, seed: int = 0) -> str:
    """Deterministic pseudo-English text with learnable local structure.

    Words are drawn from a fixed lexicon with a first-order transition table,
    so a small model can reduce its loss well below the unigram entropy.
    """
    lexicon = [
        "the", "cat", "sat", "on", "a", "mat", "and", "dog", "ran", "to",
        "red", "big", "box", "in", "sun", "we", "saw", "it", "was", "hot",
    ]
    rng = RngStream(seed, StreamId.DATA, (7,))
    transitions = rng.uniform((len(lexicon), len(lexicon))) ** 4
    transitions /= transitions.sum(axis=1, keepdims=True)
    cumulative = np.cumsum(transitions, axis=1)
    words: list[str] = []
    length = 0
    current = 0
    while length < n_chars:
        word = lexicon[current]
        words.append(word)
        length += len(word) + 1
        step = np.searchsorted(cumulative[current], rng.uniform(), side="right")
        current = min(int(step), len(lexicon) - 1)
    text = " ".join(words)
    return (text + " " * n_chars)[:n_chars]


@dataclass
class Corpus:
    """Text with a sorted character vocabulary and ordered, disjoint splits."""

    text: str
    vocab: dict[str, int]
    splits: dict[str, tuple[int, int]] = field(default_factory=dict)

    @classmethod
    def from_text(
        cls,
        text: str,
        ratios: Sequence[float] = DEFAULT_RATIOS,
        vocab: dict[str, int] | None = None,
    ) -> "Corpus":
        if not text:
            raise DataError("corpus is empty")
        if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
            raise ParameterError(
                f"split ratios must be three nonnegative values summing to 1, got {ratios}"
            )
        if vocab is None:
            vocab = {ch: i for i, ch in enumerate(sorted(set(text)))}
        n = len(text)
        train_end = int(round(n * ratios[0]))
        valid_end = int(round(n * (ratios[0] + ratios[1])))
        splits = {
            "train": (0, train_end),
            "valid": (train_end, valid_end),
            "test": (valid_end, n),
        }
        corpus = cls(text, vocab, splits)
        corpus.encode(text)  # reject symbols missing from an explicit vocab
        return corpus

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def symbols(self) -> list[str]:
        return sorted(self.vocab, key=self.vocab.__getitem__)

    def encode(self, text: str) -> np.ndarray:
        try:
            return np.fromiter((self.vocab[ch] for ch in text), dtype=np.int64, count=len(text))
        except KeyError as e:
            raise DataError(f"unknown symbol {e.args[0]!r} not in vocabulary") from None

    def decode(self, ids: Sequence[int] | np.ndarray) -> str:
        symbols = self.symbols
        try:
            return "".join(symbols[int(i)] for i in np.asarray(ids).reshape(-1))
        except IndexError:
            raise DataError(f"token id out of range [0, {self.vocab_size})") from None

    def split_text(self, name: str) -> str:
        if name not in self.splits:
            raise DataError(f"unknown split '{name}'; expected one of {SPLITS}")
        start, end = self.splits[name]
        return self.text[start:end]

    def split_ids(self, name: str) -> np.ndarray:
        return self.encode(self.split_text(name))

    # Vocabulary persistence -------------------------------------------

    def save_vocab(self, path: str | Path) -> Path:
        payload = json.dumps({"symbols": self.symbols}, ensure_ascii=False, indent=2)
        return atomic_write(path, payload)

    @staticmethod
    def load_vocab(path: str | Path) -> dict[str, int]:
        with open(path, encoding="utf-8") as f:
            symbols = json.load(f)["symbols"]
        return {ch: i for i, ch in enumerate(symbols)}


def load_corpus(
    path: str | Path | None = None,
    ratios: Sequence[float] = DEFAULT_RATIOS,
    vocab: dict[str, int] | None = None,
) -> Corpus:
    """Read a UTF-8 text file (the bundled corpus when ``path`` is None).

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        DataError: If the file is empty.
    """
    path = Path(path) if path is not None else bundled_corpus_path()
    if not path.exists():
        raise FileNotFoundError(f"Corpus file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if not text:
        raise DataError(f"corpus file is empty: {path}")
    corpus = Corpus.from_text(text, ratios, vocab)
    logger.info(
        f"Loaded corpus {path.name}: {len(text):,} chars, vocab {corpus.vocab_size}, "
        + ", ".join(f"{k}={e - s:,}" for k, (s, e) in corpus.splits.items())
    )
    return corpus


class BatchIterator:
    """Contiguous non-overlapping windows of ``seq_len`` tokens, grouped into batches.

    Window ``w`` covers ``tokens[w*seq_len : w*seq_len + seq_len + 1]``: the
    first ``seq_len`` entries are the input and the last ``seq_len`` the
    targets. Leftover windows that do not fill a batch are dropped, so each
    epoch covers ``len(self) * batch_size * seq_len`` target tokens.
    """

    def __init__(
        self,
        tokens: np.ndarray,
        batch_size: int,
        seq_len: int,
        seed: int = 0,
        shuffle: bool = True,
    ):
        if batch_size < 1 or seq_len < 1:
            raise ParameterError(
                f"batch_size and seq_len must be positive, got {batch_size}/{seq_len}"
            )
        self.tokens = np.asarray(tokens, dtype=np.int64)
        self.batch_size = batch_size
        self.seq_len = seq_len
        self.seed = seed
        self.shuffle = shuffle
        required = batch_size * (seq_len + 1)
        if len(self.tokens) < required:
            raise DataError(
                f"split has {len(self.tokens)} tokens but batch_size={batch_size} and "
                f"seq_len={seq_len} need at least {required}"
            )
        self.n_windows = (len(self.tokens) - 1) // seq_len
        self.n_batches = self.n_windows // batch_size

    def __len__(self) -> int:
        return self.n_batches

    @property
    def tokens_covered(self) -> int:
        return self.n_batches * self.batch_size * self.seq_len

    def window(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        start = index * self.seq_len
        chunk = self.tokens[start : start + self.seq_len + 1]
        return chunk[:-1], chunk[1:]

    def window_order(self, epoch: int = 0) -> np.ndarray:
        if not self.shuffle:
            return np.arange(self.n_windows)
        return RngStream(self.seed, StreamId.DATA, (epoch,)).permutation(self.n_windows)

    def epoch_batches(self, epoch: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
        """The epoch's batches as ``(inputs, targets)`` arrays of shape ``(batch, seq_len)``."""
        order = self.window_order(epoch)
        batches = []
        for b in range(self.n_batches):
            picked = order[b * self.batch_size : (b + 1) * self.batch_size]
            pairs = [self.window(int(w)) for w in picked]
            batches.append(
                (np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs]))
            )
        return batches

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        return iter(self.epoch_batches(0))
