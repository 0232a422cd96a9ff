"""
Seeded random streams.

All randomness in a run funnels through one integer seed. Each concern
(initialization, data order, Gumbel noise, dropout, ...) draws from its own
stream so that, for example, changing the dropout rate never perturbs the
Gumbel noise sequence. Streams are numpy ``PCG64`` generators keyed by
``SeedSequence(seed, spawn_key=(stream_id, *sub_keys))``.
"""

from enum import IntEnum
from typing import Any

import numpy as np

_SEED_MASK = (1 << 64) - 1


class StreamId(IntEnum):
    INIT = 0
    DATA = 1
    GUMBEL = 2
    DROPOUT = 3
    SUBSET = 4
    ROUTING = 5
    PROFILE = 6


class RngStream:
    """One deterministic random stream.

    Identical ``(seed, stream_id, sub_keys)`` and draw index always produce
    identical values.
    """

    def __init__(self, seed: int, stream_id: int = StreamId.INIT, sub_keys: tuple[int, ...] = ()):
        self.seed = int(seed) & _SEED_MASK
        self.stream_id = int(stream_id)
        self.sub_keys = tuple(int(k) for k in sub_keys)
        sequence = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(self.stream_id, *self.sub_keys)
        )
        self._generator = np.random.Generator(np.random.PCG64(sequence))

    def derive(self, *sub_keys: int) -> "RngStream":
        """Independent child stream, e.g. one per epoch."""
        return RngStream(self.seed, self.stream_id, self.sub_keys + tuple(sub_keys))

    # Draws -------------------------------------------------------------

    def uniform(self, shape: int | tuple[int, ...] = ()) -> np.ndarray:
        """Uniform samples on [0, 1)."""
        return self._generator.random(shape)

    def normal(self, shape: int | tuple[int, ...] = (), scale: float = 1.0) -> np.ndarray:
        return self._generator.normal(0.0, scale, shape)

    def integers(
        self, low: int, high: int, size: int | tuple[int, ...] | None = None
    ) -> np.ndarray:
        return self._generator.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._generator.choice(n, size=size, replace=replace)

    # State -------------------------------------------------------------

    def get_state(self) -> dict[str, Any]:
        return self._generator.bit_generator.state

    def set_state(self, state: dict[str, Any]) -> None:
        self._generator.bit_generator.state = state

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, sub_keys={self.sub_keys})"


class RngStreams:
    """The per-concern streams derived from a single run seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.init = RngStream(seed, StreamId.INIT)
        self.data = RngStream(seed, StreamId.DATA)
        self.gumbel = RngStream(seed, StreamId.GUMBEL)
        self.dropout = RngStream(seed, StreamId.DROPOUT)
        self.subset = RngStream(seed, StreamId.SUBSET)
        self.routing = RngStream(seed, StreamId.ROUTING)
        self.profile = RngStream(seed, StreamId.PROFILE)

    def _streams(self) -> dict[str, RngStream]:
        return {
            "init": self.init,
            "data": self.data,
            "gumbel": self.gumbel,
            "dropout": self.dropout,
            "subset": self.subset,
            "routing": self.routing,
            "profile": self.profile,
        }

    def get_state(self) -> dict[str, Any]:
        return {name: stream.get_state() for name, stream in self._streams().items()}

    def set_state(self, state: dict[str, Any]) -> None:
        streams = self._streams()
        for name, stream_state in state.items():
            if name in streams:
                streams[name].set_state(stream_state)
