"""
Fixed-architecture decoder-only language model: embeddings, one block per slot, output head.
"""

import logging
from collections.abc import Sequence

import numpy as np

from ..core.module import Module
from ..core.rng import RngStream
from ..core.tensor import DEFAULT_DTYPE, Tensor
from .layers import Block, ForwardContext, OutputHead, TokenEmbedding, build_block
from .specs import BlockSpec, as_spec

logger = logging.getLogger(__name__)


class FinalNetwork(Module):
    """A network whose every slot holds exactly one block."""

    def __init__(
        self,
        slots: Sequence[BlockSpec | str],
        vocab_size: int,
        max_seq_len: int,
        model_dim: int,
        rng: RngStream,
        dropout: float = 0.0,
        moe_dropout: float | None = None,
        dtype=DEFAULT_DTYPE,
    ):
        self.specs = [as_spec(s) for s in slots]
        self.model_dim = model_dim
        self.vocab_size = vocab_size
        self.max_seq_len = max_seq_len
        self.embedding = TokenEmbedding(vocab_size, max_seq_len, model_dim, rng.derive(0), dtype)
        self.blocks: list[Block] = [
            build_block(spec, model_dim, rng.derive(1, i, 0), dropout, moe_dropout, dtype)
            for i, spec in enumerate(self.specs)
        ]
        self.head = OutputHead(model_dim, vocab_size, rng.derive(2), dtype)

    @property
    def keys(self) -> list[str]:
        return [s.key for s in self.specs]

    @property
    def has_moe(self) -> bool:
        return any(s.is_moe for s in self.specs)

    def forward(self, ids: np.ndarray, ctx: ForwardContext | None = None) -> Tensor:
        """Logits of shape ``(batch * seq, vocab)``; MoE routing stats land in ``ctx.routing``."""
        ctx = ctx if ctx is not None else ForwardContext()
        h = self.embedding(ids)
        for block in self.blocks:
            h = block(h, ctx)
        return self.head(h)


def build_final_network(
    slots: Sequence[BlockSpec | str],
    vocab_size: int,
    max_seq_len: int,
    model_dim: int,
    seed: int | RngStream,
    **kwargs,
) -> FinalNetwork:
    rng = seed if isinstance(seed, RngStream) else RngStream(seed)
    net = FinalNetwork(slots, vocab_size, max_seq_len, model_dim, rng, **kwargs)
    logger.debug(
        f"Built network {'/'.join(net.keys)} with {net.num_parameters()} parameters"
    )
    return net
