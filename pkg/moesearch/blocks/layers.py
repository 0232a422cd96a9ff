"""
Block implementations: skip, causal multi-head attention, feed-forward and
mixture-of-experts feed-forward.

All non-skip blocks are pre-layer-norm residual blocks over ``(batch, seq,
model_dim)`` tensors and preserve that shape.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..core import functional as F
from ..core.errors import DimensionError
from ..core.module import Module
from ..core.rng import RngStream
from ..core.tensor import DEFAULT_DTYPE, Tensor, parameter, relu, scatter_rows
from .routing import (
    GateDecision,
    RoutingStats,
    balanced_assignments,
    collapsed_assignments,
    gate_route,
)
from .specs import BlockKind, BlockSpec

logger = logging.getLogger(__name__)

ROUTING_OVERRIDES = ("balanced", "collapsed")


@dataclass
class ForwardContext:
    """Per-call randomness and side outputs shared by all blocks of one forward pass.

    Attributes:
        dropout_rng: Stream for dropout masks; needed only when dropout is active.
        routing_rng: Stream for router jitter.
        router_jitter: Ranking-noise half-width applied by MoE gates in training mode.
        routing_override: ``"balanced"`` or ``"collapsed"`` replaces learned
            routing with a synthetic assignment (used by the profiler).
        routing: Routing statistics appended by every MoE block, in slot order.
    """

    dropout_rng: RngStream | None = None
    routing_rng: RngStream | None = None
    router_jitter: float = 0.0
    routing_override: str | None = None
    routing: list[RoutingStats] = field(default_factory=list)


def _init_weight(rng: RngStream, fan_in: int, shape: tuple[int, ...], dtype) -> np.ndarray:
    return rng.normal(shape, scale=1.0 / math.sqrt(fan_in)).astype(dtype)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=DEFAULT_DTYPE):
        self.weight = parameter(np.ones(dim), dtype=dtype)
        self.bias = parameter(np.zeros(dim), dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.weight, self.bias)


class Block(Module):
    """Common interface: ``block(x, ctx) -> y`` with ``y.shape == x.shape``."""

    spec: BlockSpec

    def forward(self, x: Tensor, ctx: ForwardContext | None = None) -> Tensor:
        raise NotImplementedError


class SkipBlock(Block):
    """The slot contributes nothing; only the residual path remains."""

    def __init__(self):
        self.spec = BlockSpec.skip()

    def forward(self, x: Tensor, ctx: ForwardContext | None = None) -> Tensor:
        return x


class AttentionBlock(Block):
    """x + Wo · causal-softmax(QKᵀ/√d_head) V, with Q, K, V projected from LN(x)."""

    def __init__(
        self,
        spec: BlockSpec,
        model_dim: int,
        rng: RngStream,
        dropout: float = 0.0,
        dtype=DEFAULT_DTYPE,
    ):
        spec.validate_for(model_dim)
        self.spec = spec
        self.heads = spec.heads
        self.head_dim = model_dim // spec.heads
        self.dropout = dropout
        self.norm = LayerNorm(model_dim, dtype)
        self.w_query = parameter(_init_weight(rng, model_dim, (model_dim, model_dim), dtype))
        self.w_key = parameter(_init_weight(rng, model_dim, (model_dim, model_dim), dtype))
        self.w_value = parameter(_init_weight(rng, model_dim, (model_dim, model_dim), dtype))
        self.w_out = parameter(_init_weight(rng, model_dim, (model_dim, model_dim), dtype))

    def _split_heads(self, t: Tensor, batch: int, seq: int) -> Tensor:
        return t.reshape(batch, seq, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor, ctx: ForwardContext | None = None) -> Tensor:
        ctx = ctx or ForwardContext()
        batch, seq, dim = x.shape
        h = self.norm(x)
        q = self._split_heads(h @ self.w_query, batch, seq)
        k = self._split_heads(h @ self.w_key, batch, seq)
        v = self._split_heads(h @ self.w_value, batch, seq)

        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.head_dim))
        attn = F.softmax(F.causal_mask(scores), axis=-1)
        mixed = (attn @ v).transpose(0, 2, 1, 3).reshape(batch, seq, dim)
        out = F.dropout(mixed @ self.w_out, self.dropout, ctx.dropout_rng, self.training)
        return x + out


class FeedForward(Module):
    """W2 · dropout(relu(W1 · h + b1)) + b2 without residual or norm; also an MoE expert."""

    def __init__(
        self,
        model_dim: int,
        inner_dim: int,
        rng: RngStream,
        dropout: float = 0.0,
        dtype=DEFAULT_DTYPE,
    ):
        self.dropout = dropout
        self.w_in = parameter(_init_weight(rng, model_dim, (model_dim, inner_dim), dtype))
        self.b_in = parameter(np.zeros(inner_dim), dtype=dtype)
        self.w_out = parameter(_init_weight(rng, inner_dim, (inner_dim, model_dim), dtype))
        self.b_out = parameter(np.zeros(model_dim), dtype=dtype)

    def forward(self, h: Tensor, ctx: ForwardContext | None = None) -> Tensor:
        rng = ctx.dropout_rng if ctx is not None else None
        hidden = F.dropout(relu(h @ self.w_in + self.b_in), self.dropout, rng, self.training)
        return hidden @ self.w_out + self.b_out


class FeedForwardBlock(Block):
    def __init__(
        self,
        spec: BlockSpec,
        model_dim: int,
        rng: RngStream,
        dropout: float = 0.0,
        dtype=DEFAULT_DTYPE,
    ):
        self.spec = spec
        self.norm = LayerNorm(model_dim, dtype)
        self.ff = FeedForward(model_dim, spec.inner_dim, rng, dropout, dtype)

    def forward(self, x: Tensor, ctx: ForwardContext | None = None) -> Tensor:
        return x + self.ff(self.norm(x), ctx)


class MoEBlock(Block):
    """Mixture of ``E`` feed-forward experts behind a top-k gate.

    Every routed token is processed (no capacity limit); experts run one after
    another on the rows assigned to them.
    """

    def __init__(
        self,
        spec: BlockSpec,
        model_dim: int,
        rng: RngStream,
        dropout: float = 0.0,
        dtype=DEFAULT_DTYPE,
    ):
        self.spec = spec
        self.top_k = spec.top_k
        self.norm = LayerNorm(model_dim, dtype)
        self.gate = parameter(_init_weight(rng, model_dim, (model_dim, spec.experts), dtype))
        self.experts = [
            FeedForward(model_dim, spec.inner_dim, rng, dropout, dtype)
            for _ in range(spec.experts)
        ]

    def route(self, tokens: Tensor, ctx: ForwardContext) -> GateDecision:
        n_tokens, n_experts = tokens.shape[0], len(self.experts)
        override = None
        if ctx.routing_override == "balanced":
            override = balanced_assignments(n_tokens, n_experts, self.top_k)
        elif ctx.routing_override == "collapsed":
            override = collapsed_assignments(n_tokens, n_experts, self.top_k)
        elif ctx.routing_override is not None:
            raise ValueError(
                f"unknown routing override {ctx.routing_override!r}; "
                f"expected one of {ROUTING_OVERRIDES}"
            )
        jitter = ctx.router_jitter if self.training else 0.0
        return gate_route(
            tokens,
            self.gate,
            self.top_k,
            rng=ctx.routing_rng,
            jitter=jitter,
            assignments=override,
        )

    def forward_with_stats(
        self, x: Tensor, ctx: ForwardContext | None = None
    ) -> tuple[Tensor, RoutingStats]:
        ctx = ctx or ForwardContext()
        if x.ndim != 3:
            raise DimensionError(f"MoE block expects (batch, seq, dim) input, got {x.shape}")
        batch, seq, dim = x.shape
        n_tokens = batch * seq
        tokens = self.norm(x).reshape(n_tokens, dim)
        decision = self.route(tokens, ctx)

        mixed: Tensor | None = None
        for expert_id, expert in enumerate(self.experts):
            rows, slots = np.nonzero(decision.assignments == expert_id)
            if rows.size == 0:
                continue
            expert_out = expert(tokens[rows], ctx)
            weight = decision.weights[rows, slots].reshape(rows.size, 1)
            contribution = scatter_rows(expert_out * weight, rows, n_tokens)
            mixed = contribution if mixed is None else mixed + contribution

        if mixed is None:
            return x, decision.stats
        return x + mixed.reshape(batch, seq, dim), decision.stats

    def forward(self, x: Tensor, ctx: ForwardContext | None = None) -> Tensor:
        ctx = ctx or ForwardContext()
        y, stats = self.forward_with_stats(x, ctx)
        ctx.routing.append(stats)
        return y


def build_block(
    spec: BlockSpec,
    model_dim: int,
    rng: RngStream,
    dropout: float = 0.0,
    moe_dropout: float | None = None,
    dtype=DEFAULT_DTYPE,
) -> Block:
    """Instantiate ``spec`` with fresh weights drawn from ``rng``.

    ``moe_dropout`` defaults to ``dropout`` when not given.
    """
    spec.validate_for(model_dim)
    match spec.kind:
        case BlockKind.SKIP:
            return SkipBlock()
        case BlockKind.MHA:
            return AttentionBlock(spec, model_dim, rng, dropout, dtype)
        case BlockKind.FFL:
            return FeedForwardBlock(spec, model_dim, rng, dropout, dtype)
        case BlockKind.MOE:
            rate = dropout if moe_dropout is None else moe_dropout
            return MoEBlock(spec, model_dim, rng, rate, dtype)
    raise AssertionError(f"unhandled block kind {spec.kind}")


class TokenEmbedding(Module):
    """Token plus learned absolute position embeddings."""

    def __init__(
        self,
        vocab_size: int,
        max_seq_len: int,
        model_dim: int,
        rng: RngStream,
        dtype=DEFAULT_DTYPE,
    ):
        self.max_seq_len = max_seq_len
        self.tokens = parameter(rng.normal((vocab_size, model_dim), scale=0.02), dtype=dtype)
        self.positions = parameter(rng.normal((max_seq_len, model_dim), scale=0.02), dtype=dtype)

    def forward(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids)
        if ids.ndim != 2:
            raise DimensionError(f"token ids must be (batch, seq), got shape {ids.shape}")
        seq = ids.shape[1]
        if seq > self.max_seq_len:
            raise DimensionError(f"sequence length {seq} exceeds max_seq_len {self.max_seq_len}")
        return F.embedding(self.tokens, ids) + F.embedding(self.positions, np.arange(seq))


class OutputHead(Module):
    """Final layer norm and vocabulary projection, flattened to (tokens, vocab)."""

    def __init__(self, model_dim: int, vocab_size: int, rng: RngStream, dtype=DEFAULT_DTYPE):
        self.norm = LayerNorm(model_dim, dtype)
        self.weight = parameter(_init_weight(rng, model_dim, (model_dim, vocab_size), dtype))
        self.bias = parameter(np.zeros(vocab_size), dtype=dtype)

    def forward(self, h: Tensor) -> Tensor:
        logits = self.norm(h) @ self.weight + self.bias
        return logits.reshape(-1, logits.shape[-1])
