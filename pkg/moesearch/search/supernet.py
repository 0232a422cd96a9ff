"""
Search network: the backbone with every slot replaced by a super block.

A super block holds one independently initialized block per option plus a
vector of architecture weights ``alpha``. Its output is the probability-weighted
sum of the option outputs, with probabilities drawn by Gumbel-softmax over
``alpha``. In hard mode only the sampled option is evaluated.
"""

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np

from ..blocks.layers import Block, ForwardContext, OutputHead, TokenEmbedding, build_block
from ..blocks.specs import BlockSpec, as_spec
from ..core import functional as F
from ..core.errors import ParameterError, SpecError
from ..core.module import Module
from ..core.rng import RngStream
from ..core.tensor import DEFAULT_DTYPE, Tensor, parameter

logger = logging.getLogger(__name__)

SamplingMode = Literal["soft", "hard"]


@dataclass(frozen=True)
class BackboneSpec:
    """Baseline network: model width and one baseline block per slot."""

    model_dim: int
    slots: tuple[BlockSpec, ...]

    def __post_init__(self) -> None:
        slots = tuple(as_spec(s) for s in self.slots)
        object.__setattr__(self, "slots", slots)
        if not slots:
            raise SpecError("backbone needs at least one slot")
        for spec in slots:
            spec.validate_for(self.model_dim)

    @classmethod
    def interleaved(
        cls, model_dim: int, n_layers: int, heads: int, inner_dim: int
    ) -> "BackboneSpec":
        """``n_layers`` pairs of attention followed by feed-forward."""
        pair = (BlockSpec.mha(heads), BlockSpec.ffl(inner_dim))
        return cls(model_dim, pair * n_layers)

    @property
    def keys(self) -> list[str]:
        return [s.key for s in self.slots]

    def __len__(self) -> int:
        return len(self.slots)


@dataclass(frozen=True)
class SearchSpace:
    """Per-slot option menus. Menus are ordered and duplicate-free by block key."""

    menus: tuple[tuple[BlockSpec, ...], ...]

    def __post_init__(self) -> None:
        menus = tuple(tuple(as_spec(o) for o in menu) for menu in self.menus)
        object.__setattr__(self, "menus", menus)
        for slot, menu in enumerate(menus):
            if not menu:
                raise SpecError(f"slot {slot} has an empty option menu")
            keys = [o.key for o in menu]
            duplicates = sorted({k for k in keys if keys.count(k) > 1})
            if duplicates:
                raise SpecError(f"slot {slot} lists duplicate options {duplicates}")

    @classmethod
    def uniform(cls, menu: Sequence[BlockSpec | str], n_slots: int) -> "SearchSpace":
        """Every slot gets the same menu."""
        return cls(tuple(tuple(menu) for _ in range(n_slots)))

    @classmethod
    def baseline_only(cls, backbone: BackboneSpec) -> "SearchSpace":
        return cls(tuple((spec,) for spec in backbone.slots))

    def keys(self) -> list[str]:
        """Distinct option keys in first-seen order."""
        seen: dict[str, None] = {}
        for menu in self.menus:
            for option in menu:
                seen.setdefault(option.key, None)
        return list(seen)

    @property
    def option_counts(self) -> list[int]:
        return [len(menu) for menu in self.menus]

    def __len__(self) -> int:
        return len(self.menus)


def count_architectures(space: SearchSpace) -> int:
    """Number of distinct architectures: product of the per-slot option counts."""
    return math.prod(space.option_counts)


class SuperBlock(Module):
    """All options of one slot plus their architecture weights."""

    def __init__(
        self,
        options: Sequence[BlockSpec],
        model_dim: int,
        rng: RngStream,
        dropout: float = 0.0,
        moe_dropout: float | None = None,
        dtype=DEFAULT_DTYPE,
    ):
        self.options = tuple(options)
        self.blocks: list[Block] = [
            build_block(spec, model_dim, rng.derive(j), dropout, moe_dropout, dtype)
            for j, spec in enumerate(self.options)
        ]
        # zeros give uniform initial sampling
        self.alpha = parameter(np.zeros(len(self.options)), name="alpha", dtype=dtype)
        self.selection_counts = np.zeros(len(self.options), dtype=np.int64)

    @property
    def keys(self) -> list[str]:
        return [o.key for o in self.options]

    def sample(
        self,
        temperature: float,
        mode: SamplingMode,
        rng: RngStream | None = None,
        noise: np.ndarray | None = None,
    ) -> Tensor:
        return F.gumbel_softmax(self.alpha, temperature, rng=rng, hard=mode == "hard", noise=noise)

    def forward(
        self,
        x: Tensor,
        ctx: ForwardContext | None = None,
        *,
        probs: Tensor,
        mode: SamplingMode = "soft",
    ) -> Tensor:
        """Mix option outputs with ``probs``.

        Soft mode evaluates every option and returns ``sum_i probs[i] * block_i(x)``.
        Hard mode expects a one-hot ``probs`` and evaluates only its argmax.
        """
        ctx = ctx or ForwardContext()
        if probs.shape != (len(self.options),):
            raise ParameterError(
                f"probabilities of shape {probs.shape} for {len(self.options)} options"
            )
        if mode == "hard":
            j = int(F.argmax(probs))
            self.selection_counts[j] += 1
            return self.blocks[j](x, ctx) * probs[j]
        if mode != "soft":
            raise ParameterError(f"sampling mode must be 'soft' or 'hard', got {mode!r}")
        out: Tensor | None = None
        for j, block in enumerate(self.blocks):
            term = block(x, ctx) * probs[j]
            out = term if out is None else out + term
        return out

    def selection_frequencies(self) -> np.ndarray:
        total = self.selection_counts.sum()
        if total == 0:
            return np.zeros(len(self.options))
        return self.selection_counts / total


class SearchNetwork(Module):
    """Embeddings, one super block per backbone slot, output head."""

    def __init__(
        self,
        backbone: BackboneSpec,
        space: SearchSpace,
        vocab_size: int,
        max_seq_len: int,
        rng: RngStream,
        dropout: float = 0.0,
        moe_dropout: float | None = None,
        dtype=DEFAULT_DTYPE,
    ):
        if len(space) != len(backbone):
            raise SpecError(
                f"search space has {len(space)} slot menus but backbone has {len(backbone)} slots"
            )
        for menu in space.menus:
            for option in menu:
                option.validate_for(backbone.model_dim)
        self.backbone = backbone
        self.space = space
        self.vocab_size = vocab_size
        self.max_seq_len = max_seq_len
        d = backbone.model_dim
        self.embedding = TokenEmbedding(vocab_size, max_seq_len, d, rng.derive(0), dtype)
        self.super_blocks = [
            SuperBlock(menu, d, rng.derive(1, i), dropout, moe_dropout, dtype)
            for i, menu in enumerate(space.menus)
        ]
        self.head = OutputHead(d, vocab_size, rng.derive(2), dtype)

    # Parameter groups --------------------------------------------------

    def architecture_parameters(self) -> list[Tensor]:
        return [sb.alpha for sb in self.super_blocks]

    def network_parameters(self) -> list[Tensor]:
        arch = {id(p) for p in self.architecture_parameters()}
        return [p for p in self.parameters() if id(p) not in arch]

    # Sampling ----------------------------------------------------------

    def sample_probabilities(
        self,
        temperature: float,
        mode: SamplingMode,
        rng: RngStream | None = None,
        noise: Sequence[np.ndarray] | None = None,
    ) -> list[Tensor]:
        """One Gumbel-softmax draw per slot, in slot order."""
        return [
            sb.sample(temperature, mode, rng=rng, noise=None if noise is None else noise[i])
            for i, sb in enumerate(self.super_blocks)
        ]

    def forward(
        self,
        ids: np.ndarray,
        ctx: ForwardContext | None = None,
        *,
        probs: Sequence[Tensor],
        mode: SamplingMode = "soft",
    ) -> Tensor:
        ctx = ctx or ForwardContext()
        if len(probs) != len(self.super_blocks):
            raise ParameterError(
                f"{len(probs)} probability vectors for {len(self.super_blocks)} super blocks"
            )
        h = self.embedding(ids)
        for sb, p in zip(self.super_blocks, probs, strict=True):
            h = sb(h, ctx, probs=p, mode=mode)
        return self.head(h)

    # Inspection --------------------------------------------------------

    def alpha_snapshot(self) -> list[np.ndarray]:
        return [sb.alpha.data.copy() for sb in self.super_blocks]

    def set_alpha(self, values: Iterable[np.ndarray]) -> None:
        values = list(values)
        if len(values) != len(self.super_blocks):
            raise ParameterError(f"{len(values)} alpha vectors for {len(self.super_blocks)} slots")
        for sb, value in zip(self.super_blocks, values, strict=True):
            value = np.asarray(value, dtype=sb.alpha.dtype)
            if value.shape != sb.alpha.shape:
                raise ParameterError(f"alpha shape {value.shape} should be {sb.alpha.shape}")
            sb.alpha.data = value.copy()

    def option_keys(self) -> list[list[str]]:
        return [sb.keys for sb in self.super_blocks]

    def reset_selection_counts(self) -> None:
        for sb in self.super_blocks:
            sb.selection_counts[:] = 0


def build_search_network(
    backbone: BackboneSpec,
    space: SearchSpace,
    vocab_size: int,
    max_seq_len: int,
    rng: RngStream | int,
    **kwargs,
) -> SearchNetwork:
    """Compose the search network; raises ``SpecError`` for invalid menus."""
    if not isinstance(rng, RngStream):
        rng = RngStream(rng)
    net = SearchNetwork(backbone, space, vocab_size, max_seq_len, rng, **kwargs)
    logger.info(
        f"Search network: {len(space)} super blocks, {count_architectures(space):,} "
        f"architectures, {sum(p.size for p in net.network_parameters()):,} network weights"
    )
    return net
