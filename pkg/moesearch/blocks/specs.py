"""
Declarative block descriptions and the canonical block-key grammar.

Key grammar (stable, used by latency tables, configs and descriptors)::

    key   := "skip"
           | "mha:h=" INT
           | "ffl:d=" INT
           | "moe:d=" INT ":e=" INT ":k=" INT
    INT   := [1-9][0-9]*

Every valid ``BlockSpec`` has exactly one key and every key parses back to the
same spec, so keys can be used as dictionary keys wherever a spec is meant.
"""

import re
from dataclasses import dataclass
from enum import StrEnum

from ..core.errors import SpecError


class BlockKind(StrEnum):
    SKIP = "skip"
    MHA = "mha"
    FFL = "ffl"
    MOE = "moe"


_INT = r"([1-9][0-9]*)"
_KEY_PATTERNS: dict[BlockKind, re.Pattern[str]] = {
    BlockKind.SKIP: re.compile(r"skip"),
    BlockKind.MHA: re.compile(rf"mha:h={_INT}"),
    BlockKind.FFL: re.compile(rf"ffl:d={_INT}"),
    BlockKind.MOE: re.compile(rf"moe:d={_INT}:e={_INT}:k={_INT}"),
}


@dataclass(frozen=True)
class BlockSpec:
    """One block option: skip, multi-head attention, feed-forward or MoE feed-forward.

    Fields that do not apply to ``kind`` must be ``None``.
    """

    kind: BlockKind
    heads: int | None = None
    inner_dim: int | None = None
    experts: int | None = None
    top_k: int | None = None

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "kind", BlockKind(self.kind))
        except ValueError:
            raise SpecError(f"unknown block kind {self.kind!r}") from None
        is_valid, message = _check_fields(self)
        if not is_valid:
            raise SpecError(message)

    # Constructors ------------------------------------------------------

    @classmethod
    def skip(cls) -> "BlockSpec":
        return cls(BlockKind.SKIP)

    @classmethod
    def mha(cls, heads: int) -> "BlockSpec":
        return cls(BlockKind.MHA, heads=heads)

    @classmethod
    def ffl(cls, inner_dim: int) -> "BlockSpec":
        return cls(BlockKind.FFL, inner_dim=inner_dim)

    @classmethod
    def moe(cls, inner_dim: int, experts: int, top_k: int) -> "BlockSpec":
        return cls(BlockKind.MOE, inner_dim=inner_dim, experts=experts, top_k=top_k)

    # Properties --------------------------------------------------------

    @property
    def key(self) -> str:
        match self.kind:
            case BlockKind.SKIP:
                return "skip"
            case BlockKind.MHA:
                return f"mha:h={self.heads}"
            case BlockKind.FFL:
                return f"ffl:d={self.inner_dim}"
            case BlockKind.MOE:
                return f"moe:d={self.inner_dim}:e={self.experts}:k={self.top_k}"

    @property
    def is_skip(self) -> bool:
        return self.kind is BlockKind.SKIP

    @property
    def is_moe(self) -> bool:
        return self.kind is BlockKind.MOE

    def validate_for(self, model_dim: int) -> None:
        """Raise ``SpecError`` if this block cannot operate on ``model_dim`` features."""
        if model_dim < 1:
            raise SpecError(f"model_dim must be positive, got {model_dim}")
        if self.kind is BlockKind.MHA and model_dim % self.heads != 0:
            raise SpecError(
                f"'{self.key}': {self.heads} heads do not divide model_dim {model_dim}"
            )

    def parameter_count(self, model_dim: int) -> int:
        """Trainable scalars of the block, including its layer norm."""
        d = model_dim
        norm = 2 * d
        match self.kind:
            case BlockKind.SKIP:
                return 0
            case BlockKind.MHA:
                return norm + 4 * d * d
            case BlockKind.FFL:
                return norm + feed_forward_parameters(d, self.inner_dim)
            case BlockKind.MOE:
                return norm + d * self.experts + self.experts * feed_forward_parameters(
                    d, self.inner_dim
                )

    def __str__(self) -> str:
        return self.key


def feed_forward_parameters(model_dim: int, inner_dim: int) -> int:
    """Weights and biases of one two-layer feed-forward network."""
    return model_dim * inner_dim + inner_dim + inner_dim * model_dim + model_dim


def _check_fields(spec: BlockSpec) -> tuple[bool, str | None]:
    used = {
        BlockKind.SKIP: (),
        BlockKind.MHA: ("heads",),
        BlockKind.FFL: ("inner_dim",),
        BlockKind.MOE: ("inner_dim", "experts", "top_k"),
    }[spec.kind]
    for name in ("heads", "inner_dim", "experts", "top_k"):
        value = getattr(spec, name)
        if name in used:
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                return (
                    False,
                    f"{spec.kind.value} block needs a positive integer {name}, got {value!r}",
                )
        elif value is not None:
            return False, f"{spec.kind.value} block does not take {name} (got {value!r})"
    if spec.kind is BlockKind.MOE and spec.top_k > spec.experts:
        return False, f"top_k {spec.top_k} exceeds experts {spec.experts}"
    return True, None


def parse_block_key(key: str) -> BlockSpec:
    """Parse a canonical block key into a ``BlockSpec``.

    Raises:
        SpecError: If ``key`` does not follow the grammar or describes an invalid block.
    """
    if not isinstance(key, str):
        raise SpecError(f"block key must be a string, got {type(key).__name__}")
    text = key.strip()
    for kind, pattern in _KEY_PATTERNS.items():
        found = pattern.fullmatch(text)
        if found is None:
            continue
        values = [int(v) for v in found.groups()]
        match kind:
            case BlockKind.SKIP:
                return BlockSpec.skip()
            case BlockKind.MHA:
                return BlockSpec.mha(*values)
            case BlockKind.FFL:
                return BlockSpec.ffl(*values)
            case BlockKind.MOE:
                return BlockSpec.moe(*values)
    raise SpecError(
        f"'{key}' is not a valid block key "
        "(expected skip | mha:h=INT | ffl:d=INT | moe:d=INT:e=INT:k=INT)"
    )


def validate_block_key(key: str) -> tuple[bool, str | None]:
    """Check a block key without raising."""
    try:
        parse_block_key(key)
        return True, None
    except SpecError as e:
        return False, str(e)


def as_spec(value: "BlockSpec | str") -> BlockSpec:
    return value if isinstance(value, BlockSpec) else parse_block_key(value)


def scaled_ffl(spec: BlockSpec) -> BlockSpec:
    """The feed-forward block with as many FF parameters as all experts of ``spec`` together."""
    if not spec.is_moe:
        raise SpecError(f"scaled_ffl expects an moe block, got '{spec.key}'")
    return BlockSpec.ffl(spec.inner_dim * spec.experts)
