"""
Block families of the search space and the fixed-architecture network built from them.
"""

from .layers import (
    AttentionBlock,
    Block,
    FeedForward,
    FeedForwardBlock,
    ForwardContext,
    LayerNorm,
    MoEBlock,
    SkipBlock,
    build_block,
)
from .model import FinalNetwork, build_final_network
from .routing import (
    GateDecision,
    RoutingStats,
    balanced_assignments,
    collapsed_assignments,
    gate_route,
)
from .specs import (
    BlockKind,
    BlockSpec,
    as_spec,
    parse_block_key,
    scaled_ffl,
    validate_block_key,
)

__all__ = [
    "AttentionBlock",
    "Block",
    "BlockKind",
    "BlockSpec",
    "FeedForward",
    "FeedForwardBlock",
    "FinalNetwork",
    "ForwardContext",
    "GateDecision",
    "LayerNorm",
    "MoEBlock",
    "RoutingStats",
    "SkipBlock",
    "as_spec",
    "balanced_assignments",
    "build_block",
    "build_final_network",
    "collapsed_assignments",
    "gate_route",
    "parse_block_key",
    "scaled_ffl",
    "validate_block_key",
]
