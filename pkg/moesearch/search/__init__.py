"""
Search machinery: supernet, latency tables and estimates, losses,
the two-phase search loop and architecture finalization.
"""

from .engine import (
    OptimizerSettings,
    Phase1Config,
    Phase1Result,
    Phase1State,
    anneal_temperature,
    run_phase1,
    select_arch_subset,
    subset_indices,
)
from .finalize import (
    ArchitectureDescriptor,
    EvalResult,
    Phase2Config,
    Phase2Result,
    baseline_descriptor,
    evaluate,
    instantiate,
    load_descriptor,
    parse_architecture_rendering,
    render_architecture,
    run_phase2,
    sample_architecture,
    save_descriptor,
)
from .latency import (
    LatencyEntry,
    LatencyEstimate,
    LatencyProfiler,
    LatencyTable,
    ProfilingContext,
    architecture_latency,
    baseline_latency,
    estimate_latency,
    expected_latency,
    measure_end_to_end,
    profile_block,
)
from .losses import (
    BalanceLoss,
    LatencyLoss,
    LatencyLossConfig,
    balance_loss,
    latency_loss,
    layer_balance_loss,
    phase1_total_loss,
    phase2_total_loss,
)
from .supernet import (
    BackboneSpec,
    SearchNetwork,
    SearchSpace,
    SuperBlock,
    build_search_network,
    count_architectures,
)

__all__ = [
    "ArchitectureDescriptor",
    "BackboneSpec",
    "BalanceLoss",
    "EvalResult",
    "LatencyEntry",
    "LatencyEstimate",
    "LatencyLoss",
    "LatencyLossConfig",
    "LatencyProfiler",
    "LatencyTable",
    "OptimizerSettings",
    "Phase1Config",
    "Phase1Result",
    "Phase1State",
    "Phase2Config",
    "Phase2Result",
    "ProfilingContext",
    "SearchNetwork",
    "SearchSpace",
    "SuperBlock",
    "anneal_temperature",
    "architecture_latency",
    "balance_loss",
    "baseline_descriptor",
    "baseline_latency",
    "build_search_network",
    "count_architectures",
    "estimate_latency",
    "evaluate",
    "expected_latency",
    "instantiate",
    "latency_loss",
    "layer_balance_loss",
    "load_descriptor",
    "measure_end_to_end",
    "parse_architecture_rendering",
    "phase1_total_loss",
    "phase2_total_loss",
    "profile_block",
    "render_architecture",
    "run_phase1",
    "run_phase2",
    "sample_architecture",
    "save_descriptor",
    "select_arch_subset",
    "subset_indices",
]
