"""
moesearch - latency-aware architecture search over mixture-of-experts transformer blocks.
"""

from .blocks.model import FinalNetwork, build_final_network
from .blocks.specs import BlockKind, BlockSpec, parse_block_key, scaled_ffl, validate_block_key
from .config.settings import RunConfig, create_default_settings, load_run_config
from .core.errors import (
    ConfigError,
    CoverageError,
    DataError,
    DimensionError,
    MoESearchError,
    NumericAbort,
    ParameterError,
    SpecError,
)
from .core.tensor import Tensor, no_grad
from .io.corpus import BatchIterator, Corpus, load_corpus
from .pipeline import SearchPipeline, create_pipeline
from .reporting.report import RunReport
from .search.engine import Phase1Config, Phase1Result, run_phase1
from .search.finalize import (
    ArchitectureDescriptor,
    EvalResult,
    Phase2Config,
    evaluate,
    instantiate,
    load_descriptor,
    render_architecture,
    run_phase2,
    sample_architecture,
    save_descriptor,
)
from .search.latency import (
    LatencyProfiler,
    LatencyTable,
    ProfilingContext,
    estimate_latency,
    measure_end_to_end,
    profile_block,
)
from .search.losses import balance_loss, latency_loss
from .search.supernet import BackboneSpec, SearchNetwork, SearchSpace, build_search_network

__version__ = "1.0.0"

__all__ = [
    # Blocks
    "BlockKind", "BlockSpec", "parse_block_key", "validate_block_key", "scaled_ffl",
    "FinalNetwork", "build_final_network",
    # Search
    "BackboneSpec", "SearchSpace", "SearchNetwork", "build_search_network",
    "Phase1Config", "Phase1Result", "run_phase1",
    "Phase2Config", "EvalResult", "run_phase2", "evaluate",
    "ArchitectureDescriptor", "sample_architecture", "instantiate",
    "save_descriptor", "load_descriptor", "render_architecture",
    # Latency
    "ProfilingContext", "LatencyTable", "LatencyProfiler", "profile_block",
    "estimate_latency", "measure_end_to_end",
    # Losses
    "latency_loss", "balance_loss",
    # Data
    "Corpus", "BatchIterator", "load_corpus",
    # Config, pipeline, reporting
    "RunConfig", "create_default_settings", "load_run_config",
    "SearchPipeline", "create_pipeline", "RunReport",
    # Core
    "Tensor", "no_grad",
    # Errors
    "MoESearchError", "ConfigError", "CoverageError", "DataError", "DimensionError",
    "NumericAbort", "ParameterError", "SpecError",
]
