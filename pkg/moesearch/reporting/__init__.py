"""Report generation over completed search runs."""

from .report import (
    REFERENCE_GPU_MHA_FFL_RATIO,
    RunReport,
    SearchRun,
    correlation,
    find_search_runs,
)

__all__ = [
    "REFERENCE_GPU_MHA_FFL_RATIO",
    "RunReport",
    "SearchRun",
    "correlation",
    "find_search_runs",
]
