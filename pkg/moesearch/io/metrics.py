"""
Per-step metrics logs written as CSV that parses back losslessly.
"""

import io
import logging
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from .atomic import atomic_write

logger = logging.getLogger(__name__)

PHASE1_COLUMNS = [
    "epoch", "step", "phase", "ce", "lat_loss", "beta", "estimated_us", "temperature",
]
PHASE2_COLUMNS = ["epoch", "step", "phase", "ce", "balance_loss", "max_expert_fraction"]
ROUTING_COLUMNS = ["epoch", "step", "layer", "expert", "token_fraction", "gate_score"]


def frame_to_csv(frame: pd.DataFrame) -> str:
    """CSV text with floats written as ``repr`` so every value round-trips exactly."""
    out = frame.copy()
    for column in out.columns:
        if pd.api.types.is_float_dtype(out[column]):
            out[column] = out[column].map(repr)
    buffer = io.StringIO()
    out.to_csv(buffer, index=False, lineterminator="\n")
    return buffer.getvalue()


def write_frame(frame: pd.DataFrame, path: str | Path) -> Path:
    return atomic_write(path, frame_to_csv(frame))


def read_frame(path: str | Path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Metrics file not found: {path}")
    return pd.read_csv(path, float_precision="round_trip")


class MetricsLog:
    """Append-only table of rows with a fixed column order."""

    def __init__(self, columns: Sequence[str]):
        self.columns = list(columns)
        self.rows: list[dict[str, Any]] = []

    def append(self, **values: Any) -> None:
        unknown = set(values) - set(self.columns)
        if unknown:
            raise KeyError(f"unknown metrics columns {sorted(unknown)}")
        row = {}
        for column in self.columns:
            value = values.get(column)
            if isinstance(value, np.generic):
                value = value.item()
            row[column] = value
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def filter(self, **match: Any) -> list[dict[str, Any]]:
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=self.columns)

    def save(self, path: str | Path) -> Path:
        path = write_frame(self.to_frame(), path)
        logger.info(f"Wrote {len(self)} metrics rows to {path}")
        return path
