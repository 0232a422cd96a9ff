"""
Search checkpoints: a JSON document plus a sibling ``.npz`` with arrays.

The JSON part (``format_version`` 1) is human-readable and holds everything
needed to continue sampling: epoch, temperature, alpha per slot, option keys
and random-stream states. The ``.npz`` part holds network weights and
optimizer buffers for resuming training.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..core.errors import DataError
from .atomic import atomic_open, atomic_write

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class SearchCheckpoint:
    epoch: int
    """Number of completed epochs."""
    temperature: float
    alpha: list[list[float]]
    option_keys: list[list[str]]
    rng_state: dict[str, Any] = field(default_factory=dict)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    """Weights (``net.*``) and optimizer buffers (``opt_net.*``, ``opt_arch.*``)."""
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "epoch": self.epoch,
            "temperature": self.temperature,
            "alpha": self.alpha,
            "option_keys": self.option_keys,
            "rng_state": self.rng_state,
            "metadata": self.metadata,
        }

    def save(self, path: str | Path) -> Path:
        """Write ``path`` (JSON) and ``path.with_suffix('.npz')`` (arrays)."""
        path = Path(path)
        with atomic_open(path.with_suffix(".npz"), "wb") as handle:
            np.savez(handle, **self.arrays)
        atomic_write(path, json.dumps(self.to_json(), indent=2))
        logger.info(f"Checkpoint for epoch {self.epoch} saved to {path}")
        return path

    @classmethod
    def load(cls, path: str | Path, with_arrays: bool = True) -> "SearchCheckpoint":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Checkpoint not found: {path}")
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
        version = doc.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise DataError(
                f"{path}: unsupported checkpoint format_version {version!r} "
                f"(expected {CHECKPOINT_FORMAT_VERSION})"
            )
        arrays: dict[str, np.ndarray] = {}
        npz_path = path.with_suffix(".npz")
        if with_arrays and npz_path.exists():
            with np.load(npz_path) as data:
                arrays = {k: data[k] for k in data.files}
        return cls(
            epoch=int(doc["epoch"]),
            temperature=float(doc["temperature"]),
            alpha=[list(map(float, a)) for a in doc["alpha"]],
            option_keys=[list(k) for k in doc["option_keys"]],
            rng_state=doc.get("rng_state", {}),
            arrays=arrays,
            metadata=doc.get("metadata", {}),
        )

    def prefixed(self, prefix: str) -> dict[str, np.ndarray]:
        """Arrays stored under ``prefix.``, with the prefix stripped."""
        head = f"{prefix}."
        return {k[len(head):]: v for k, v in self.arrays.items() if k.startswith(head)}


def with_prefix(prefix: str, arrays: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v for k, v in arrays.items()}


def save_weights(path: str | Path, state: dict[str, np.ndarray], **metadata: Any) -> Path:
    """Model weights as ``.npz`` plus a JSON sidecar with metadata."""
    path = Path(path)
    with atomic_open(path, "wb") as handle:
        np.savez(handle, **state)
    if metadata:
        atomic_write(path.with_suffix(".json"), json.dumps(metadata, indent=2))
    logger.info(f"Weights saved to {path}")
    return path


def load_weights(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Weights file not found: {path}")
    with np.load(path) as data:
        return {k: data[k] for k in data.files}
