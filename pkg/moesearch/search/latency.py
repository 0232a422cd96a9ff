"""
Block latency lookup tables and the differentiable latency estimate.

Latencies are profiled once per block key on the host CPU (median wall-clock
time of forward passes after warmup) and stored in a ``LatencyTable``. During
search the network latency is estimated additively: each slot contributes the
probability-weighted mean of its options' table latencies, and the network
total is the sum over slots.
"""

import io
import logging
import statistics
import time
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from tqdm import tqdm

from ..blocks.layers import ForwardContext, build_block
from ..blocks.specs import BlockSpec, as_spec, scaled_ffl
from ..core import functional as F
from ..core.errors import CoverageError, DataError, ParameterError
from ..core.rng import RngStream, StreamId
from ..core.tensor import Tensor, as_tensor, no_grad, stack
from ..io.atomic import atomic_write
from .supernet import BackboneSpec, SearchNetwork

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ["key", "latency_us", "reps", "warmup", "iqr_us"]
REFERENCE_KEY = "mha:h=8"
MIN_LATENCY_US = 1e-3
PRECISIONS = {"fp64": np.float64, "fp32": np.float32}


@dataclass(frozen=True)
class ProfilingContext:
    """Shape and precision every latency in a table was measured under."""

    batch_size: int
    seq_len: int
    model_dim: int
    precision: str = "fp64"

    def __post_init__(self) -> None:
        for name in ("batch_size", "seq_len", "model_dim"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ParameterError(f"profiling {name} must be a positive integer, got {value!r}")
        if self.precision not in PRECISIONS:
            raise ParameterError(
                f"precision must be one of {sorted(PRECISIONS)}, got {self.precision!r}"
            )

    @property
    def dtype(self) -> type[np.floating]:
        return PRECISIONS[self.precision]

    def as_dict(self) -> dict[str, Any]:
        return {
            "batch_size": self.batch_size,
            "seq_len": self.seq_len,
            "model_dim": self.model_dim,
            "precision": self.precision,
        }


@dataclass(frozen=True)
class LatencyEntry:
    latency_us: float
    reps: int
    warmup: int
    iqr_us: float

    @property
    def dispersion(self) -> float:
        return self.iqr_us / self.latency_us


@dataclass
class LatencyTable:
    """Block key → profiled latency in microseconds under one ``ProfilingContext``."""

    context: ProfilingContext
    entries: dict[str, LatencyEntry] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for key, entry in self.entries.items():
            if not entry.latency_us > 0:
                raise ParameterError(f"latency for '{key}' must be > 0, got {entry.latency_us}")

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def keys(self) -> list[str]:
        return list(self.entries)

    def add(self, key: str, entry: LatencyEntry) -> None:
        if not entry.latency_us > 0:
            raise ParameterError(f"latency for '{key}' must be > 0, got {entry.latency_us}")
        self.entries[key] = entry

    def latency(self, key: "str | BlockSpec") -> float:
        key = key.key if isinstance(key, BlockSpec) else key
        try:
            return self.entries[key].latency_us
        except KeyError:
            raise CoverageError(key) from None

    def missing(self, keys: Iterable[str]) -> list[str]:
        return [k for k in keys if k not in self.entries]

    def require(self, keys: Iterable[str], context: str = "") -> None:
        """Raise ``CoverageError`` for the first key without an entry."""
        missing = self.missing(keys)
        if missing:
            raise CoverageError(missing[0], context)

    def vector(self, keys: Sequence[str]) -> np.ndarray:
        return np.array([self.latency(k) for k in keys], dtype=np.float64)

    # Views -------------------------------------------------------------

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"key": k, "latency_us": e.latency_us, "reps": e.reps, "warmup": e.warmup,
             "iqr_us": e.iqr_us}
            for k, e in self.entries.items()
        ]
        return pd.DataFrame(rows, columns=TABLE_COLUMNS)

    def normalized(self, reference: str = REFERENCE_KEY) -> pd.DataFrame:
        """Latencies divided by the ``reference`` entry (8-head attention by default)."""
        frame = self.to_frame()
        frame["normalized"] = frame["latency_us"] / self.latency(reference)
        return frame

    # Persistence -------------------------------------------------------

    def to_csv_text(self) -> str:
        header = {**self.context.as_dict(), **self.metadata}
        lines = [f"# {k}={v}" for k, v in header.items()]
        frame = self.to_frame()
        # repr() is the shortest string that parses back to the same float
        for column in ("latency_us", "iqr_us"):
            frame[column] = frame[column].map(repr)
        buffer = io.StringIO()
        frame.to_csv(buffer, index=False, lineterminator="\n")
        return "\n".join(lines) + "\n" + buffer.getvalue()

    def save(self, path: str | Path) -> Path:
        path = atomic_write(path, self.to_csv_text())
        logger.info(f"Latency table with {len(self)} entries saved to {path}")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "LatencyTable":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Latency table not found: {path}")
        header: dict[str, str] = {}
        skip = 0
        with open(path, encoding="utf-8") as f:
            for line in f:
                if not line.startswith("#"):
                    break
                name, _, value = line[1:].strip().partition("=")
                header[name.strip()] = value.strip()
                skip += 1
        frame = pd.read_csv(
            path, skiprows=skip, dtype={"key": str}, float_precision="round_trip"
        )
        if list(frame.columns) != TABLE_COLUMNS:
            raise DataError(f"{path}: expected columns {TABLE_COLUMNS}, got {list(frame.columns)}")
        try:
            context = ProfilingContext(
                batch_size=int(header.pop("batch_size")),
                seq_len=int(header.pop("seq_len")),
                model_dim=int(header.pop("model_dim")),
                precision=header.pop("precision", "fp64"),
            )
        except KeyError as e:
            raise DataError(f"{path}: missing context field {e.args[0]} in header") from None
        entries = {
            str(row.key): LatencyEntry(
                latency_us=float(row.latency_us),
                reps=int(row.reps),
                warmup=int(row.warmup),
                iqr_us=float(row.iqr_us),
            )
            for row in frame.itertuples(index=False)
        }
        table = cls(context, entries, header)
        logger.info(f"Loaded latency table with {len(table)} entries from {path}")
        return table


# ----------------------------------------------------------------------
# Profiling
# ----------------------------------------------------------------------

def format_latency(us: float) -> str:
    """Human-readable duration given in microseconds."""
    if us >= 10_000:
        return f"{us / 1000:.1f} ms"
    if us >= 10:
        return f"{us:.1f} us"
    return f"{us * 1000:.0f} ns"


def _time_forward(fn, repetitions: int, warmup: int) -> tuple[float, float]:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repetitions):
        start = time.perf_counter_ns()
        fn()
        samples.append((time.perf_counter_ns() - start) / 1000.0)
    q1, q3 = np.percentile(samples, [25, 75])
    return statistics.median(samples), float(q3 - q1)


def profile_block(
    spec: BlockSpec | str,
    context: ProfilingContext,
    repetitions: int = 50,
    warmup: int = 5,
    rng: RngStream | None = None,
    routing: str = "balanced",
) -> LatencyEntry:
    """Median forward latency of one freshly built block on random inputs.

    MoE blocks run with synthetic ``routing`` (balanced by default), so the
    measurement includes gating and per-expert dispatch but not learned
    imbalance.

    Raises:
        ParameterError: If ``repetitions < 10`` or ``warmup < 3``.
    """
    if repetitions < 10:
        raise ParameterError(f"repetitions must be >= 10, got {repetitions}")
    if warmup < 3:
        raise ParameterError(f"warmup must be >= 3, got {warmup}")
    spec = as_spec(spec)
    rng = rng or RngStream(0, StreamId.PROFILE)
    block = build_block(spec, context.model_dim, rng.derive(1), dtype=context.dtype)
    block.eval()
    x = Tensor(
        rng.derive(2).normal((context.batch_size, context.seq_len, context.model_dim)),
        dtype=context.dtype,
    )
    ctx = ForwardContext(routing_override=routing if spec.is_moe else None)

    def run() -> None:
        ctx.routing.clear()
        block(x, ctx)

    with no_grad():
        median, iqr = _time_forward(run, repetitions, warmup)
    median = max(median, MIN_LATENCY_US)
    entry = LatencyEntry(latency_us=median, reps=repetitions, warmup=warmup, iqr_us=iqr)
    if entry.dispersion > 0.5:
        logger.warning(
            f"High timing dispersion for '{spec.key}': IQR/median = {entry.dispersion:.2f}"
        )
    return entry


class LatencyProfiler:
    """Profiles block keys sequentially under one context."""

    def __init__(
        self,
        context: ProfilingContext,
        repetitions: int = 50,
        warmup: int = 5,
        seed: int = 0,
        progress_bar: bool = True,
    ):
        self.context = context
        self.repetitions = repetitions
        self.warmup = warmup
        self.seed = seed
        self.progress_bar = progress_bar

    def _rng(self, index: int) -> RngStream:
        return RngStream(self.seed, StreamId.PROFILE, (index,))

    def profile(
        self,
        keys: Iterable[BlockSpec | str],
        table: LatencyTable | None = None,
    ) -> LatencyTable:
        """Profile every distinct key not already in ``table``."""
        table = table if table is not None else LatencyTable(self.context)
        table.metadata.setdefault(
            "timestamp", datetime.now(timezone.utc).isoformat(timespec="seconds")
        )
        distinct = list(dict.fromkeys(as_spec(k).key for k in keys))
        todo = [k for k in distinct if k not in table]
        iterator = tqdm(todo, desc="Profiling blocks", unit="block") if self.progress_bar else todo
        for index, key in enumerate(iterator):
            entry = profile_block(
                key, self.context, self.repetitions, self.warmup, rng=self._rng(index)
            )
            table.add(key, entry)
            logger.debug(f"{key}: {format_latency(entry.latency_us)} (IQR {entry.iqr_us:.2f} us)")
        logger.info(f"Profiled {len(todo)} block(s); table has {len(table)} entries")
        return table

    def _at_batch(self, batch_size: int) -> ProfilingContext:
        return ProfilingContext(
            batch_size, self.context.seq_len, self.context.model_dim, self.context.precision
        )

    def profile_batch_sweep(
        self,
        keys: Sequence[BlockSpec | str],
        batch_sizes: Sequence[int],
        reference: str | None = None,
    ) -> pd.DataFrame:
        """Latency of ``keys`` across batch sizes, normalized to ``reference`` at each size.

        ``reference`` defaults to the first feed-forward key in ``keys``.
        """
        specs = [as_spec(k) for k in keys]
        if reference is None:
            reference = next((s.key for s in specs if s.kind == "ffl"), specs[0].key)
        if reference not in [s.key for s in specs]:
            specs.append(as_spec(reference))
        rows = []
        for batch_size in batch_sizes:
            context = self._at_batch(batch_size)
            for index, spec in enumerate(specs):
                entry = profile_block(
                    spec, context, self.repetitions, self.warmup, rng=self._rng(index)
                )
                rows.append(
                    {"batch_size": batch_size, "key": spec.key, "latency_us": entry.latency_us}
                )
        frame = pd.DataFrame(rows)
        ref = frame[frame["key"] == reference].set_index("batch_size")["latency_us"]
        frame["normalized"] = frame["latency_us"] / frame["batch_size"].map(ref)
        return frame

    def profile_routing_balance(
        self, spec: BlockSpec | str, batch_sizes: Sequence[int]
    ) -> pd.DataFrame:
        """Balanced versus collapsed routing runtime of one MoE block."""
        spec = as_spec(spec)
        if not spec.is_moe:
            raise ParameterError(f"routing balance needs an moe block, got '{spec.key}'")
        rows = []
        for batch_size in batch_sizes:
            context = self._at_batch(batch_size)
            balanced = profile_block(
                spec, context, self.repetitions, self.warmup, self._rng(0), routing="balanced"
            )
            collapsed = profile_block(
                spec, context, self.repetitions, self.warmup, self._rng(0), routing="collapsed"
            )
            rows.append(
                {
                    "batch_size": batch_size,
                    "balanced_us": balanced.latency_us,
                    "collapsed_us": collapsed.latency_us,
                    "speedup": collapsed.latency_us / balanced.latency_us,
                }
            )
        return pd.DataFrame(rows)

    def compare_iso_parameter(self, spec: BlockSpec | str) -> dict[str, float]:
        """MoE block against the feed-forward block holding all its experts' parameters."""
        spec = as_spec(spec)
        dense = scaled_ffl(spec)
        moe_us = profile_block(spec, self.context, self.repetitions, self.warmup, self._rng(0))
        dense_us = profile_block(dense, self.context, self.repetitions, self.warmup, self._rng(1))
        return {
            "moe_key": spec.key,
            "ffl_key": dense.key,
            "moe_us": moe_us.latency_us,
            "ffl_us": dense_us.latency_us,
            "ratio": moe_us.latency_us / dense_us.latency_us,
        }


# ----------------------------------------------------------------------
# Estimation
# ----------------------------------------------------------------------

@dataclass
class LatencyEstimate:
    """Expected network latency; ``total_us`` is differentiable w.r.t. the probabilities."""

    total_us: Tensor
    per_slot_us: Tensor

    @property
    def value(self) -> float:
        return self.total_us.item()

    @property
    def per_slot(self) -> np.ndarray:
        return self.per_slot_us.data.copy()


def expected_latency(
    option_keys: Sequence[Sequence[str]],
    probabilities: Sequence[Tensor | np.ndarray],
    table: LatencyTable,
) -> LatencyEstimate:
    """Sum over slots of ``sum_i P[b, i] * Lat(option b_i)``."""
    if len(option_keys) != len(probabilities):
        raise ParameterError(
            f"{len(probabilities)} probability vectors for {len(option_keys)} slots"
        )
    slot_terms = []
    for keys, probs in zip(option_keys, probabilities, strict=True):
        probs = as_tensor(probs)
        latencies = table.vector(keys)
        if probs.shape != latencies.shape:
            raise ParameterError(
                f"probabilities of shape {probs.shape} for {len(keys)} options {list(keys)}"
            )
        slot_terms.append((probs * latencies).sum())
    per_slot = stack(slot_terms)
    return LatencyEstimate(total_us=per_slot.sum(), per_slot_us=per_slot)


def estimate_latency(
    network: SearchNetwork,
    table: LatencyTable,
    probabilities: Sequence[Tensor] | None = None,
    temperature: float = 1.0,
    rng: RngStream | None = None,
) -> LatencyEstimate:
    """Expected latency of ``network`` under its architecture weights.

    When ``probabilities`` is omitted they are sampled with soft Gumbel-softmax
    from ``rng``, or taken noise-free as ``softmax(alpha / T)`` without an rng.
    """
    keys = network.option_keys()
    table.require((k for slot in keys for k in slot), "search space")
    if probabilities is None:
        if rng is not None:
            probabilities = network.sample_probabilities(temperature, "soft", rng=rng)
        else:
            probabilities = [
                F.softmax(sb.alpha * (1.0 / temperature)) for sb in network.super_blocks
            ]
    return expected_latency(keys, probabilities, table)


def architecture_latency(slots: Sequence[BlockSpec | str], table: LatencyTable) -> float:
    """Table latency of a fixed architecture (one-hot probabilities)."""
    total = 0.0
    for spec in slots:
        total += table.latency(as_spec(spec).key)
    return total


def baseline_latency(backbone: BackboneSpec, table: LatencyTable) -> float:
    """Latency of the backbone taken from the same table used for estimates."""
    table.require(backbone.keys, "backbone")
    return architecture_latency(backbone.slots, table)


def measure_end_to_end(
    slots: Sequence[BlockSpec | str],
    context: ProfilingContext,
    vocab_size: int,
    repetitions: int = 30,
    warmup: int = 3,
    seed: int = 0,
    max_seq_len: int | None = None,
) -> LatencyEntry:
    """Median wall-clock forward latency of the assembled network with fresh weights.

    Inputs are ``(batch_size, seq_len)`` random token ids; MoE layers use
    their learned (freshly initialized) gates.
    """
    from ..blocks.model import build_final_network

    if repetitions < 1 or warmup < 0:
        raise ParameterError(
            f"repetitions must be >= 1 and warmup >= 0, got {repetitions}/{warmup}"
        )
    rng = RngStream(seed, StreamId.PROFILE, (99,))
    net = build_final_network(
        slots,
        vocab_size,
        max_seq_len or context.seq_len,
        context.model_dim,
        rng,
        dtype=context.dtype,
    )
    net.eval()
    ids = rng.derive(1).integers(0, vocab_size, (context.batch_size, context.seq_len))

    def run() -> None:
        net(ids)

    with no_grad():
        median, iqr = _time_forward(run, repetitions, warmup)
    return LatencyEntry(
        latency_us=max(median, MIN_LATENCY_US), reps=repetitions, warmup=warmup, iqr_us=iqr
    )
