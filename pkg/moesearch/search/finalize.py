"""
Phase 2: sample the final architecture, instantiate it with fresh weights and
retrain it with cross-entropy plus the expert balance loss.

Architecture descriptors are stored as JSON: an ordered ``slots`` list of
canonical block keys plus metadata fields. The recorded
``estimated_latency_us`` is recomputed from the latency table on load and
must agree with it.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np
from tqdm import tqdm

from ..blocks.layers import ForwardContext
from ..blocks.model import FinalNetwork, build_final_network
from ..blocks.specs import BlockSpec, as_spec, parse_block_key
from ..core import functional as F
from ..core.errors import DataError, NumericAbort, ParameterError, SpecError
from ..core.optim import clip_grad_norm
from ..core.rng import RngStream, RngStreams, StreamId
from ..core.tensor import no_grad
from ..io.atomic import atomic_write
from ..io.corpus import BatchIterator
from ..io.metrics import PHASE2_COLUMNS, ROUTING_COLUMNS, MetricsLog
from .engine import OptimizerSettings
from .latency import LatencyTable, architecture_latency, baseline_latency
from .losses import balance_loss, phase2_total_loss
from .supernet import BackboneSpec, SearchNetwork

logger = logging.getLogger(__name__)

DESCRIPTOR_FORMAT_VERSION = 1
LATENCY_RTOL = 1e-9


@dataclass
class ArchitectureDescriptor:
    """The chosen block per slot plus provenance metadata."""

    slots: list[BlockSpec]
    model_dim: int
    estimated_latency_us: float | None = None
    baseline_latency_us: float | None = None
    target_ratio: float | None = None
    seed: int | None = None
    source: Literal["searched", "manual"] = "manual"
    alpha_snapshot: list[list[float]] | None = None
    vocab_size: int | None = None
    max_seq_len: int | None = None
    target_met: bool | None = None
    notes: str = ""

    def __post_init__(self) -> None:
        self.slots = [as_spec(s) for s in self.slots]
        if not self.slots:
            raise SpecError("architecture needs at least one slot")
        if self.source not in ("searched", "manual"):
            raise SpecError(f"source must be 'searched' or 'manual', got {self.source!r}")
        for spec in self.slots:
            spec.validate_for(self.model_dim)

    @property
    def keys(self) -> list[str]:
        return [s.key for s in self.slots]

    @property
    def has_moe(self) -> bool:
        return any(s.is_moe for s in self.slots)

    def latency_ratio(self) -> float | None:
        if self.estimated_latency_us is None or not self.baseline_latency_us:
            return None
        return self.estimated_latency_us / self.baseline_latency_us

    def verify(self, table: LatencyTable) -> None:
        """Fill or check ``estimated_latency_us`` against ``table``.

        Raises:
            DataError: If the recorded estimate disagrees with the table.
            CoverageError: If a slot key is missing from the table.
        """
        recomputed = architecture_latency(self.slots, table)
        if self.estimated_latency_us is None:
            self.estimated_latency_us = recomputed
            return
        if not math.isclose(self.estimated_latency_us, recomputed, rel_tol=LATENCY_RTOL):
            raise DataError(
                f"descriptor estimated_latency_us {self.estimated_latency_us!r} does not match "
                f"the latency table ({recomputed!r})"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": DESCRIPTOR_FORMAT_VERSION,
            "slots": self.keys,
            "model_dim": self.model_dim,
            "estimated_latency_us": self.estimated_latency_us,
            "baseline_latency_us": self.baseline_latency_us,
            "target_ratio": self.target_ratio,
            "target_met": self.target_met,
            "seed": self.seed,
            "source": self.source,
            "vocab_size": self.vocab_size,
            "max_seq_len": self.max_seq_len,
            "alpha_snapshot": self.alpha_snapshot,
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ArchitectureDescriptor":
        version = doc.get("format_version", DESCRIPTOR_FORMAT_VERSION)
        if version != DESCRIPTOR_FORMAT_VERSION:
            raise DataError(f"unsupported descriptor format_version {version!r}")
        if "slots" not in doc or "model_dim" not in doc:
            raise DataError("descriptor needs 'slots' and 'model_dim' fields")
        return cls(
            slots=[parse_block_key(k) for k in doc["slots"]],
            model_dim=int(doc["model_dim"]),
            estimated_latency_us=doc.get("estimated_latency_us"),
            baseline_latency_us=doc.get("baseline_latency_us"),
            target_ratio=doc.get("target_ratio"),
            seed=doc.get("seed"),
            source=doc.get("source", "manual"),
            alpha_snapshot=doc.get("alpha_snapshot"),
            vocab_size=doc.get("vocab_size"),
            max_seq_len=doc.get("max_seq_len"),
            target_met=doc.get("target_met"),
            notes=doc.get("notes", ""),
        )


def save_descriptor(descriptor: ArchitectureDescriptor, path: str | Path) -> Path:
    path = atomic_write(path, json.dumps(descriptor.to_dict(), indent=2) + "\n")
    logger.info(f"Architecture descriptor written to {path}")
    return path


def load_descriptor(
    path: str | Path, table: LatencyTable | None = None
) -> ArchitectureDescriptor:
    """Read a descriptor; with a ``table`` its latency field is filled or verified."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Descriptor not found: {path}")
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"{path} is not valid JSON: {e}") from None
    descriptor = ArchitectureDescriptor.from_dict(doc)
    if table is not None:
        descriptor.verify(table)
    return descriptor


def sample_architecture(
    network: SearchNetwork,
    table: LatencyTable,
    *,
    target_ratio: float | None = None,
    seed: int | None = None,
) -> ArchitectureDescriptor:
    """Pick the highest-alpha option of every super block (ties go to the lower index)."""
    chosen = [sb.options[int(np.argmax(sb.alpha.data))] for sb in network.super_blocks]
    estimated = architecture_latency(chosen, table)
    baseline = baseline_latency(network.backbone, table)
    target_met = None
    if target_ratio is not None:
        target_met = bool(estimated <= baseline * target_ratio * (1 + LATENCY_RTOL))
        if not target_met:
            logger.warning(
                f"Sampled architecture misses the target: {estimated / baseline:.3f} x baseline "
                f"> {target_ratio}"
            )
    return ArchitectureDescriptor(
        slots=chosen,
        model_dim=network.backbone.model_dim,
        estimated_latency_us=estimated,
        baseline_latency_us=baseline,
        target_ratio=target_ratio,
        seed=seed,
        source="searched",
        alpha_snapshot=[a.tolist() for a in network.alpha_snapshot()],
        vocab_size=network.vocab_size,
        max_seq_len=network.max_seq_len,
        target_met=target_met,
    )


def baseline_descriptor(
    backbone: BackboneSpec, table: LatencyTable | None = None, **fields: Any
) -> ArchitectureDescriptor:
    """Descriptor of the unmodified backbone."""
    descriptor = ArchitectureDescriptor(list(backbone.slots), backbone.model_dim, **fields)
    if table is not None:
        descriptor.verify(table)
        descriptor.baseline_latency_us = descriptor.estimated_latency_us
    return descriptor


# ----------------------------------------------------------------------
# Text rendering
# ----------------------------------------------------------------------

_KIND_LABELS = {
    "skip": "Skip",
    "mha": "Attention",
    "ffl": "Feed-forward",
    "moe": "MoE feed-forward",
}


def render_architecture(descriptor: ArchitectureDescriptor) -> str:
    """Top-to-bottom slot listing, one ``index | key | description`` line per slot."""
    header = f"# model_dim={descriptor.model_dim} slots={len(descriptor.slots)}"
    if descriptor.estimated_latency_us is not None:
        header += f" estimated_us={descriptor.estimated_latency_us:.3f}"
    ratio = descriptor.latency_ratio()
    if ratio is not None:
        header += f" ratio={ratio:.3f}"
    lines = [header]
    for i, spec in enumerate(descriptor.slots):
        label = _KIND_LABELS[spec.kind.value]
        match spec.kind.value:
            case "mha":
                label += f", {spec.heads} head(s)"
            case "ffl":
                label += f", inner {spec.inner_dim}"
            case "moe":
                label += f", inner {spec.inner_dim}, {spec.experts} experts, top-{spec.top_k}"
        lines.append(f"{i:3d} | {spec.key:<24} | {label}")
    return "\n".join(lines) + "\n"


def parse_architecture_rendering(text: str) -> list[BlockSpec]:
    """Inverse of ``render_architecture`` for the slot list."""
    slots: list[tuple[int, BlockSpec]] = []
    for line in text.splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = [p.strip() for p in line.split("|")]
        if len(parts) < 2:
            raise DataError(f"cannot parse architecture line {line!r}")
        slots.append((int(parts[0]), parse_block_key(parts[1])))
    indices = [i for i, _ in slots]
    if indices != list(range(len(slots))):
        raise DataError(f"slot indices must run 0..{len(slots) - 1}, got {indices}")
    return [spec for _, spec in slots]


# ----------------------------------------------------------------------
# Retraining
# ----------------------------------------------------------------------

@dataclass
class Phase2Config:
    epochs: int = 10
    optimizer: OptimizerSettings = field(default_factory=lambda: OptimizerSettings("adam", 3e-3))
    balance_coefficient: float = 1.0
    grad_clip: float = 1.0
    router_jitter: float = 0.0
    dropout: float = 0.1
    moe_dropout: float = 0.2
    seed: int = 0
    progress_bar: bool = False

    def __post_init__(self) -> None:
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerSettings(**self.optimizer)
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.balance_coefficient < 0:
            raise ParameterError(
                f"balance_coefficient must be >= 0, got {self.balance_coefficient}"
            )
        if self.router_jitter < 0:
            raise ParameterError(f"router_jitter must be >= 0, got {self.router_jitter}")


@dataclass
class EvalResult:
    ce: float
    bpc: float
    ppl: float
    tokens: int
    balance_loss: float = 0.0
    max_expert_fraction: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {
            "ce": self.ce,
            "bpc": self.bpc,
            "ppl": self.ppl,
            "tokens": self.tokens,
            "balance_loss": self.balance_loss,
            "max_expert_fraction": self.max_expert_fraction,
        }


@dataclass
class Phase2Result:
    network: FinalNetwork
    metrics: MetricsLog
    routing: MetricsLog
    validation: list[EvalResult] = field(default_factory=list)


def instantiate(
    descriptor: ArchitectureDescriptor,
    seed: int | RngStream = 0,
    *,
    vocab_size: int | None = None,
    max_seq_len: int | None = None,
    dropout: float = 0.0,
    moe_dropout: float | None = None,
    dtype=np.float64,
) -> FinalNetwork:
    """Build the described network with freshly initialized weights.

    ``vocab_size``/``max_seq_len`` default to the values recorded in the descriptor.
    """
    vocab_size = vocab_size or descriptor.vocab_size
    max_seq_len = max_seq_len or descriptor.max_seq_len
    if not vocab_size or not max_seq_len:
        raise SpecError("vocab_size and max_seq_len must be given or recorded in the descriptor")
    rng = seed if isinstance(seed, RngStream) else RngStream(seed, StreamId.INIT, (2,))
    return build_final_network(
        descriptor.slots,
        vocab_size,
        max_seq_len,
        descriptor.model_dim,
        rng,
        dropout=dropout,
        moe_dropout=moe_dropout,
        dtype=dtype,
    )


def _max_fraction(ctx: ForwardContext) -> float:
    return max((s.max_fraction for s in ctx.routing), default=0.0)


def evaluate(network: FinalNetwork, data: BatchIterator) -> EvalResult:
    """Mean cross-entropy over all batches of ``data`` (epoch-0 order), in eval mode."""
    was_training = network.training
    network.eval()
    ce_values, balance_values, fractions = [], [], []
    try:
        with no_grad():
            for inputs, targets in data.epoch_batches(0):
                ctx = ForwardContext()
                logits = network(inputs, ctx)
                ce_values.append(F.cross_entropy(logits, targets).item())
                balance = balance_loss(ctx.routing)
                balance_values.append(balance.loss.item() if balance.has_moe else 0.0)
                fractions.append(_max_fraction(ctx))
    finally:
        network.train(was_training)
    ce = float(np.mean(ce_values))
    return EvalResult(
        ce=ce,
        bpc=ce / math.log(2),
        ppl=math.exp(ce),
        tokens=data.tokens_covered,
        balance_loss=float(np.mean(balance_values)),
        max_expert_fraction=float(np.max(fractions)),
    )


def run_phase2(
    network: FinalNetwork,
    data: BatchIterator,
    cfg: Phase2Config,
    valid: BatchIterator | None = None,
) -> Phase2Result:
    """Train ``network`` on cross-entropy plus ``cfg.balance_coefficient`` times the balance loss.

    Raises:
        NumericAbort: If the loss becomes non-finite.
    """
    streams = RngStreams(cfg.seed)
    optimizer = cfg.optimizer.build(network.parameters())
    metrics = MetricsLog(PHASE2_COLUMNS)
    routing = MetricsLog(ROUTING_COLUMNS)
    result = Phase2Result(network=network, metrics=metrics, routing=routing)
    logger.info(
        f"Phase 2: retraining {'/'.join(network.keys)} for {cfg.epochs} epochs "
        f"(balance coefficient {cfg.balance_coefficient})"
    )

    epochs = range(cfg.epochs)
    iterator = tqdm(epochs, desc="Retrain", unit="epoch") if cfg.progress_bar else epochs
    step = 0
    for epoch in iterator:
        network.train()
        for inputs, targets in data.epoch_batches(epoch):
            network.zero_grad()
            ctx = ForwardContext(
                dropout_rng=streams.dropout,
                routing_rng=streams.routing,
                router_jitter=cfg.router_jitter,
            )
            logits = network(inputs, ctx)
            ce = F.cross_entropy(logits, targets)
            balance = balance_loss(ctx.routing)
            loss = phase2_total_loss(ce, balance, cfg.balance_coefficient)
            if not math.isfinite(loss.item()):
                snapshot = {
                    "epoch": epoch,
                    "step": step,
                    "ce": ce.item(),
                    "balance_loss": balance.loss.item(),
                }
                logger.error(f"Retraining aborted at step {step}: non-finite loss")
                raise NumericAbort(
                    f"non-finite retraining loss at epoch {epoch} step {step}", snapshot
                )
            loss.backward()
            clip_grad_norm(optimizer.params, cfg.grad_clip)
            optimizer.step()

            metrics.append(
                epoch=epoch, step=step, phase="train", ce=ce.item(),
                balance_loss=balance.loss.item() if balance.has_moe else 0.0,
                max_expert_fraction=_max_fraction(ctx),
            )
            for layer, stats in enumerate(ctx.routing):
                for expert in range(stats.experts):
                    routing.append(
                        epoch=epoch, step=step, layer=layer, expert=expert,
                        token_fraction=float(stats.token_fraction[expert]),
                        gate_score=float(stats.mean_gate_score.data[expert]),
                    )
            step += 1

        if valid is not None:
            scores = evaluate(network, valid)
            result.validation.append(scores)
            metrics.append(
                epoch=epoch, step=step, phase="valid", ce=scores.ce,
                balance_loss=scores.balance_loss, max_expert_fraction=scores.max_expert_fraction,
            )
            logger.info(
                f"Epoch {epoch + 1}/{cfg.epochs}: valid CE {scores.ce:.4f} "
                f"(BPC {scores.bpc:.3f}, PPL {scores.ppl:.2f})"
            )
    return result
