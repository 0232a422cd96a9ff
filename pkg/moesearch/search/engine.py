"""
Phase 1: alternating optimization of network weights and architecture weights.

Each epoch first trains the network weights on every training batch with hard
(one option per slot) Gumbel samples and the cross-entropy loss. After the
warmup epochs it then trains the architecture weights on a fresh random subset
of the batches with soft samples and cross-entropy plus the gated latency
loss, and anneals the Gumbel temperature.
"""

import json
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, TypeVar

import numpy as np
from tqdm import tqdm

from ..blocks.layers import ForwardContext
from ..core import functional as F
from ..core.errors import NumericAbort, ParameterError
from ..core.optim import Optimizer, clip_grad_norm, create_optimizer
from ..core.rng import RngStream, RngStreams
from ..core.tensor import Tensor, no_grad
from ..io.atomic import atomic_write
from ..io.checkpoint import SearchCheckpoint, with_prefix
from ..io.corpus import BatchIterator
from ..io.metrics import PHASE1_COLUMNS, MetricsLog
from .latency import LatencyTable, baseline_latency, estimate_latency, expected_latency
from .losses import LatencyLossConfig, latency_loss, phase1_total_loss
from .supernet import SearchNetwork

logger = logging.getLogger(__name__)

T = TypeVar("T")

CHECKPOINT_NAME = "search_checkpoint.json"
ABORT_SNAPSHOT_NAME = "abort_snapshot.json"


@dataclass
class OptimizerSettings:
    kind: str = "adam"
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.0

    def build(self, params: Sequence[Tensor]) -> Optimizer:
        if self.kind.lower() == "sgd":
            return create_optimizer("sgd", params, self.lr)
        return create_optimizer(
            self.kind, params, self.lr, betas=tuple(self.betas), weight_decay=self.weight_decay
        )


@dataclass
class Phase1Config:
    """Search schedule and optimizer settings for phase one."""

    epochs: int = 10
    arch_data_fraction: float = 0.2
    arch_warmup_fraction: float = 0.1
    initial_temperature: float = 5.0
    temperature_anneal_rate: float = 0.6
    min_temperature: float = 1e-3
    net_optimizer: OptimizerSettings = field(
        default_factory=lambda: OptimizerSettings("adam", 3e-3)
    )
    arch_optimizer: OptimizerSettings = field(
        default_factory=lambda: OptimizerSettings("adam", 0.01)
    )
    target_ratio: float = 0.5
    grad_clip: float = 1.0
    dropout: float = 0.1
    moe_dropout: float = 0.2
    seed: int = 0
    progress_bar: bool = False

    def __post_init__(self) -> None:
        if isinstance(self.net_optimizer, dict):
            self.net_optimizer = OptimizerSettings(**self.net_optimizer)
        if isinstance(self.arch_optimizer, dict):
            self.arch_optimizer = OptimizerSettings(**self.arch_optimizer)
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 < self.arch_data_fraction <= 1:
            raise ParameterError(
                f"arch_data_fraction must be in (0, 1], got {self.arch_data_fraction}"
            )
        if not 0 <= self.arch_warmup_fraction < 1:
            raise ParameterError(
                f"arch_warmup_fraction must be in [0, 1), got {self.arch_warmup_fraction}"
            )
        if not self.initial_temperature > 0:
            raise ParameterError(
                f"initial_temperature must be > 0, got {self.initial_temperature}"
            )
        if not 0 < self.temperature_anneal_rate <= 1:
            raise ParameterError(
                f"temperature_anneal_rate must be in (0, 1], got {self.temperature_anneal_rate}"
            )
        if not self.min_temperature > 0:
            raise ParameterError(f"min_temperature must be > 0, got {self.min_temperature}")
        if not 0 < self.target_ratio <= 1:
            raise ParameterError(f"target_ratio must be in (0, 1], got {self.target_ratio}")

    @property
    def warmup_epochs(self) -> int:
        """Whole epochs without architecture steps (rounded up)."""
        return math.ceil(self.arch_warmup_fraction * self.epochs - 1e-9)

    def temperature_at(self, epoch: int) -> float:
        """Temperature used during ``epoch`` (0-based)."""
        temperature = self.initial_temperature
        for _ in range(max(0, epoch - self.warmup_epochs)):
            temperature = anneal_temperature(
                temperature, self.temperature_anneal_rate, self.min_temperature
            )
        return temperature


@dataclass
class Phase1State:
    epoch: int = 0
    step: int = 0
    temperature: float = 5.0
    alpha_history: list[list[np.ndarray]] = field(default_factory=list)
    selection_history: list[list[np.ndarray]] = field(default_factory=list)
    metrics: MetricsLog = field(default_factory=lambda: MetricsLog(PHASE1_COLUMNS))
    streams: RngStreams | None = None


@dataclass
class Phase1Result:
    network: SearchNetwork
    state: Phase1State
    baseline_us: float
    final_estimate_us: float

    @property
    def alpha(self) -> list[np.ndarray]:
        return self.network.alpha_snapshot()


def anneal_temperature(temperature: float, rate: float, floor: float = 1e-3) -> float:
    """One annealing step ``T * rate``, never below ``floor``."""
    return max(temperature * rate, floor)


def subset_indices(n: int, fraction: float, rng: RngStream) -> np.ndarray:
    """``max(1, floor(fraction * n))`` distinct indices in ascending order."""
    if not 0 < fraction <= 1:
        raise ParameterError(f"fraction must be in (0, 1], got {fraction}")
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    count = max(1, math.floor(fraction * n + 1e-9))
    return np.sort(rng.choice(n, count, replace=False))


def select_arch_subset(data: Sequence[T], fraction: float, rng: RngStream) -> list[T]:
    """Uniformly random subset of ``data`` without replacement."""
    return [data[int(i)] for i in subset_indices(len(data), fraction, rng)]


def _check_finite(value: float, what: str, snapshot: dict[str, Any]) -> None:
    if not math.isfinite(value):
        raise NumericAbort(
            f"non-finite {what} ({value}) at epoch {snapshot.get('epoch')} "
            f"step {snapshot.get('step')}",
            snapshot,
        )


def _snapshot(
    network: SearchNetwork, epoch: int, step: int, phase: str, temperature: float, **values: Any
) -> dict[str, Any]:
    return {
        "epoch": epoch,
        "step": step,
        "phase": phase,
        "temperature": temperature,
        "alpha": [a.tolist() for a in network.alpha_snapshot()],
        **{k: float(v) for k, v in values.items()},
    }


def save_checkpoint(
    path: Path,
    network: SearchNetwork,
    state: Phase1State,
    net_opt: Optimizer,
    arch_opt: Optimizer,
    cfg: Phase1Config,
) -> Path:
    arrays = {
        **with_prefix("net", network.state_dict()),
        **with_prefix("opt_net", net_opt.state_dict()),
        **with_prefix("opt_arch", arch_opt.state_dict()),
    }
    checkpoint = SearchCheckpoint(
        epoch=state.epoch,
        temperature=state.temperature,
        alpha=[a.tolist() for a in network.alpha_snapshot()],
        option_keys=network.option_keys(),
        rng_state=state.streams.get_state() if state.streams else {},
        arrays=arrays,
        metadata={
            "seed": cfg.seed,
            "target_ratio": cfg.target_ratio,
            "epochs": cfg.epochs,
            "step": state.step,
        },
    )
    return checkpoint.save(path)


def restore_checkpoint(
    path: str | Path,
    network: SearchNetwork,
    state: Phase1State,
    net_opt: Optimizer,
    arch_opt: Optimizer,
) -> None:
    checkpoint = SearchCheckpoint.load(path)
    if checkpoint.option_keys != network.option_keys():
        raise ParameterError(
            f"checkpoint {path} was written for a different search space"
        )
    network.set_alpha(np.asarray(a) for a in checkpoint.alpha)
    weights = checkpoint.prefixed("net")
    if weights:
        network.load_state_dict(weights)
    net_opt.load_state_dict(checkpoint.prefixed("opt_net"))
    arch_opt.load_state_dict(checkpoint.prefixed("opt_arch"))
    state.epoch = checkpoint.epoch
    state.step = int(checkpoint.metadata.get("step", 0))
    state.temperature = checkpoint.temperature
    if state.streams is not None and checkpoint.rng_state:
        state.streams.set_state(checkpoint.rng_state)
    logger.info(f"Resumed search from {path} at epoch {state.epoch}")


def run_phase1(
    network: SearchNetwork,
    table: LatencyTable,
    cfg: Phase1Config,
    data: BatchIterator,
    *,
    checkpoint_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
) -> Phase1Result:
    """Search architecture weights under the latency budget ``cfg.target_ratio``.

    Raises:
        CoverageError: If ``table`` lacks an option or backbone key.
        NumericAbort: If a loss becomes non-finite; the snapshot is also
            written to ``checkpoint_dir`` when given.
    """
    keys = network.option_keys()
    table.require((k for slot in keys for k in slot), "search space")
    baseline_us = baseline_latency(network.backbone, table)
    loss_cfg = LatencyLossConfig(cfg.target_ratio, baseline_us)

    streams = RngStreams(cfg.seed)
    state = Phase1State(temperature=cfg.initial_temperature, streams=streams)
    net_opt = cfg.net_optimizer.build(network.network_parameters())
    arch_opt = cfg.arch_optimizer.build(network.architecture_parameters())
    if resume_from is not None:
        restore_checkpoint(resume_from, network, state, net_opt, arch_opt)

    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    warmup = cfg.warmup_epochs
    logger.info(
        f"Phase 1: {cfg.epochs} epochs ({warmup} warmup), {len(data)} batches/epoch, "
        f"baseline {baseline_us:.1f} us, budget {loss_cfg.budget_us:.1f} us"
    )

    epochs = range(state.epoch, cfg.epochs)
    iterator = tqdm(epochs, desc="Search", unit="epoch") if cfg.progress_bar else epochs
    try:
        for epoch in iterator:
            batches = data.epoch_batches(epoch)
            network.train()
            network.reset_selection_counts()

            # network weights: every batch, hard samples, CE only
            for inputs, targets in batches:
                network.zero_grad()
                with no_grad():
                    probs = network.sample_probabilities(
                        state.temperature, "hard", rng=streams.gumbel
                    )
                ctx = ForwardContext(dropout_rng=streams.dropout, routing_rng=streams.routing)
                logits = network(inputs, ctx, probs=probs, mode="hard")
                ce = F.cross_entropy(logits, targets)
                _check_finite(
                    ce.item(), "cross-entropy",
                    _snapshot(network, epoch, state.step, "net", state.temperature, ce=ce.item()),
                )
                ce.backward()
                clip_grad_norm(net_opt.params, cfg.grad_clip)
                net_opt.step()

                with no_grad():
                    estimate = estimate_latency(network, table, temperature=state.temperature)
                state.metrics.append(
                    epoch=epoch, step=state.step, phase="net", ce=ce.item(),
                    lat_loss=estimate.value / loss_cfg.budget_us, beta=0,
                    estimated_us=estimate.value, temperature=state.temperature,
                )
                state.step += 1

            # architecture weights: random subset, soft samples, CE + gated latency
            if epoch >= warmup:
                subset = select_arch_subset(
                    batches, cfg.arch_data_fraction, streams.subset.derive(epoch)
                )
                for inputs, targets in subset:
                    network.zero_grad()
                    probs = network.sample_probabilities(
                        state.temperature, "soft", rng=streams.gumbel
                    )
                    ctx = ForwardContext(dropout_rng=streams.dropout, routing_rng=streams.routing)
                    logits = network(inputs, ctx, probs=probs, mode="soft")
                    ce = F.cross_entropy(logits, targets)
                    estimate = expected_latency(keys, probs, table)
                    lat = latency_loss(estimate, loss_cfg)
                    total = phase1_total_loss(ce, lat)
                    _check_finite(
                        total.item(), "search loss",
                        _snapshot(network, epoch, state.step, "arch", state.temperature,
                                  ce=ce.item(), lat_loss=lat.ratio),
                    )
                    total.backward()
                    clip_grad_norm(arch_opt.params, cfg.grad_clip)
                    arch_opt.step()
                    state.metrics.append(
                        epoch=epoch, step=state.step, phase="arch", ce=ce.item(),
                        lat_loss=lat.ratio, beta=lat.beta, estimated_us=estimate.value,
                        temperature=state.temperature,
                    )
                    state.step += 1

            state.alpha_history.append(network.alpha_snapshot())
            state.selection_history.append(
                [sb.selection_frequencies() for sb in network.super_blocks]
            )
            state.epoch = epoch + 1
            if epoch >= warmup:
                state.temperature = anneal_temperature(
                    state.temperature, cfg.temperature_anneal_rate, cfg.min_temperature
                )
            with no_grad():
                current = estimate_latency(network, table, temperature=state.temperature).value
            logger.info(
                f"Epoch {epoch + 1}/{cfg.epochs}: estimated {current:.1f} us "
                f"({current / baseline_us:.3f} x baseline), T={state.temperature:.4g}"
            )
            if checkpoint_dir is not None:
                save_checkpoint(
                    checkpoint_dir / CHECKPOINT_NAME, network, state, net_opt, arch_opt, cfg
                )
    except NumericAbort as e:
        logger.error(f"Search aborted: {e}")
        if checkpoint_dir is not None:
            atomic_write(checkpoint_dir / ABORT_SNAPSHOT_NAME, json.dumps(e.snapshot, indent=2))
        raise

    with no_grad():
        final = estimate_latency(network, table, temperature=state.temperature).value
    return Phase1Result(
        network=network, state=state, baseline_us=baseline_us, final_estimate_us=final
    )
