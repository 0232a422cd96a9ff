"""
Loss terms: the gated latency loss used during architecture steps and the
expert balance loss used during retraining, plus their per-phase composition.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from ..blocks.routing import RoutingStats
from ..core.errors import DimensionError, ParameterError
from ..core.tensor import Tensor, stack
from .latency import LatencyEstimate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LatencyLossConfig:
    """Latency budget: ``baseline_us * target_ratio``."""

    target_ratio: float
    baseline_us: float

    def __post_init__(self) -> None:
        if not 0 < self.target_ratio <= 1:
            raise ParameterError(f"target_ratio must be in (0, 1], got {self.target_ratio}")
        if not self.baseline_us > 0:
            raise ParameterError(f"baseline latency must be > 0, got {self.baseline_us}")

    @property
    def budget_us(self) -> float:
        return self.baseline_us * self.target_ratio


@dataclass
class LatencyLoss:
    term: Tensor
    """``beta * ratio``; a zero constant when beta is 0."""
    ratio: float
    """Estimated latency over the budget."""
    beta: int


def latency_loss(estimated: LatencyEstimate | Tensor, cfg: LatencyLossConfig) -> LatencyLoss:
    """Estimated latency relative to the budget, active only while it exceeds 1.

    ``beta`` is 1 iff the ratio is strictly greater than 1. Below or at the
    budget the returned term is a constant zero and carries no gradient.
    """
    total = estimated.total_us if isinstance(estimated, LatencyEstimate) else estimated
    ratio_tensor = total * (1.0 / cfg.budget_us)
    ratio = ratio_tensor.item()
    beta = 1 if ratio > 1.0 else 0
    if beta:
        return LatencyLoss(term=ratio_tensor, ratio=ratio, beta=1)
    return LatencyLoss(term=Tensor(np.zeros((), dtype=total.dtype)), ratio=ratio, beta=0)


@dataclass
class BalanceLoss:
    loss: Tensor
    per_layer: list[float]
    has_moe: bool


def layer_balance_loss(stats: RoutingStats) -> Tensor:
    """``E * sum_e F_e * G_e`` for one layer; F is a constant count, G carries gradient."""
    F = np.asarray(stats.token_fraction)
    G = stats.mean_gate_score
    if F.shape != G.shape:
        raise DimensionError(f"token fractions {F.shape} and gate scores {G.shape} differ")
    return (G * F).sum() * float(stats.experts)


def balance_loss(stats_list: Sequence[RoutingStats]) -> BalanceLoss:
    """Mean of the per-layer balance losses; zero with ``has_moe=False`` when empty."""
    if not stats_list:
        return BalanceLoss(loss=Tensor(np.zeros(())), per_layer=[], has_moe=False)
    layers = [layer_balance_loss(s) for s in stats_list]
    loss = stack(layers).mean()
    return BalanceLoss(loss=loss, per_layer=[t.item() for t in layers], has_moe=True)


def phase1_total_loss(ce: Tensor, latency_term: Tensor | LatencyLoss | None = None) -> Tensor:
    """Cross-entropy plus the gated latency term (CE alone for network-weight steps)."""
    if latency_term is None:
        return ce
    term = latency_term.term if isinstance(latency_term, LatencyLoss) else latency_term
    return ce + term


def phase2_total_loss(
    ce: Tensor, balance: BalanceLoss | Tensor | None = None, coefficient: float = 1.0
) -> Tensor:
    """Cross-entropy plus ``coefficient`` times the balance loss.

    Without MoE layers (or with a zero coefficient) the result is ``ce`` itself.
    """
    if balance is None or coefficient == 0:
        return ce
    if isinstance(balance, BalanceLoss):
        if not balance.has_moe:
            return ce
        balance = balance.loss
    if coefficient == 1.0:
        return ce + balance
    return ce + balance * coefficient
