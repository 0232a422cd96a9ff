"""
Top-k gate routing for MoE blocks.

The gate is a single bias-free linear layer followed by a softmax over the
experts. Each token is sent to its ``top_k`` most probable experts (ties go to
the lower expert index) and the selected probabilities are renormalized to sum
to one before mixing expert outputs.
"""

from dataclasses import dataclass

import numpy as np

from ..core.errors import DimensionError, ParameterError
from ..core.functional import softmax, topk_indices
from ..core.rng import RngStream
from ..core.tensor import Tensor, take_along_last


@dataclass
class RoutingStats:
    """Per-layer routing summary.

    Attributes:
        token_fraction: F, fraction of tokens sent to each expert. A token is
            counted once per selected expert, so ``F.sum() == top_k``.
        mean_gate_score: G, average gate probability per expert (differentiable).
        tokens_seen: Number of tokens routed.
        top_k: Experts per token.
    """

    token_fraction: np.ndarray
    mean_gate_score: Tensor
    tokens_seen: int
    top_k: int

    @property
    def experts(self) -> int:
        return int(self.token_fraction.shape[0])

    @property
    def max_fraction(self) -> float:
        return float(self.token_fraction.max())

    def check(self, atol: float = 1e-6) -> tuple[bool, str | None]:
        """Verify the F/G invariants; returns ``(is_valid, message)``."""
        F = self.token_fraction
        G = self.mean_gate_score.data
        if F.shape != G.shape:
            return False, f"F shape {F.shape} differs from G shape {G.shape}"
        if abs(F.sum() - self.top_k) > atol:
            return False, f"sum(F) = {F.sum()} but top_k = {self.top_k}"
        if (F < 0).any() or (F > 1 + atol).any():
            return False, "token fractions must lie in [0, 1]"
        if (G < -atol).any() or (G > 1 + atol).any():
            return False, "gate scores must lie in [0, 1]"
        if abs(G.sum() - 1.0) > atol:
            return False, f"sum(G) = {G.sum()}, expected 1"
        return True, None


@dataclass
class GateDecision:
    assignments: np.ndarray
    """(N, top_k) selected expert ids per token, most probable first."""
    probs: Tensor
    """(N, E) gate distribution per token."""
    weights: Tensor
    """(N, top_k) renormalized mixing weights of the selected experts."""
    stats: RoutingStats


def gate_route(
    x_tokens: Tensor,
    gate_weight: Tensor,
    top_k: int,
    *,
    rng: RngStream | None = None,
    jitter: float = 0.0,
    assignments: np.ndarray | None = None,
) -> GateDecision:
    """Route ``N`` token vectors ``(N, D)`` through a ``(D, E)`` gate.

    Args:
        x_tokens: Token vectors (already layer-normed by the caller).
        gate_weight: Gate projection, no bias.
        top_k: Experts per token, ``1 <= top_k <= E``.
        rng: Stream for router jitter; required when ``jitter > 0``.
        jitter: Half-width of uniform noise added to the logits for ranking
            only. Mixing weights always use the noise-free probabilities.
        assignments: Optional fixed ``(N, top_k)`` expert ids (profiling uses
            balanced or collapsed routing this way).
    """
    if x_tokens.ndim != 2 or gate_weight.ndim != 2 or x_tokens.shape[1] != gate_weight.shape[0]:
        raise DimensionError(
            f"gate expects (N, D) tokens and (D, E) weights, got {x_tokens.shape} and "
            f"{gate_weight.shape}"
        )
    n_tokens, n_experts = x_tokens.shape[0], gate_weight.shape[1]
    if not 1 <= top_k <= n_experts:
        raise ParameterError(f"top_k must be in [1, {n_experts}], got {top_k}")

    logits = x_tokens @ gate_weight
    probs = softmax(logits, axis=-1)

    if assignments is None:
        ranking = logits.data
        if jitter > 0:
            if rng is None:
                raise ParameterError("router jitter needs an rng stream")
            ranking = ranking + rng.uniform(ranking.shape) * (2 * jitter) - jitter
        assignments = topk_indices(ranking, top_k)
    else:
        assignments = np.asarray(assignments, dtype=np.int64)
        if assignments.shape != (n_tokens, top_k):
            raise DimensionError(
                f"assignments shape {assignments.shape} should be {(n_tokens, top_k)}"
            )

    if top_k == 1:
        # a single renormalized probability is exactly one
        weights = Tensor(np.ones((n_tokens, 1), dtype=probs.dtype))
    else:
        selected = take_along_last(probs, assignments)
        weights = selected / selected.sum(axis=-1, keepdims=True)

    counts = np.bincount(assignments.reshape(-1), minlength=n_experts)
    fraction = counts / max(n_tokens, 1)
    stats = RoutingStats(
        token_fraction=fraction.astype(np.float64),
        mean_gate_score=probs.mean(axis=0),
        tokens_seen=n_tokens,
        top_k=top_k,
    )
    return GateDecision(assignments=assignments, probs=probs, weights=weights, stats=stats)


def balanced_assignments(n_tokens: int, experts: int, top_k: int) -> np.ndarray:
    """Round-robin routing: every expert receives ``n_tokens * top_k / experts`` tokens (±1)."""
    slots = np.arange(n_tokens)[:, None] * top_k + np.arange(top_k)[None, :]
    return (slots % experts).astype(np.int64)


def collapsed_assignments(n_tokens: int, experts: int, top_k: int) -> np.ndarray:
    """Every token to experts ``0 .. top_k-1``; the worst-case imbalance."""
    if top_k > experts:
        raise ParameterError(f"top_k {top_k} exceeds experts {experts}")
    return np.tile(np.arange(top_k, dtype=np.int64), (n_tokens, 1))
