"""
Neural-network functions on ``Tensor``: softmax family, losses, normalization,
embedding lookup, dropout, causal masking and selection helpers.

Every differentiable function here has an analytic backward that is checked
against central finite differences in the test suite.
"""

import contextlib
from collections.abc import Iterator

import numpy as np

from .errors import DataError, DimensionError, ParameterError
from .rng import RngStream
from .tensor import Tensor, masked_fill, multiply, straight_through, take_along_last

_gumbel_noise_enabled = True


@contextlib.contextmanager
def gumbel_noise_disabled() -> Iterator[None]:
    """Test hook: every ``gumbel_softmax`` call inside sees zero noise."""
    global _gumbel_noise_enabled
    previous = _gumbel_noise_enabled
    _gumbel_noise_enabled = False
    try:
        yield
    finally:
        _gumbel_noise_enabled = previous


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    out = exps / exps.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g: np.ndarray):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor.from_op(out, (x,), backward)


def sample_gumbel(shape: int | tuple[int, ...], rng: RngStream) -> np.ndarray:
    """g = -log(-log(u)), u ~ U(0, 1)."""
    tiny = np.finfo(np.float64).tiny
    u = np.clip(rng.uniform(shape), tiny, 1.0 - np.finfo(np.float64).epsneg)
    return -np.log(-np.log(u))


def one_hot_argmax(values: np.ndarray) -> np.ndarray:
    """One-hot of the argmax along the last axis; ties go to the lower index."""
    index = np.argmax(values, axis=-1)
    return np.eye(values.shape[-1], dtype=values.dtype)[index]


def gumbel_softmax(
    alpha: Tensor,
    temperature: float,
    rng: RngStream | None = None,
    hard: bool = False,
    noise: np.ndarray | None = None,
) -> Tensor:
    """Relaxed categorical sample ``softmax((alpha + g) / T)`` along the last axis.

    Args:
        alpha: Architecture weights (any leading shape; categories on the last axis).
        temperature: Softmax temperature, must be > 0.
        rng: Stream to draw the Gumbel noise from.
        hard: Forward an exact one-hot of the soft sample's argmax; the
            gradient is the soft sample's (straight-through).
        noise: Explicit noise with ``alpha``'s shape; overrides ``rng``.
    """
    if not temperature > 0:
        raise ParameterError(f"gumbel_softmax temperature must be > 0, got {temperature}")
    if noise is None:
        if not _gumbel_noise_enabled:
            noise = np.zeros(alpha.shape)
        elif rng is None:
            raise ParameterError("gumbel_softmax needs an rng stream or explicit noise")
        else:
            noise = sample_gumbel(alpha.shape, rng)
    noise = np.asarray(noise, dtype=alpha.dtype)
    if noise.shape != alpha.shape:
        raise DimensionError(f"noise shape {noise.shape} does not match alpha shape {alpha.shape}")

    soft = softmax((alpha + noise) * (1.0 / temperature), axis=-1)
    if not hard:
        return soft
    return straight_through(soft, one_hot_argmax(soft.data))


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under ``logits`` (tokens, vocab)."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects (tokens, vocab) logits, got {logits.shape}")
    targets = np.asarray(targets).reshape(-1)
    if not np.issubdtype(targets.dtype, np.integer):
        raise DataError(f"targets must be integer token ids, got dtype {targets.dtype}")
    n_tokens, vocab = logits.shape
    if targets.shape[0] != n_tokens:
        raise DimensionError(f"{targets.shape[0]} targets for {n_tokens} logit rows")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        bad = targets[(targets < 0) | (targets >= vocab)][0]
        raise DataError(f"target index {bad} out of range [0, {vocab})")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n_tokens)
    loss = -log_probs[rows, targets].mean()

    def backward(g: np.ndarray):
        grad = np.exp(log_probs)
        grad[rows, targets] -= 1.0
        return (grad * (g / n_tokens),)

    return Tensor.from_op(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def layer_norm(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale by ``weight`` and shift by ``bias``."""
    dim = x.shape[-1]
    if weight.shape != (dim,) or bias.shape != (dim,):
        raise DimensionError(
            f"layer_norm parameters {weight.shape}/{bias.shape} do not match last dim {dim}"
        )
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    rstd = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * rstd
    out = xhat * weight.data + bias.data

    def backward(g: np.ndarray):
        flat_g = g.reshape(-1, dim)
        grad_weight = (flat_g * xhat.reshape(-1, dim)).sum(axis=0)
        grad_bias = flat_g.sum(axis=0)
        dxhat = g * weight.data
        grad_x = rstd * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return grad_x, grad_weight, grad_bias

    return Tensor.from_op(out, (x, weight, bias), backward)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``weight[ids]``; ids may have any shape."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise DataError(f"embedding ids must be integers, got dtype {ids.dtype}")
    vocab = weight.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise DataError(f"embedding id out of range [0, {vocab})")

    def backward(g: np.ndarray):
        grad = np.zeros_like(weight.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return Tensor.from_op(weight.data[ids], (weight,), backward)


def dropout(x: Tensor, p: float, rng: RngStream | None, training: bool) -> Tensor:
    """Inverted dropout; identity in eval mode or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ParameterError("dropout in training mode needs an rng stream")
    keep = (rng.uniform(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return multiply(x, keep)


def causal_mask(scores: Tensor) -> Tensor:
    """Set scores[..., i, j] to -inf for j > i (square last two axes)."""
    rows, cols = scores.shape[-2], scores.shape[-1]
    if rows != cols:
        raise DimensionError(f"causal_mask expects square score matrices, got {scores.shape}")
    future = np.triu(np.ones((rows, cols), dtype=bool), k=1)
    return masked_fill(scores, future, -np.inf)


def argmax(x: Tensor | np.ndarray, axis: int = -1) -> np.ndarray:
    """Index of the maximum; ties go to the lower index. Not differentiable."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    return np.argmax(data, axis=axis)


def topk(x: Tensor, k: int) -> tuple[Tensor, np.ndarray]:
    """The ``k`` largest entries along the last axis, in descending order.

    Ties are broken by the lower index. Returns the selected values (with
    gradient flowing back to the selected positions) and their indices.
    """
    n = x.shape[-1]
    if not 1 <= k <= n:
        raise ParameterError(f"topk k must be in [1, {n}], got {k}")
    indices = topk_indices(x.data, k)
    return take_along_last(x, indices), indices


def topk_indices(values: np.ndarray, k: int) -> np.ndarray:
    # stable sort on the negated values keeps equal entries in index order
    return np.argsort(-values, axis=-1, kind="stable")[..., :k]
