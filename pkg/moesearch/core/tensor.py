"""
Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps an ``np.ndarray`` and, when gradients are enabled and any
input requires them, records the parents it was computed from together with a
backward function that maps the output gradient onto parent gradients.
``Tensor.backward()`` replays that graph in reverse topological order.

Only the operations the blocks and losses need are provided here; the
neural-network functions (softmax, layer norm, ...) live in
``moesearch.core.functional``.
"""

import contextlib
from collections.abc import Callable, Iterator, Sequence
from typing import Any

import numpy as np

from .errors import DimensionError

DEFAULT_DTYPE = np.float64

_grad_enabled = True

BackwardFn = Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph construction inside the block (profiling, evaluation)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Dense n-dimensional float array with optional gradient tracking.

    Attributes:
        data: The underlying array (float64 unless created from float32 data).
        grad: Accumulated gradient, same shape as ``data``; ``None`` until a
            backward pass reaches this tensor.
        requires_grad: Whether gradients should be accumulated for this tensor.
        name: Optional label used in diagnostics and state dicts.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")
    # Make ndarray <op> Tensor dispatch to Tensor's reflected operators.
    __array_priority__ = 1000

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: str | None = None,
        dtype: Any = None,
    ):
        array = np.asarray(data, dtype=dtype)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = array
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    # ------------------------------------------------------------------
    # Basic properties
    # ------------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __len__(self) -> int:
        return len(self.data)

    # ------------------------------------------------------------------
    # Graph construction
    # ------------------------------------------------------------------

    @staticmethod
    def from_op(data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        """Create the output of an operation, linking it to ``parents`` when needed."""
        requires = _grad_enabled and any(p.requires_grad for p in parents)
        out = Tensor(data)
        if requires:
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        if grad.shape != self.data.shape:
            raise DimensionError(
                f"gradient shape {grad.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad

    def _topological_order(self) -> list["Tensor"]:
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self, grad: np.ndarray | float | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable tensor with ``requires_grad``."""
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not require grad")
        if grad is None:
            seed = np.ones_like(self.data)
        else:
            seed = np.broadcast_to(np.asarray(grad, dtype=self.data.dtype), self.data.shape)
        order = self._topological_order()
        self._accumulate(seed)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, parent_grad in zip(node._parents, parent_grads, strict=True):
                if parent_grad is not None and parent.requires_grad:
                    parent._accumulate(parent_grad)

    # ------------------------------------------------------------------
    # Arithmetic
    # ------------------------------------------------------------------

    def __add__(self, other: Any) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        return add(as_tensor(other, self.dtype), self)

    def __sub__(self, other: Any) -> "Tensor":
        return subtract(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        return subtract(as_tensor(other, self.dtype), self)

    def __mul__(self, other: Any) -> "Tensor":
        return multiply(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        return multiply(as_tensor(other, self.dtype), self)

    def __truediv__(self, other: Any) -> "Tensor":
        return divide(self, other)

    def __rtruediv__(self, other: Any) -> "Tensor":
        return divide(as_tensor(other, self.dtype), self)

    def __neg__(self) -> "Tensor":
        return multiply(self, -1.0)

    def __pow__(self, exponent: float) -> "Tensor":
        return power(self, exponent)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index: Any) -> "Tensor":
        return getitem(self, index)

    # ------------------------------------------------------------------
    # Shape and reductions
    # ------------------------------------------------------------------

    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(value: Any, dtype: Any = None) -> Tensor:
    """Wrap ``value`` as a constant tensor unless it already is one."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype if dtype is not None else DEFAULT_DTYPE)


def parameter(data: Any, name: str | None = None, dtype: Any = None) -> Tensor:
    """Create a trainable leaf tensor."""
    return Tensor(data, requires_grad=True, name=name, dtype=dtype)


# ----------------------------------------------------------------------
# Elementwise binary operations (numpy broadcasting)
# ----------------------------------------------------------------------

def _binary_operands(a: Any, b: Any) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a.dtype)
    b = as_tensor(b)
    return as_tensor(a, b.dtype), b


def add(a: Any, b: Any) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(a.data + b.data, (a, b), backward)


def subtract(a: Any, b: Any) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor.from_op(a.data - b.data, (a, b), backward)


def multiply(a: Any, b: Any) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g: np.ndarray):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor.from_op(a.data * b.data, (a, b), backward)


def divide(a: Any, b: Any) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g: np.ndarray):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return Tensor.from_op(a.data / b.data, (a, b), backward)


def power(x: Tensor, exponent: float) -> Tensor:
    def backward(g: np.ndarray):
        return (g * exponent * x.data ** (exponent - 1),)

    return Tensor.from_op(x.data**exponent, (x,), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def backward(g: np.ndarray):
        return (g * out,)

    return Tensor.from_op(out, (x,), backward)


def log(x: Tensor) -> Tensor:
    def backward(g: np.ndarray):
        return (g / x.data,)

    return Tensor.from_op(np.log(x.data), (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g: np.ndarray):
        return (g * mask,)

    return Tensor.from_op(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), backward)


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is True with the constant ``value``."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)

    def backward(g: np.ndarray):
        return (np.where(mask, 0.0, g),)

    return Tensor.from_op(np.where(mask, value, x.data).astype(x.dtype), (x,), backward)


# ----------------------------------------------------------------------
# Linear algebra
# ----------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, batching over leading axes."""
    a, b = _binary_operands(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul needs operands with at least 2 dims, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions differ: {a.shape} @ {b.shape}"
        )
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as e:
        raise DimensionError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}") from e

    def backward(g: np.ndarray):
        grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return Tensor.from_op(out, (a, b), backward)


# ----------------------------------------------------------------------
# Reductions
# ----------------------------------------------------------------------

def _normalize_axes(axis: int | tuple[int, ...] | None, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tensor_sum(
    x: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False
) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)

    def backward(g: np.ndarray):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return Tensor.from_op(
        np.asarray(x.data.sum(axis=axes, keepdims=keepdims)), (x,), backward
    )


def tensor_mean(
    x: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False
) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return tensor_sum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


# ----------------------------------------------------------------------
# Shape manipulation and indexing
# ----------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as e:
        raise DimensionError(f"cannot reshape {x.shape} into {tuple(shape)}") from e

    def backward(g: np.ndarray):
        return (g.reshape(x.shape),)

    return Tensor.from_op(out, (x,), backward)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g: np.ndarray):
        return (g.transpose(inverse),)

    return Tensor.from_op(x.data.transpose(axes), (x,), backward)


def swapaxes(x: Tensor, axis1: int, axis2: int) -> Tensor:
    axes = list(range(x.ndim))
    axes[axis1], axes[axis2] = axes[axis2], axes[axis1]
    return transpose(x, axes)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis
        ):
            raise DimensionError(
                f"concat shapes disagree off axis {axis}: {tensors[0].shape} vs {t.shape}"
            )
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray):
        return tuple(np.split(g, offsets, axis=axis))

    return Tensor.from_op(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward
    )


def getitem(x: Tensor, index: Any) -> Tensor:
    """Basic and integer-array indexing; repeated indices accumulate gradient."""
    if isinstance(index, Tensor):
        raise TypeError("index with numpy arrays or slices, not Tensors")

    def backward(g: np.ndarray):
        grad = np.zeros_like(x.data)
        np.add.at(grad, index, g)
        return (grad,)

    return Tensor.from_op(np.asarray(x.data[index]), (x,), backward)


def take_along_last(x: Tensor, indices: np.ndarray) -> Tensor:
    """``np.take_along_axis(x, indices, axis=-1)`` with gradient scatter."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.shape[:-1] != x.shape[:-1]:
        raise DimensionError(
            f"index leading shape {indices.shape[:-1]} must equal "
            f"tensor leading shape {x.shape[:-1]}"
        )
    leading = tuple(np.indices(indices.shape)[:-1])

    def backward(g: np.ndarray):
        grad = np.zeros_like(x.data)
        np.add.at(grad, (*leading, indices), g)
        return (grad,)

    return Tensor.from_op(np.take_along_axis(x.data, indices, axis=-1), (x,), backward)


def scatter_rows(values: Tensor, rows: np.ndarray, num_rows: int) -> Tensor:
    """Place the rows of ``values`` at ``rows`` of a zero (num_rows, ...) tensor."""
    rows = np.asarray(rows, dtype=np.int64)
    if values.shape[0] != rows.shape[0]:
        raise DimensionError(
            f"scatter_rows got {values.shape[0]} value rows for {rows.shape[0]} row indices"
        )
    out = np.zeros((num_rows, *values.shape[1:]), dtype=values.dtype)
    np.add.at(out, rows, values.data)

    def backward(g: np.ndarray):
        return (g[rows],)

    return Tensor.from_op(out, (values,), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = [reshape(t, np.expand_dims(t.data, axis).shape) for t in tensors]
    return concat(expanded, axis=axis)


def straight_through(soft: Tensor, hard: np.ndarray) -> Tensor:
    """Forward ``hard`` exactly while routing the gradient to ``soft`` unchanged."""
    hard = np.asarray(hard, dtype=soft.dtype)
    if hard.shape != soft.shape:
        raise DimensionError(f"straight_through shapes differ: {soft.shape} vs {hard.shape}")

    def backward(g: np.ndarray):
        return (g,)

    return Tensor.from_op(hard, (soft,), backward)
