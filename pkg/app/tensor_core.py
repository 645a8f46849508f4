"""
Minimal reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array. Operations record themselves on the active
Tape (a thread-local context manager) whenever one of their inputs requires
a gradient; with no tape active the forward pass is gradient-free.

    with Tape() as tape:
        loss = tc.mean(tc.square(model(x) - y))
    tape.backward(loss)

Broadcasting is restricted to the trailing-dimension and scalar cases.
Reshape, transpose and broadcast_to are explicit operations.
"""

import math
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from errors import ContractError, DimensionError, DomainError

# tanh approximation of GELU
GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715

LN_EPS = 1e-5

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """
    n-dimensional float64 array with optional gradient tape participation.

    Args:
        data: anything numpy can turn into an array
        requires_grad (bool): accumulate a gradient for this tensor on backward
        name (str): optional label used in diagnostics
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, copy: bool = True):
        arr = np.array(data, dtype=np.float64, copy=copy) if copy else np.asarray(data, dtype=np.float64)
        if any(extent < 1 for extent in arr.shape):
            raise DimensionError(f"Tensor extents must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class TapeEntry:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """
    Ordered record of differentiable operations.

    Entries are appended in execution order, so every entry's inputs were
    produced before it. One backward traversal populates the gradient of
    every requires_grad leaf reachable from the loss.
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []
        self._outputs: set[int] = set()

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, entry: TapeEntry) -> None:
        self.entries.append(entry)
        self._outputs.add(id(entry.output))
        entry.output._tape = self

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._outputs:
            if loss.requires_grad:
                _accumulate(loss, np.ones_like(loss.data))
                return
            raise ContractError("loss is not recorded on this tape")

        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, tuple[Tensor, np.ndarray]] = {}
        for entry in reversed(self.entries):
            grad_out = pending.pop(id(entry.output), None)
            if grad_out is None:
                continue
            for tensor, grad_in in zip(entry.inputs, entry.backward(grad_out)):
                if grad_in is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in self._outputs:
                    pending[key] = pending[key] + grad_in if key in pending else grad_in
                elif key in leaves:
                    leaves[key] = (tensor, leaves[key][1] + grad_in)
                else:
                    leaves[key] = (tensor, grad_in)
        for tensor, grad in leaves.values():
            _accumulate(tensor, grad)


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    grad = np.asarray(grad, dtype=np.float64).reshape(tensor.shape)
    tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad


def backward(loss: Tensor) -> None:
    """Backpropagate a scalar loss through the tape that produced it."""
    if loss._tape is not None:
        loss._tape.backward(loss)
        return
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not recorded on any tape")
    _accumulate(loss, np.ones_like(loss.data))


def _make(data: np.ndarray, inputs: Iterable[Tensor], op: str, rule) -> Tensor:
    inputs = tuple(inputs)
    out = Tensor(data, copy=False)
    if any(t.requires_grad for t in inputs):
        tape = active_tape()
        if tape is not None:
            out.requires_grad = True
            tape.record(TapeEntry(op, inputs, out, rule))
    return out


def _broadcast_shape(a: tuple, b: tuple, op: str) -> tuple:
    if a == b:
        return a
    if int(np.prod(a)) == 1 and len(a) <= len(b):
        return b
    if int(np.prod(b)) == 1 and len(b) <= len(a):
        return a
    if len(a) >= len(b) and a[len(a) - len(b):] == b:
        return a
    if len(b) > len(a) and b[len(b) - len(a):] == a:
        return b
    raise DimensionError(f"{op}: shapes {a} and {b} are not broadcast-compatible")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------- binary ops

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")
    return _make(a.data + b.data, (a, b), "add",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "sub")
    return _make(a.data - b.data, (a, b), "sub",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")
    return _make(a.data * b.data, (a, b), "mul",
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def matmul(a, b) -> Tensor:
    """(..., m, k) x (k, n) or (..., m, k) x (..., k, n) with equal batch dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise DimensionError(f"matmul batch mismatch: {a.shape} x {b.shape}")

    def rule(g):
        grad_a = grad_b = None
        if a.requires_grad:
            grad_a = g @ np.swapaxes(b.data, -1, -2)
        if b.requires_grad:
            if b.ndim == 2:
                k, n = b.shape
                grad_b = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                grad_b = np.swapaxes(a.data, -1, -2) @ g
        return grad_a, grad_b

    return _make(a.data @ b.data, (a, b), "matmul", rule)


# ----------------------------------------------------------------- unary ops

def neg(x: Tensor) -> Tensor:
    return _make(-x.data, (x,), "neg", lambda g: (-g,))


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _make(x.data * factor, (x,), "scale", lambda g: (g * factor,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), "relu", lambda g: (g * mask,))


def gelu(x: Tensor) -> Tensor:
    u = x.data
    t = np.tanh(GELU_C * (u + GELU_A * u ** 3))
    out = 0.5 * u * (1.0 + t)

    def rule(g):
        du = 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
        return (g * du,)

    return _make(out, (x,), "gelu", rule)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), "exp", lambda g: (g * out,))


def ln1p(x: Tensor) -> Tensor:
    if np.any(x.data <= -1.0):
        raise DomainError("ln1p is undefined for inputs <= -1")
    return _make(np.log1p(x.data), (x,), "ln1p", lambda g: (g / (1.0 + x.data),))


def absolute(x: Tensor) -> Tensor:
    return _make(np.abs(x.data), (x,), "abs", lambda g: (g * np.sign(x.data),))


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), "square", lambda g: (2.0 * x.data * g,))


def softmax_lastdim(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (x,), "softmax", rule)


_ELEMENTWISE = {
    "add": add,
    "mul": mul,
    "sub": sub,
    "relu": relu,
    "gelu": gelu,
    "exp": exp,
    "ln1p": ln1p,
    "softmax_lastdim": softmax_lastdim,
}


def elementwise(op: str, *inputs) -> Tensor:
    """Dispatch one of the named pointwise operations."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"Unknown elementwise op '{op}'") from None
    return fn(*inputs)


# ------------------------------------------------------------ normalisation

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    d = x.shape[-1]
    if d == 0 or gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: input {x.shape} does not match gamma {gamma.shape} / beta {beta.shape}")
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def rule(g):
        grad_x = grad_gamma = grad_beta = None
        if x.requires_grad:
            dxhat = g * gamma.data
            grad_x = inv_std * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        if gamma.requires_grad:
            grad_gamma = (g * xhat).reshape(-1, d).sum(axis=0)
        if beta.requires_grad:
            grad_beta = g.reshape(-1, d).sum(axis=0)
        return grad_x, grad_gamma, grad_beta

    return _make(out, (x, gamma, beta), "layer_norm", rule)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make(x.data * keep, (x,), "dropout", lambda g: (g * keep,))


# ------------------------------------------------------------- reductions

def sum_(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), "sum", rule)


def mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else x.shape[axis]
    return scale(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


# ------------------------------------------------------------ structural ops

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return _make(x.data.reshape(shape), (x,), "reshape", lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), "transpose", lambda g: (np.transpose(g, inverse),))


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise DimensionError(f"broadcast_to: cannot expand {x.shape} to {shape}") from None
    return _make(out, (x,), "broadcast_to", lambda g: (_unbroadcast(g, x.shape),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise DimensionError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, "concat", rule)


def take(x: Tensor, index: int, axis: int) -> Tensor:
    """Select one position along an axis, dropping that axis."""
    out = np.take(x.data, index, axis=axis)

    def rule(g):
        grad = np.zeros_like(x.data)
        slicer = [slice(None)] * x.ndim
        slicer[axis] = index
        grad[tuple(slicer)] = g
        return (grad,)

    return _make(out, (x,), "take", rule)


def take_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Embedding lookup; the gradient touches only the looked-up rows."""
    indices = np.asarray(indices, dtype=np.int64)

    def rule(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, indices, g)
        return (grad,)

    return _make(table.data[indices], (table,), "take_rows", rule)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ W (+ b) over the last axis."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)
