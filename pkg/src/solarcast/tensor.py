"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation builds a node that remembers its parents and a local
gradient rule. :func:`backward` orders the reachable graph topologically
(the :class:`Tape`) and replays it in reverse, accumulating gradients on
fan-out. Broadcasting is limited to two cases: a 1-D bias added across the
rows of a 2-D operand, and a shape-``()`` scalar combined with anything.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, DomainError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """An immutable n-d array that may take part in gradient computation.

    Parameters
    ----------
    data : array-like
        Converted to a float64 ndarray (copied if it is not already one).
    requires_grad : bool, default=False
        Leaf tensors with ``requires_grad=True`` receive gradients in
        :attr:`grad` after :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------------------
# binary elementwise ops


def _broadcast_kind(a: Tensor, b: Tensor, op: str) -> str:
    if a.shape == b.shape:
        return "same"
    if b.ndim == 0:
        return "scalar_b"
    if a.ndim == 0:
        return "scalar_a"
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return "bias_b"
    if b.ndim == 2 and a.ndim == 1 and b.shape[1] == a.shape[0]:
        return "bias_a"
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce(grad: np.ndarray, kind: str, side: str) -> np.ndarray:
    if kind == "same":
        return grad
    if kind == f"scalar_{side}":
        return np.asarray(grad.sum())
    if kind == f"bias_{side}":
        return grad.sum(axis=0)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    kind = _broadcast_kind(a, b, "add")

    def backward(g):
        return _reduce(g, kind, "a"), _reduce(g, kind, "b")

    return _node(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    kind = _broadcast_kind(a, b, "sub")

    def backward(g):
        return _reduce(g, kind, "a"), _reduce(-g, kind, "b")

    return _node(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    kind = _broadcast_kind(a, b, "mul")

    def backward(g):
        return _reduce(g * b.data, kind, "a"), _reduce(g * a.data, kind, "b")

    return _node(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    kind = _broadcast_kind(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    out = a.data / b.data

    def backward(g):
        return _reduce(g / b.data, kind, "a"), _reduce(-g * out / b.data, kind, "b")

    return _node(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# unary elementwise ops


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus_np(x: np.ndarray) -> np.ndarray:
    """Overflow-safe ``log(1 + exp(x))``."""
    x = np.asarray(x, dtype=np.float64)
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def inverse_softplus_np(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise DomainError("inverse softplus needs positive values")
    # log(expm1(y)) without overflow for large y
    return y + np.log(-np.expm1(-y))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = softplus_np(a.data)
    return _node(out, (a,), lambda g: (g * expit(a.data),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError(f"log: non-positive input (min {a.data.min():.6g})")
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# structural ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, (a, b), backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return _node(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from exc
    return _node(out, (a,), lambda g: (g.reshape(a.shape),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g) if _is_fancy(index) else full.__setitem__(index, g)
        return (full,)

    return _node(np.array(out), (a,), backward)


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes} on axis {axis}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tensors, backward)


def tensor_sum(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis))

    def backward(g):
        if axis is None:
            return (np.full(a.shape, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _node(out, (a,), backward)


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(tensor_sum(a, axis), 1.0 / n)


def lstm_step(x, hc, W, U, b) -> Tensor:
    """Fused LSTM step on a packed state ``hc = [h, c]`` of shape (B, 2H).

    Equivalent to the gate-by-gate composition in
    :func:`solarcast.layers.lstm_cell_forward` but records a single node.
    """
    x, hc, W, U, b = (as_tensor(t) for t in (x, hc, W, U, b))
    H = U.shape[1]
    if W.shape[0] != 4 * H or x.shape[1] != W.shape[1] or hc.shape != (x.shape[0], 2 * H):
        raise ShapeError(f"lstm_step: x {x.shape}, hc {hc.shape}, W {W.shape}, U {U.shape}")
    h, c = hc.data[:, :H], hc.data[:, H:]
    z = x.data @ W.data.T + h @ U.data.T + b.data
    i = expit(z[:, :H])
    f = expit(z[:, H:2 * H])
    g = np.tanh(z[:, 2 * H:3 * H])
    o = expit(z[:, 3 * H:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    out = np.concatenate([o * tc, c_new], axis=1)

    def backward(grad):
        gh, gc = grad[:, :H], grad[:, H:]
        dc_new = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc_new * g * i * (1.0 - i),
            dc_new * c * f * (1.0 - f),
            dc_new * i * (1.0 - g * g),
            gh * tc * o * (1.0 - o),
        ], axis=1)
        dhc = np.concatenate([dz @ U.data, dc_new * f], axis=1)
        return dz @ W.data, dhc, dz.T @ x.data, dz.T @ h, dz.sum(axis=0)

    return _node(out, (x, hc, W, U, b), backward)


def elementwise(op: str, *args) -> Tensor:
    """Dispatch an elementwise primitive by name."""
    table = {
        "add": add, "sub": sub, "mul": mul, "div": div,
        "tanh": tanh, "sigmoid": sigmoid, "softplus": softplus,
        "exp": exp, "log": log, "square": square, "relu": relu,
    }
    if op not in table:
        raise ContractError(f"unknown elementwise op {op!r}")
    return table[op](*args)


# ---------------------------------------------------------------------------
# reverse pass


class Tape:
    """Topologically ordered view of the graph that produced ``root``."""

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: list[Tensor] = self._order(root)

    @staticmethod
    def _order(root: Tensor) -> list[Tensor]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))
        return order

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def backward(loss: Tensor) -> Tape | None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    A loss that does not depend on any trainable tensor is a no-op: gradient
    buffers keep their (zeroed) state.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return None
    tape = Tape(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg, dtype=np.float64)
    return tape


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# randomness


class RngState:
    """Seeded random source; identical seeds give identical draw sequences."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape) -> np.ndarray:
        return self.generator.standard_normal(shape)

    def uniform(self, shape) -> np.ndarray:
        return self.generator.random(shape)

    def spawn(self, n: int) -> list["RngState"]:
        """Independent child states derived deterministically from this seed."""
        children = np.random.SeedSequence(self.seed).spawn(n)
        return [RngState(int(c.generate_state(1, dtype=np.uint64)[0])) for c in children]

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)


def gaussian_draw(rng: RngState, shape) -> Tensor:
    """Standard-normal constants; they never receive gradients."""
    return Tensor(rng.normal(tuple(shape)))
