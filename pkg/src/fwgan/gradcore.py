"""Dense 2-D float64 tensors with define-by-run reverse-mode differentiation.

Every operation returns a new :class:`Tensor` that remembers its parents and
a closure mapping the output gradient to parent gradients.  :func:`backward`
sorts the graph reachable from a scalar root into a :class:`Tape` and
accumulates gradients in reverse order.

Broadcasting is limited to what MLPs need: a ``1 x n`` row, an ``m x 1``
column or a ``1 x 1`` scalar may be combined with an ``m x n`` operand.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_LEAKY_SLOPE = 0.2


class DimensionError(ValueError):
    """Operand shapes are incompatible or a tensor is empty."""


class DomainError(ValueError):
    """An input lies outside the mathematical domain of an operation."""


class ContractError(ValueError):
    """A caller-side precondition of the differentiation API was violated."""


def _as_matrix(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected at most 2 dimensions, got {arr.ndim}")
    arr.setflags(write=False)
    return arr


class Tensor:
    """Immutable row-major matrix of float64 values that is a node in a graph.

    ``Tensor([1, 2, 3])`` is a 3 x 1 column; a 0-d value becomes 1 x 1.
    """

    __slots__ = ("data", "parents", "grad_fn", "op")

    def __init__(
        self,
        data,
        parents: tuple["Tensor", ...] = (),
        grad_fn: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None,
        op: str = "leaf",
    ):
        self.data = data if _is_frozen_matrix(data) else _as_matrix(data)
        self.parents = parents
        self.grad_fn = grad_fn
        self.op = op

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _is_frozen_matrix(data) -> bool:
    return (
        isinstance(data, np.ndarray)
        and data.ndim == 2
        and data.dtype == np.float64
        and not data.flags.writeable
    )


def tensor(value) -> Tensor:
    """Wrap ``value`` as a leaf, passing tensors through untouched."""
    return value if isinstance(value, Tensor) else Tensor(value)


def constant(value) -> Tensor:
    """Leaf copy of ``value`` with no history (a stop-gradient)."""
    if isinstance(value, Tensor):
        return Tensor(value.data)
    return Tensor(value)


stop_gradient = constant


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    arr.setflags(write=False)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, kind: str) -> None:
    (ra, ca), (rb, cb) = a.shape, b.shape
    rows_ok = ra == rb or ra == 1 or rb == 1
    cols_ok = ca == cb or ca == 1 or cb == 1
    if not (rows_ok and cols_ok):
        raise DimensionError(f"{kind}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# binary elementwise


def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return Tensor(
        _freeze(a.data + b.data),
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return Tensor(
        _freeze(a.data - b.data),
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _check_broadcast(a, b, "mul")
    av, bv = a.data, b.data
    return Tensor(
        _freeze(av * bv),
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
        "mul",
    )


def matmul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    av, bv = a.data, b.data
    return Tensor(
        _freeze(av @ bv),
        (a, b),
        lambda g: (g @ bv.T, av.T @ g),
        "matmul",
    )


# ---------------------------------------------------------------------------
# unary elementwise


def scale(a, s: float) -> Tensor:
    a = tensor(a)
    s = float(s)
    return Tensor(_freeze(a.data * s), (a,), lambda g: (g * s,), "scale")


def exp(a) -> Tensor:
    a = tensor(a)
    out = _freeze(np.exp(a.data))
    return Tensor(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log: input has nonpositive entries")
    av = a.data
    return Tensor(_freeze(np.log(av)), (a,), lambda g: (g / av,), "log")


def relu(a) -> Tensor:
    a = tensor(a)
    mask = a.data > 0
    return Tensor(_freeze(np.where(mask, a.data, 0.0)), (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, alpha: float = DEFAULT_LEAKY_SLOPE) -> Tensor:
    a = tensor(a)
    slope = np.where(a.data > 0, 1.0, alpha)
    return Tensor(_freeze(a.data * slope), (a,), lambda g: (g * slope,), "leaky_relu")


def max_scalar(a, c: float) -> Tensor:
    """Entrywise ``max(a, c)``; gradient passes only where ``a > c``."""
    a = tensor(a)
    mask = a.data > c
    return Tensor(
        _freeze(np.where(mask, a.data, float(c))), (a,), lambda g: (g * mask,), "max_scalar"
    )


def square(a) -> Tensor:
    a = tensor(a)
    av = a.data
    return Tensor(_freeze(av * av), (a,), lambda g: (2.0 * g * av,), "square")


def transpose(a) -> Tensor:
    a = tensor(a)
    return Tensor(_freeze(a.data.T.copy()), (a,), lambda g: (g.T,), "transpose")


# ---------------------------------------------------------------------------
# structural


def concat_rows(parts: Sequence) -> Tensor:
    parts = tuple(tensor(p) for p in parts)
    if not parts:
        raise DimensionError("concat_rows: nothing to concatenate")
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise DimensionError(f"concat_rows: column counts differ {sorted(cols)}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def grad_fn(g):
        return tuple(g[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return Tensor(_freeze(np.vstack([p.data for p in parts])), parts, grad_fn, "concat_rows")


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = tensor(a)
    rows = a.shape[0]

    def grad_fn(g):
        full = np.zeros((rows, g.shape[1]))
        full[start:stop] = g
        return (full,)

    return Tensor(_freeze(a.data[start:stop].copy()), (a,), grad_fn, "slice_rows")


# ---------------------------------------------------------------------------
# reductions


def _require_nonempty(a: Tensor, kind: str) -> None:
    if a.data.size == 0:
        raise DimensionError(f"{kind}: empty tensor")


def sum(a) -> Tensor:  # noqa: A001 - mirrors the reduction name
    a = tensor(a)
    _require_nonempty(a, "sum")
    shape = a.shape
    return Tensor(
        _freeze(np.sum(a.data)), (a,), lambda g: (np.full(shape, g[0, 0]),), "sum"
    )


def mean(a) -> Tensor:
    a = tensor(a)
    _require_nonempty(a, "mean")
    shape, n = a.shape, a.data.size
    return Tensor(
        _freeze(np.mean(a.data)), (a,), lambda g: (np.full(shape, g[0, 0] / n),), "mean"
    )


def logsumexp(a) -> Tensor:
    """``log(sum(exp(a)))`` over every entry, stable for large magnitudes."""
    a = tensor(a)
    _require_nonempty(a, "logsumexp")
    av = a.data
    top = np.max(av)
    if not np.isfinite(top):
        value = top
        weights = (av == top).astype(np.float64)
        weights /= weights.sum()
    else:
        shifted = np.exp(av - top)
        total = shifted.sum()
        value = top + math.log(total)
        weights = shifted / total
    return Tensor(_freeze(value), (a,), lambda g: (g[0, 0] * weights,), "logsumexp")


# ---------------------------------------------------------------------------
# differentiation


class Tape:
    """Topologically ordered record of the graph below a root node.

    ``nodes[i]``'s parents always appear at indices ``< i``.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes
        self.grads: dict[int, np.ndarray] = {}

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        # iterative DFS; recursion depth would otherwise track network depth x ops
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
            for parent in reversed(node.parents):
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def backward(self) -> dict[int, np.ndarray]:
        root = self.nodes[-1]
        if root.shape != (1, 1):
            raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
        grads: dict[int, np.ndarray] = {id(root): np.ones((1, 1))}
        for node in reversed(self.nodes):
            g = grads.get(id(node))
            if g is None or node.grad_fn is None:
                continue
            for parent, pg in zip(node.parents, node.grad_fn(g)):
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        self.grads = grads
        return grads

    def grad(self, t: Tensor) -> np.ndarray:
        g = self.grads.get(id(t))
        return np.zeros(t.shape) if g is None else g


def backward(root: Tensor, wrt: Iterable[Tensor] | None = None) -> list[np.ndarray] | dict:
    """Reverse-mode gradients of scalar ``root``.

    With ``wrt`` given, returns a list of gradients aligned with it (zeros for
    tensors the root does not depend on).  Otherwise returns a dict mapping
    every leaf tensor in the graph to its gradient.
    """
    tape = Tape.record(root)
    tape.backward()
    if wrt is not None:
        return [tape.grad(t) for t in wrt]
    return {node: tape.grad(node) for node in tape.nodes if node.is_leaf}


def numerical_grad(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fn`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat, gflat = x.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(x)
        flat[i] = orig - step
        lo = fn(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return out


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "exp": exp,
    "log": log,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "max_scalar": max_scalar,
    "scale": scale,
}


def elementwise(kind: str, *operands, **params) -> Tensor:
    """Dispatch by name, e.g. ``elementwise("leaky_relu", x, alpha=0.1)``."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(*operands, **params)


def reduce(kind: str, t) -> Tensor:
    if kind == "mean":
        return mean(t)
    if kind == "sum":
        return sum(t)
    raise ValueError(f"unknown reduction {kind!r}")
