"""Dense 2-D tensors with define-by-run reverse-mode differentiation.

Every tensor is a float64 matrix.  Differentiable ops record their inputs and
a backward closure on the output tensor; ``Tensor.backward`` replays those
closures in reverse execution order.  Constant left operands of a product may
also be scipy sparse matrices (adjacency, pooling and row-selection matrices),
which never receive gradients.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Tensor",
    "DimensionError",
    "GradCheckError",
    "tensor",
    "constant",
    "matmul",
    "spmm",
    "elementwise",
    "add",
    "sub",
    "mul",
    "relu",
    "tanh",
    "scale",
    "power",
    "exp",
    "log",
    "add_bias",
    "transpose",
    "row_softmax",
    "log_softmax",
    "mean_rows",
    "sum_all",
    "concat_cols",
    "grad_check",
]

_counter = itertools.count()


class DimensionError(ValueError):
    pass


class GradCheckError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_order", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._order = next(_counter)
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Back-propagate from a scalar (1x1) tensor, seeding its grad with 1.0."""
        if self.shape != (1, 1):
            raise DimensionError(f"backward needs a scalar loss, got shape {self.shape}")
        order = _tape(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones((1, 1))}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:  # leaf
                node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # operator sugar
    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)


def _tape(root: Tensor) -> list[Tensor]:
    """Tensors reachable from ``root``, latest-executed first."""
    seen: set[int] = set()
    found: list[Tensor] = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        found.append(t)
        stack.extend(p for p in t._parents if p.requires_grad)
    found.sort(key=lambda t: t._order, reverse=True)
    return found


def tensor(data, requires_grad: bool = True, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out._parents = tuple(parents)
    out._backward = backward if out.requires_grad else None
    out._order = next(_counter)
    out.name = ""
    return out


def _check_finite(a: Tensor, op: str) -> None:
    if not np.all(np.isfinite(a.data)):
        raise FloatingPointError(f"{op}: non-finite input")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), backward)


def spmm(m: sp.spmatrix | np.ndarray, b: Tensor) -> Tensor:
    """Product of a constant (sparse or dense) matrix with a tensor."""
    if m.shape[1] != b.rows:
        raise DimensionError(f"spmm: cannot multiply {m.shape} by {b.shape}")
    m = sp.csr_matrix(m) if not sp.issparse(m) else m.tocsr()
    mt = None

    def backward(g):
        nonlocal mt
        if mt is None:
            mt = m.T.tocsr()
        return (np.asarray(mt @ g),)

    return _result(np.asarray(m @ b.data), (b,), backward)


def transpose(a: Tensor) -> Tensor:
    return _result(a.data.T.copy(), (a,), lambda g: (g.T,))


def add_bias(a: Tensor, bias: Tensor) -> Tensor:
    """Add a 1 x c bias row to every row of ``a``."""
    if bias.rows != 1 or bias.cols != a.cols:
        raise DimensionError(f"add_bias: bias {bias.shape} does not fit {a.shape}")

    def backward(g):
        return g, g.sum(axis=0, keepdims=True)

    return _result(a.data + bias.data, (a, bias), backward)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = {p.rows for p in parts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.data for p in parts], axis=1), tuple(parts), backward)


# ---------------------------------------------------------------------------
# pointwise


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _result(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def power(a: Tensor, p: float) -> Tensor:
    """Pointwise a**p for strictly positive a."""
    if np.any(a.data <= 0):
        raise FloatingPointError("power: non-positive input")
    y = a.data ** p
    return _result(y, (a,), lambda g: (g * p * y / a.data,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _result(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise FloatingPointError("log: non-positive input")
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


_UNARY = {"relu": relu, "tanh": tanh, "exp": exp, "log": log}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(a: Tensor, kind: str, other: Tensor | float | None = None) -> Tensor:
    """Dispatch a pointwise op by name; ``scale`` takes a float, binary kinds a tensor."""
    if kind in _BINARY:
        if not isinstance(other, Tensor):
            raise TypeError(f"{kind} needs a second tensor")
        return _BINARY[kind](a, other)
    if kind == "scale":
        return scale(a, other)
    if kind in _UNARY:
        return _UNARY[kind](a)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# reductions and normalizations


def row_softmax(a: Tensor) -> Tensor:
    _check_finite(a, "row_softmax")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _result(y, (a,), backward)


def log_softmax(a: Tensor) -> Tensor:
    _check_finite(a, "log_softmax")
    z = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _result(y, (a,), backward)


def mean_rows(a: Tensor) -> Tensor:
    r = a.rows
    if r == 0:
        raise ValueError("mean_rows: cannot pool zero rows")

    def backward(g):
        return (np.repeat(g / r, r, axis=0),)

    return _result(a.data.mean(axis=0, keepdims=True), (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _result(np.array([[a.data.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


# ---------------------------------------------------------------------------
# verification


def grad_check(f: Callable[[], Tensor], inputs: Iterable[Tensor], eps: float = 1e-5) -> float:
    """Largest |analytic - central difference| / max(1, |central difference|).

    ``f`` is re-evaluated from scratch for every perturbation, so it must build
    its graph from the current values of ``inputs``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    inputs = list(inputs)
    for t in inputs:
        t.zero_grad()
    out = f()
    if out.shape != (1, 1):
        raise GradCheckError(f"grad_check needs a scalar program, got shape {out.shape}")
    out.backward()
    worst = 0.0
    for t in inputs:
        analytic = t.grad.copy()
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = f().item()
            flat[i] = orig - eps
            down = f().item()
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            err = abs(analytic.flat[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
