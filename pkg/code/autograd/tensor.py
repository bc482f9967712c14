"""
Dense tensors with reverse-mode automatic differentiation
=========================================================

Every operation on a `Tensor` records its parents and a closure that maps
the output gradient to parent gradients. `backward` walks the recorded graph
in reverse topological order and returns a `GradientMap`; it never mutates
the graph, so running it twice yields identical maps.

Broadcasting is limited to what the poolers need: bias adds, row-wise
reductions and leading batch axes.
"""

from __future__ import annotations

import logging
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf

from errors import ContractError, DimensionError

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float64
SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]
Operand = Union["Tensor", np.ndarray, float, int]


def resolve_dtype(dtype: Union[str, np.dtype, type, None]) -> np.dtype:
    """Map 'float32'/'float64' (or numpy types) onto a supported dtype"""
    resolved = np.dtype(DEFAULT_DTYPE if dtype is None else dtype)
    if resolved not in SUPPORTED_DTYPES:
        raise ContractError(f"unsupported dtype {resolved}; use float32 or float64")
    return resolved


class Tensor:
    """Row-major numeric buffer that participates in a recorded graph"""

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None,
                 _parents: Sequence["Tensor"] = (), _backward: Optional[BackwardFn] = None,
                 _op: str = "leaf"):
        if dtype is None and isinstance(data, np.ndarray) and data.dtype in SUPPORTED_DTYPES:
            dtype = data.dtype
        self.data: np.ndarray = np.asarray(data, dtype=resolve_dtype(dtype))
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: Tuple[Tensor, ...] = tuple(_parents)
        self._backward = _backward
        self._op = _op

    # *** properties ***
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op}{label})"

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    # *** operators ***
    def __add__(self, other: Operand) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: Operand) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: Operand) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: Operand) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: Operand) -> "Tensor":
        return div(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return getitem(self, index)

    # *** method forms ***
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class GradientMap(dict):
    """Gradients keyed by tensor identity; each entry has its tensor's shape"""

    def for_tensor(self, tensor: Tensor) -> np.ndarray:
        if tensor not in self:
            return np.zeros_like(tensor.data)
        return self[tensor]


def _lift(value: Operand, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype if dtype is not None else DEFAULT_DTYPE))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn, op: str) -> Tensor:
    """Record a node only when some parent needs a gradient"""
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, _op=op)
    return Tensor(data, requires_grad=False, _op=op)


def from_op(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn, op: str) -> Tensor:
    """Public hook for layers that implement their own primitive (conv3d)"""
    return _make(data, parents, backward, op)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(op, a.shape, b.shape)


# *** elementwise binary ***

def add(a: Operand, b: Operand) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("add", a, b)

    def _backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)
    return _make(a.data + b.data, (a, b), _backward, "add")


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("sub", a, b)

    def _backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)
    return _make(a.data - b.data, (a, b), _backward, "sub")


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("mul", a, b)

    def _backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)
    return _make(a.data * b.data, (a, b), _backward, "mul")


def div(a: Operand, b: Operand) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def _backward(g):
        return unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)
    return _make(out, (a, b), _backward, "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


# *** linear algebra ***

def _swap_last(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast"""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul", a.shape, b.shape, detail="inner extents must match")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError("matmul", a.shape, b.shape, detail="batch extents must broadcast")

    def _backward(g):
        ga = g @ _swap_last(b.data)
        gb = _swap_last(a.data) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)
    return _make(a.data @ b.data, (a, b), _backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes"""
    if a.ndim < 2:
        raise DimensionError("transpose", a.shape, detail="needs at least two axes")
    return _make(_swap_last(a.data), (a,), lambda g: (_swap_last(g),), "transpose")


# *** shape movement ***

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError("reshape", a.shape, shape, detail="element counts differ")
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


_BASIC_INDEX = (int, np.integer, slice, type(Ellipsis), type(None))


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(part, _BASIC_INDEX) for part in parts)


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]
    basic = _is_basic_index(index)

    def _backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            # fancy indices may repeat
            np.add.at(full, index, g)
        return (full,)
    return _make(np.array(out, copy=True), (a,), _backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError("concat", *[t.shape for t in tensors], detail=f"axis={axis}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def _backward(g):
        return tuple(np.split(g, splits, axis=axis))
    return _make(out, tensors, _backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError("stack", *[t.shape for t in tensors])

    def _backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))
    return _make(out, tensors, _backward, "stack")


# *** reductions ***

def _expand_reduced(g: np.ndarray, shape: Tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def _backward(g):
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)),)
    return _make(out, (a,), _backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims))
    count = a.size // max(out.size, 1)

    def _backward(g):
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)) / count,)
    return _make(out, (a,), _backward, "mean")


# *** elementwise unary ***

def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a: Tensor) -> Tensor:
    """x * Phi(x) with the exact Gaussian CDF"""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * cdf

    def _backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)
    return _make(out.astype(x.dtype, copy=False), (a,), _backward, "gelu")


def _check_axis(op: str, a: Tensor, axis: int) -> None:
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(op, a.shape, detail=f"axis {axis} out of range")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax; every slice along `axis` sums to 1"""
    _check_axis("softmax", a, axis)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _make(out, (a,), _backward, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    _check_axis("log_softmax", a, axis)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def _backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)
    return _make(out, (a,), _backward, "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift"""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise DimensionError("layer_norm", x.shape, gamma.shape, beta.shape,
                             detail="gamma/beta must match the last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data
    n = x.shape[-1]

    def _backward(g):
        dxhat = g * gamma.data
        dx = inv_std / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)
    return _make(out, (x, gamma, beta), _backward, "layer_norm")


# *** graph traversal ***

def topological_order(root: Tensor) -> List[Tensor]:
    """Parents before children; iterative so long recurrences do not hit the recursion limit"""
    order: List[Tensor] = []
    visited = set()
    stack_: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack_.append((parent, False))
    return order


def backward(loss: Tensor, wrt: Optional[Iterable[Tensor]] = None) -> GradientMap:
    """
    Exact reverse-mode gradients of a scalar loss.

    Returns gradients for every requires_grad leaf reachable from `loss`,
    or for the tensors listed in `wrt` (leaf or intermediate).
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = topological_order(loss)
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg

    targets = list(wrt) if wrt is not None else [n for n in order if n.is_leaf and n.requires_grad]
    result = GradientMap()
    for tensor in targets:
        g = grads.get(id(tensor))
        result[tensor] = np.zeros_like(tensor.data) if g is None else np.asarray(g, dtype=tensor.dtype).reshape(tensor.shape)
    return result


__all__ = [
    'Tensor', 'GradientMap', 'backward', 'topological_order', 'from_op', 'unbroadcast', 'resolve_dtype',
    'add', 'sub', 'mul', 'div', 'neg', 'matmul', 'transpose', 'reshape', 'getitem', 'concat', 'stack',
    'tsum', 'mean', 'exp', 'log', 'tanh', 'sigmoid', 'gelu', 'softmax', 'log_softmax', 'layer_norm',
]
