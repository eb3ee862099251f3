"""Reverse-mode automatic differentiation over numpy arrays.

Every trainable component in this package (encoder stack, attention
pooling, loss heads, the toy decoder LM) is composed from the primitives
here, so each objective's analytic gradient can be checked against
central finite differences without a framework dependency. Arrays are
float64 throughout; graphs are rebuilt per step and stay small at desk
scale.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import UsageError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A numpy array plus the closures needed to backpropagate into it.

    ``requires_grad`` on a leaf marks it as a parameter: ``backward``
    accumulates into its ``grad``. Interior nodes are created by the ops
    below and carry ``_parents``, a tuple of (tensor, vjp) pairs.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents")

    # Make numpy defer to the reflected operators below instead of
    # attempting elementwise object arithmetic on Tensor operands.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError("item() requires a single-element tensor")
        return float(self.data)

    def __float__(self) -> float:
        return self.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- autodiff ------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this node, accumulating into leaf grads."""
        if grad is None:
            if self.data.size != 1:
                raise UsageError("backward() without grad needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        pending: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and not node._parents:
                node.grad = g if node.grad is None else node.grad + g
            for parent, vjp in node._parents:
                contrib = vjp(g)
                if id(parent) in pending:
                    pending[id(parent)] += contrib
                else:
                    pending[id(parent)] = contrib

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes=None):
        return transpose(self, axes)


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for parent, _ in node._parents:
            stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or bool(t._parents)


def _build(data: np.ndarray, parents) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED:
        kept = tuple((p, fn) for p, fn in parents if _tracked(p))
        if kept:
            out._parents = kept
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if squeeze:
        grad = grad.sum(axis=squeeze, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic ------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _build(
        a.data + b.data,
        [(a, lambda g: _unbroadcast(g, a.data.shape)), (b, lambda g: _unbroadcast(g, b.data.shape))],
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _build(
        a.data - b.data,
        [(a, lambda g: _unbroadcast(g, a.data.shape)), (b, lambda g: _unbroadcast(-g, b.data.shape))],
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _build(
        a.data * b.data,
        [
            (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
        ],
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _build(
        a.data / b.data,
        [
            (a, lambda g: _unbroadcast(g / b.data, a.data.shape)),
            (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
        ],
    )


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    e = float(exponent)
    return _build(a.data**e, [(a, lambda g: g * e * a.data ** (e - 1.0))])


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _build(out, [(a, lambda g: g * out)])


def log(a) -> Tensor:
    a = as_tensor(a)
    return _build(np.log(a.data), [(a, lambda g: g / a.data)])


def sqrt(a) -> Tensor:
    """Square root with a zero subgradient at exactly zero inputs."""
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = g / (2.0 * out)
        return np.where(a.data > 0.0, d, 0.0)

    return _build(out, [(a, vjp)])


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _build(out, [(a, lambda g: g * (1.0 - out * out))])


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _build(np.maximum(a.data, 0.0), [(a, lambda g: g * (a.data > 0.0))])


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid_stable(a.data)
    return _build(out, [(a, lambda g: g * out * (1.0 - out))])


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a) -> Tensor:
    """log(1 + exp(x)) in an overflow-safe form."""
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    return _build(out, [(a, lambda g: g * _sigmoid_stable(a.data))])


# -- linear algebra / shaping ----------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def vjp_a(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if b.data.ndim > 1 else np.outer(g, b.data)
        return _unbroadcast(ga, a.data.shape) if ga.shape != a.data.shape else ga

    def vjp_b(g):
        gb = np.swapaxes(a.data, -1, -2) @ g if a.data.ndim > 1 else np.outer(a.data, g)
        return _unbroadcast(gb, b.data.shape) if gb.shape != b.data.shape else gb

    return _build(out, [(a, vjp_a), (b, vjp_b)])


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy() if np.ndim(g) == 0 else np.full(a.data.shape, g)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.data.shape).copy()

    return _build(out, [(a, vjp)])


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _build(a.data.reshape(shape), [(a, lambda g: g.reshape(a.data.shape))])


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = a.data.transpose(axes)
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))
    return _build(out, [(a, lambda g: g.transpose(inv))])


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    parents = []
    for i, t in enumerate(tensors):
        parents.append((t, lambda g, i=i: np.take(g, i, axis=axis)))
    return _build(out, parents)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + [t.data.shape[axis] for t in tensors])
    parents = []
    for i, t in enumerate(tensors):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
        parents.append((t, lambda g, sl=tuple(sl): g[sl]))
    return _build(out, parents)


def take(a, key) -> Tensor:
    """Indexing/gather; supports basic slices and integer-array indexing."""
    a = as_tensor(a)
    out = a.data[key]

    def vjp(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, key, g)
        return acc

    return _build(out, [(a, vjp)])


def where(cond, a, b) -> Tensor:
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    return _build(
        np.where(cond, a.data, b.data),
        [
            (a, lambda g: _unbroadcast(np.where(cond, g, 0.0), a.data.shape)),
            (b, lambda g: _unbroadcast(np.where(cond, 0.0, g), b.data.shape)),
        ],
    )


# -- reductions with stable softmax family ----------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - dot)

    return _build(out, [(a, vjp)])


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = m + np.log(s)
    soft = e / s
    if not keepdims:
        out = out.reshape([d for i, d in enumerate(a.data.shape) if i != axis % a.data.ndim])

    def vjp(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return soft * gg

    return _build(out, [(a, vjp)])


def log_softmax(a, axis: int = -1) -> Tensor:
    return sub(a, logsumexp(a, axis=axis, keepdims=True))


# -- verification helper -----------------------------------------------------


def numeric_gradient(f, arrays: list[np.ndarray], eps: float = 1e-6) -> list[np.ndarray]:
    """Central-difference gradients of scalar f(*arrays) w.r.t. each array."""
    grads = []
    for k, base in enumerate(arrays):
        g = np.zeros_like(base, dtype=np.float64)
        flat = base.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            h = eps * max(1.0, abs(orig))
            flat[i] = orig + h
            hi = f(*arrays)
            flat[i] = orig - h
            lo = f(*arrays)
            flat[i] = orig
            gflat[i] = (float(hi) - float(lo)) / (2.0 * h)
        grads.append(g)
    return grads
