"""Dense tensor type with reverse-mode automatic differentiation.

Every differentiable computation in the codec runs on this engine: a
Tensor wraps a numpy float array, forward ops record their parents on a
dynamic tape, and backward() walks the tape in reverse topological order
accumulating gradients into .grad buffers.

Precision is float64 throughout; the entropy-coding path never depends on
float bit patterns (it quantizes to integer tables at a single boundary).
"""

from __future__ import annotations

import contextlib

import numpy as np
from scipy import special as _special


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / serial decode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """N-dimensional float array participating in the autodiff tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fns")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._grad_fns = ()

    # -- tape plumbing ----------------------------------------------------

    @classmethod
    def _op(cls, data: np.ndarray, parents, grad_fns) -> "Tensor":
        """Create a non-leaf tensor; grad_fns[i](out_grad) -> grad of parents[i]."""
        out = cls(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._grad_fns = tuple(grad_fns)
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self) -> None:
        """Backpropagate from a scalar loss into every reachable .grad."""
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar loss, got shape {self.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        # transient upstream buffers, separate from persistent .grad
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and not node._parents:
                node._accumulate(g)
            for p, fn in zip(node._parents, node._grad_fns):
                if not p.requires_grad:
                    continue
                pg = fn(g)
                if id(p) in grads:
                    grads[id(p)] += pg
                else:
                    grads[id(p)] = np.array(pg, dtype=np.float64, copy=True)
                del pg
        # leaves holding requires_grad inside the graph interior
        # (handled above; interior tensors do not retain .grad)

    def zero_grad(self) -> None:
        self.grad = None

    # -- introspection ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(np.asarray(self.data).item())

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic -------------------------------------------------------

    @staticmethod
    def _wrap(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        other = self._wrap(other)
        return Tensor._op(
            self.data + other.data,
            (self, other),
            (
                lambda g: _unbroadcast(g, self.shape),
                lambda g: _unbroadcast(g, other.shape),
            ),
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor._op(-self.data, (self,), (lambda g: -g,))

    def __sub__(self, other):
        return self + (-self._wrap(other))

    def __rsub__(self, other):
        return self._wrap(other) + (-self)

    def __mul__(self, other):
        other = self._wrap(other)
        return Tensor._op(
            self.data * other.data,
            (self, other),
            (
                lambda g: _unbroadcast(g * other.data, self.shape),
                lambda g: _unbroadcast(g * self.data, other.shape),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._wrap(other)
        return Tensor._op(
            self.data / other.data,
            (self, other),
            (
                lambda g: _unbroadcast(g / other.data, self.shape),
                lambda g: _unbroadcast(
                    -g * self.data / (other.data * other.data), other.shape
                ),
            ),
        )

    def __rtruediv__(self, other):
        return self._wrap(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = self.data**exponent
        return Tensor._op(
            out,
            (self,),
            (lambda g: g * exponent * self.data ** (exponent - 1),),
        )

    def __matmul__(self, other):
        other = self._wrap(other)
        if self.shape[-1] != other.shape[-2]:
            raise ShapeError(
                f"matmul inner dims disagree: {self.shape} @ {other.shape}"
            )
        return Tensor._op(
            np.matmul(self.data, other.data),
            (self, other),
            (
                lambda g: _unbroadcast(
                    np.matmul(g, np.swapaxes(other.data, -1, -2)), self.shape
                ),
                lambda g: _unbroadcast(
                    np.matmul(np.swapaxes(self.data, -1, -2), g), other.shape
                ),
            ),
        )

    # -- elementwise functions -------------------------------------------

    def exp(self):
        out = np.exp(self.data)
        return Tensor._op(out, (self,), (lambda g: g * out,))

    def log(self):
        return Tensor._op(np.log(self.data), (self,), (lambda g: g / self.data,))

    def sqrt(self):
        out = np.sqrt(self.data)
        return Tensor._op(out, (self,), (lambda g: g * 0.5 / out,))

    def tanh(self):
        out = np.tanh(self.data)
        return Tensor._op(out, (self,), (lambda g: g * (1.0 - out * out),))

    def erf(self):
        c = 2.0 / np.sqrt(np.pi)
        return Tensor._op(
            _special.erf(self.data),
            (self,),
            (lambda g: g * c * np.exp(-self.data * self.data),),
        )

    def sigmoid(self):
        out = _special.expit(self.data)
        return Tensor._op(out, (self,), (lambda g: g * out * (1.0 - out),))

    def softplus(self):
        # log(1 + exp(x)), computed stably
        out = np.logaddexp(0.0, self.data)
        sig = _special.expit(self.data)
        return Tensor._op(out, (self,), (lambda g: g * sig,))

    def abs(self):
        sign = np.sign(self.data)
        return Tensor._op(np.abs(self.data), (self,), (lambda g: g * sign,))

    def leaky_relu(self, slope: float = 0.01):
        mask = np.where(self.data >= 0.0, 1.0, slope)
        return Tensor._op(self.data * mask, (self,), (lambda g: g * mask,))

    def gelu(self):
        # exact (erf) form
        x = self.data
        phi = 0.5 * (1.0 + _special.erf(x / np.sqrt(2.0)))
        pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
        return Tensor._op(x * phi, (self,), (lambda g: g * (phi + x * pdf),))

    def maximum(self, floor: float):
        """Elementwise max with a constant; subgradient 0 on the clamped side."""
        mask = (self.data > floor).astype(np.float64)
        return Tensor._op(np.maximum(self.data, floor), (self,), (lambda g: g * mask,))

    # -- reductions -------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def grad_fn(g):
            if axis is None:
                return np.broadcast_to(g, self.shape).copy()
            gg = g
            if not keepdims:
                gg = np.expand_dims(gg, axis)
            return np.broadcast_to(gg, self.shape).copy()

        return Tensor._op(np.asarray(out), (self,), (grad_fn,))

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- layout -----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Tensor._op(
            self.data.reshape(shape),
            (self,),
            (lambda g: g.reshape(self.shape),),
        )

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        return Tensor._op(
            self.data.transpose(axes),
            (self,),
            (lambda g: g.transpose(inv),),
        )

    def __getitem__(self, key):
        def grad_fn(g):
            out = np.zeros_like(self.data)
            np.add.at(out, key, g)
            return out

        return Tensor._op(self.data[key], (self,), (grad_fn,))

    def roll(self, shifts, axes):
        """Cyclic roll along the given axes (used by shifted-window attention)."""
        neg = tuple(-s for s in shifts)
        return Tensor._op(
            np.roll(self.data, shifts, axis=axes),
            (self,),
            (lambda g: np.roll(g, neg, axis=axes),),
        )

    def pad2d(self, pad: int):
        """Zero-pad the last two axes by `pad` on every side."""
        width = [(0, 0)] * (self.ndim - 2) + [(pad, pad), (pad, pad)]
        sl = tuple(
            [slice(None)] * (self.ndim - 2)
            + [slice(pad, pad + self.shape[-2]), slice(pad, pad + self.shape[-1])]
        )
        return Tensor._op(
            np.pad(self.data, width),
            (self,),
            (lambda g: g[sl],),
        )


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [Tensor._wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def make_fn(i):
        def fn(g):
            return np.split(g, splits, axis=axis)[i]

        return fn

    return Tensor._op(data, tensors, [make_fn(i) for i in range(len(tensors))])


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [Tensor._wrap(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def make_fn(i):
        def fn(g):
            return np.take(g, i, axis=axis)

        return fn

    return Tensor._op(data, tensors, [make_fn(i) for i in range(len(tensors))])
