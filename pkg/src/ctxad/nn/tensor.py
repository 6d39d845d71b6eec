"""Dense tensors with reverse-mode differentiation.

Only the operations needed by the TCN encoder and the hypersphere losses are
provided. Every op records a closure that maps the output gradient to input
gradients; ``Tensor.backward`` walks the graph in reverse topological order.

Layout convention for sequence ops is ``(batch, time, channels)``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "NonFiniteError",
    "GraphConsumedError",
    "finite_checks",
    "as_tensor",
    "conv1d_causal",
    "leaky_relu",
    "linear",
    "max_pool_time",
    "l2_normalize",
    "exp",
    "log",
    "log1mexp",
    "sqrt",
    "square",
    "clip",
    "maximum_const",
    "sum",
    "mean",
    "norm",
]


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


class GraphConsumedError(RuntimeError):
    """Raised on a second backward pass through a graph that was not retained."""


_CHECK_FINITE = True


@contextlib.contextmanager
def finite_checks(enabled: bool) -> Iterator[None]:
    """Temporarily toggle the per-op NaN/Inf check."""
    global _CHECK_FINITE
    previous = _CHECK_FINITE
    _CHECK_FINITE = enabled
    try:
        yield
    finally:
        _CHECK_FINITE = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: tuple["Tensor", ...], backward, op: str) -> "Tensor":
        if _CHECK_FINITE and not np.isfinite(data).all():
            bad = int(np.size(data) - np.count_nonzero(np.isfinite(data)))
            raise NonFiniteError(f"op {op!r} produced {bad} non-finite value(s) in output of shape {data.shape}")
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = parents if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        out.op = op
        out._consumed = False
        return out

    def backward(self, retain_graph: bool = False) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar tensor, got shape {self.shape}")
        if self._consumed:
            raise GraphConsumedError("graph already consumed by a previous backward; pass retain_graph=True")
        if not self.requires_grad:
            raise ValueError("tensor does not require grad")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

        if not retain_graph:
            for node in order:
                if node._backward is not None:
                    node._backward = None
                    node._parents = ()
                    node._consumed = True

    # -- operators ------------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._from_op(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
            "add",
        )

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._from_op(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), -_unbroadcast(g, b_shape)),
            "sub",
        )

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other, self.dtype) - self

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a, b = self.data, other.data
        return Tensor._from_op(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
            "mul",
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a, b = self.data, other.data
        return Tensor._from_op(
            a / b,
            (self, other),
            lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)),
            "div",
        )

    def __neg__(self) -> "Tensor":
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def __getitem__(self, index) -> "Tensor":
        shape, dtype = self.shape, self.dtype

        def backward(g):
            full = np.zeros(shape, dtype=dtype)
            np.add.at(full, index, g)
            return (full,)

        return Tensor._from_op(self.data[index], (self,), backward, "getitem")

    def transpose(self, *axes: int) -> "Tensor":
        inverse = np.argsort(axes)
        return Tensor._from_op(
            np.transpose(self.data, axes), (self,), lambda g: (np.transpose(g, inverse),), "transpose"
        )

    def reshape(self, *shape: int) -> "Tensor":
        original = self.shape
        return Tensor._from_op(self.data.reshape(*shape), (self,), lambda g: (g.reshape(original),), "reshape")


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype if dtype is not None else np.float64))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- sequence / layer ops -----------------------------------------------------


def conv1d_causal(x: Tensor, weight: Tensor, bias: Tensor | None = None, dilation: int = 1) -> Tensor:
    """Causal dilated 1-d convolution.

    ``x`` is ``(B, T, C_in)``, ``weight`` is ``(k, C_in, C_out)``. Output at time
    ``t`` is ``sum_j x[t - (k-1-j)*dilation] @ weight[j]`` with zeros before the
    sequence start, so it only sees inputs at times ``<= t``.
    """
    if x.ndim != 3 or weight.ndim != 3:
        raise ValueError(f"conv1d_causal expects (B,T,C) input and (k,C_in,C_out) weight, got {x.shape}, {weight.shape}")
    k, c_in, c_out = weight.shape
    if x.shape[2] != c_in:
        raise ValueError(f"channel mismatch: input has {x.shape[2]}, weight expects {c_in}")
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    batch, steps, _ = x.shape
    pad = (k - 1) * dilation
    xd = x.data
    if pad:
        padded = np.zeros((batch, steps + pad, c_in), dtype=xd.dtype)
        padded[:, pad:] = xd
    else:
        padded = xd
    if k == 1:
        cols = padded.reshape(batch * steps, c_in)
    else:
        cols = np.concatenate([padded[:, j * dilation : j * dilation + steps] for j in range(k)], axis=2)
        cols = cols.reshape(batch * steps, k * c_in)
    w2 = weight.data.reshape(k * c_in, c_out)
    out = cols @ w2
    if bias is not None:
        out += bias.data
    out = out.reshape(batch, steps, c_out)

    def backward(g):
        g2 = g.reshape(batch * steps, c_out)
        gw = (cols.T @ g2).reshape(k, c_in, c_out) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ w2.T).reshape(batch, steps, k, c_in)
            gpad = np.zeros((batch, steps + pad, c_in), dtype=g.dtype)
            for j in range(k):
                gpad[:, j * dilation : j * dilation + steps] += gcols[:, :, j]
            gx = gpad[:, pad:]
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._from_op(out, parents, backward, "conv1d_causal")


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    positive = x.data > 0
    return Tensor._from_op(
        np.where(positive, x.data, slope * x.data),
        (x,),
        lambda g: (np.where(positive, g, slope * g),),
        "leaky_relu",
    )


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` shaped ``(in, out)``."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input features {x.shape[-1]} != weight rows {weight.shape[0]}")
    xd, wd = x.data, weight.data
    out = xd @ wd
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ wd.T
        gw = xd.reshape(-1, xd.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        if bias is None:
            return gx, gw
        return gx, gw, g.reshape(-1, g.shape[-1]).sum(axis=0)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._from_op(out, parents, backward, "linear")


def max_pool_time(x: Tensor, length: int | None = None) -> Tensor:
    """Adaptive max pooling over time down to a single step: ``(B,T,C) -> (B,C)``.

    ``length`` restricts pooling to the first ``length`` steps.
    """
    data = x.data if length is None else x.data[:, :length]
    if data.shape[1] == 0:
        raise ValueError("max_pool_time over an empty time axis")
    idx = data.argmax(axis=1)
    out = np.take_along_axis(data, idx[:, None, :], axis=1)[:, 0, :]
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        b = np.arange(shape[0])[:, None]
        c = np.arange(shape[2])[None, :]
        full[b, idx, c] = g
        return (full,)

    return Tensor._from_op(out, (x,), backward, "max_pool_time")


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """``x / sqrt(sum(x**2) + eps)``; the eps keeps the zero vector finite."""
    xd = x.data
    n = np.sqrt((xd * xd).sum(axis=axis, keepdims=True) + eps)
    out = xd / n

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - out * dot) / n,)

    return Tensor._from_op(out, (x,), backward, "l2_normalize")


# -- elementwise --------------------------------------------------------------


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(xd)
    return Tensor._from_op(out, (x,), lambda g: (g / xd,), "log")


def log1mexp(x: Tensor) -> Tensor:
    """``log(1 - exp(-x))`` for ``x > 0``, evaluated via ``expm1``."""
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(-np.expm1(-xd))
        deriv = 1.0 / np.expm1(xd)
    return Tensor._from_op(out, (x,), lambda g: (g * deriv,), "log1mexp")


def sqrt(x: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        out = np.sqrt(x.data)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (np.where(out > 0, g / (2 * np.where(out > 0, out, 1)), 0.0),)

    return Tensor._from_op(out, (x,), backward, "sqrt")


def square(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor._from_op(xd * xd, (x,), lambda g: (2 * g * xd,), "square")


def clip(x: Tensor, low: float, high: float) -> Tensor:
    """Clamp values; gradient passes only where the input is inside ``[low, high]``."""
    xd = x.data
    inside = (xd >= low) & (xd <= high)
    return Tensor._from_op(np.clip(xd, low, high), (x,), lambda g: (np.where(inside, g, 0.0),), "clip")


def maximum_const(x: Tensor, floor: float) -> Tensor:
    xd = x.data
    keep = xd >= floor
    return Tensor._from_op(np.maximum(xd, floor), (x,), lambda g: (np.where(keep, g, 0.0),), "maximum")


# -- reductions ---------------------------------------------------------------


def sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._from_op(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward, "sum")


def mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else x.shape[axis]
    return sum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def norm(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Euclidean norm along ``axis``."""
    return sqrt(sum(square(x), axis=axis, keepdims=keepdims))
