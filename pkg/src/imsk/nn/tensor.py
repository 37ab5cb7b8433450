"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tensor`` wraps an ndarray and remembers how it was produced; calling
``backward()`` on a scalar result walks the graph in reverse topological
order and accumulates gradients into every tensor with ``requires_grad``.
Only the operations needed by the recognizer are provided: elementwise
arithmetic, matmul, activations, reductions, shape surgery, gathering,
2-D/1-D convolution, ceil-mode max pooling and a windowed running sum.

All data stays in whatever float dtype the caller supplies; training code
uses float32, gradient checks and decoding use float64.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _result(data, parents, backward) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Backpropagate from this scalar through the graph."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node is not self and node._parents:
                # interior activations are not needed once propagated
                node.grad = None

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other, self.dtype))

    def __getitem__(self, idx):
        return take(self, idx)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A trainable tensor with a name used in checkpoints and diagnostics."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "param"):
        super().__init__(np.asarray(data), requires_grad=True)
        self.name = name


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x) if dtype is None else np.asarray(x, dtype=dtype)
    return Tensor(arr)


def _toposort(root: Tensor) -> list[Tensor]:
    # iterative DFS: graph depth grows with sequence length, so no recursion
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic ---------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return Tensor._result(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return Tensor._result(a.data - b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(-g)

    return Tensor._result(-a.data, (a,), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return Tensor._result(a.data * b.data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return Tensor._result(a.data / b.data, (a, b), backward)


# -- linear algebra -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor._result(a.data @ b.data, (a, b), backward)


# -- activations --------------------------------------------------------------


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - y * y))

    return Tensor._result(y, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * y * (1.0 - y))

    return Tensor._result(y, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return Tensor._result(a.data * mask, (a,), backward)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * y)

    return Tensor._result(y, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return Tensor._result(np.log(a.data), (a,), backward)


def sqrt_clamped(a: Tensor, grad_floor: float = 1e-6) -> Tensor:
    """sqrt(max(a, 0)); the derivative denominator is floored at `grad_floor`.

    Used for standard deviations so that exactly-constant inputs yield
    exactly zero instead of a jittered epsilon.
    """
    y = np.sqrt(np.maximum(a.data, 0.0))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / (2.0 * np.maximum(y, grad_floor)))

    return Tensor._result(y, (a,), backward)


def log_softmax(a: Tensor) -> Tensor:
    """Row-stable log-softmax along the last axis."""
    m = a.data.max(axis=-1, keepdims=True)
    z = a.data - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse

    def backward(g):
        if a.requires_grad:
            a._accumulate(g - np.exp(y) * g.sum(axis=-1, keepdims=True))

    return Tensor._result(y, (a,), backward)


def softmax(a: Tensor) -> Tensor:
    return exp(log_softmax(a))


# -- reductions ---------------------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape))

    return Tensor._result(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    elif isinstance(axis, int):
        n = a.data.shape[axis]
    else:
        n = int(np.prod([a.data.shape[ax] for ax in axis]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), Tensor(np.asarray(1.0 / n, dtype=a.dtype)))


# -- shape surgery ------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return Tensor._result(a.data.reshape(shape), (a,), backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inv))

    return Tensor._result(a.data.transpose(axes), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(piece)

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    def backward(g):
        pieces = np.split(g, len(tensors), axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(np.squeeze(piece, axis=axis))

    return Tensor._result(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def take(a: Tensor, idx) -> Tensor:
    """Numpy indexing (slices or integer arrays) with scatter-add backward."""

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accumulate(full)

    return Tensor._result(a.data[idx], (a,), backward)


def pad_time(a: Tensor, before: int, after: int, axis: int = 0, value: float = 0.0) -> Tensor:
    """Constant-pad a single axis."""
    widths = [(0, 0)] * a.data.ndim
    widths[axis] = (before, after)
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(before, before + a.data.shape[axis])
    sl = tuple(sl)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g[sl])

    return Tensor._result(np.pad(a.data, widths, constant_values=value), (a,), backward)


# -- convolution and pooling --------------------------------------------------


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """'Same' 2-D convolution, stride 1.

    x: (B, H, W, Cin); w: (kh, kw, Cin, Cout); b: (Cout,)
    """
    B, H, W, Ci = x.data.shape
    kh, kw, wci, Co = w.data.shape
    if wci != Ci:
        raise ValueError(f"conv2d channel mismatch: input {Ci}, kernel {wci}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    # (B, H, W, Ci, kh, kw) -> (B*H*W, kh*kw*Ci)
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(B * H * W, kh * kw * Ci)
    wmat = w.data.reshape(kh * kw * Ci, Co)
    out = cols @ wmat
    if b is not None:
        out = out + b.data
    out = out.reshape(B, H, W, Co)

    def backward(g):
        gflat = g.reshape(B * H * W, Co)
        if w.requires_grad:
            w._accumulate((cols.T @ gflat).reshape(kh, kw, Ci, Co))
        if b is not None and b.requires_grad:
            b._accumulate(gflat.sum(axis=0))
        if x.requires_grad:
            gcols = (gflat @ wmat.T).reshape(B, H, W, kh, kw, Ci)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + H, j : j + W, :] += gcols[:, :, :, i, j, :]
            x._accumulate(gxp[:, ph : ph + H, pw : pw + W, :])

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._result(out, parents, backward)


def maxpool2d_ceil(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; odd trailing rows/cols kept (ceil mode)."""
    B, H, W, C = x.data.shape
    Ho, Wo = (H + 1) // 2, (W + 1) // 2
    xp = np.pad(
        x.data,
        ((0, 0), (0, 2 * Ho - H), (0, 2 * Wo - W), (0, 0)),
        constant_values=-np.inf,
    )
    win = xp.reshape(B, Ho, 2, Wo, 2, C).transpose(0, 1, 3, 5, 2, 4).reshape(B, Ho, Wo, C, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        if not x.requires_grad:
            return
        gw = np.zeros_like(win)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        gxp = gw.reshape(B, Ho, Wo, C, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(B, 2 * Ho, 2 * Wo, C)
        x._accumulate(gxp[:, :H, :W, :])

    return Tensor._result(out, (x,), backward)


def conv1d_single_channel(x: Tensor, w: Tensor) -> Tensor:
    """'Same' 1-D convolution of a (B, T) signal with a (K, C) kernel -> (B, T, C)."""
    B, T = x.data.shape
    K, C = w.data.shape
    p = K // 2
    xp = np.pad(x.data, ((0, 0), (p, p)))
    cols = np.lib.stride_tricks.sliding_window_view(xp, K, axis=1)  # (B, T, K)
    out = cols.reshape(B * T, K) @ w.data

    def backward(g):
        gflat = g.reshape(B * T, C)
        if w.requires_grad:
            w._accumulate(cols.reshape(B * T, K).T @ gflat)
        if x.requires_grad:
            gcols = (gflat @ w.data.T).reshape(B, T, K)
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[:, k : k + T] += gcols[:, :, k]
            x._accumulate(gxp[:, p : p + T])

    return Tensor._result(out.reshape(B, T, C), (x, w), backward)


def windowed_sum(x: Tensor, radius: int) -> Tensor:
    """Running sum of rows over a clamped window [t-radius, t+radius].

    The operator is self-adjoint for a symmetric clamped window, so the
    backward pass is the same windowed sum applied to the gradient.
    """
    y = _windowed_sum_data(x.data, radius)

    def backward(g):
        if x.requires_grad:
            x._accumulate(_windowed_sum_data(g, radius))

    return Tensor._result(y, (x,), backward)


def _windowed_sum_data(x: np.ndarray, radius: int) -> np.ndarray:
    T = x.shape[0]
    c = np.cumsum(x.astype(np.float64), axis=0)
    hi = np.minimum(np.arange(T) + radius, T - 1)
    lo = np.arange(T) - radius - 1
    out = c[hi]
    valid = lo >= 0
    out[valid] -= c[lo[valid]]
    return out.astype(x.dtype)


def window_counts(T: int, radius: int) -> np.ndarray:
    """Number of frames inside each clamped window; pairs with windowed_sum."""
    t = np.arange(T)
    return (np.minimum(t + radius, T - 1) - np.maximum(t - radius, 0) + 1).astype(np.float64)


__all__ = [
    "Tensor",
    "Parameter",
    "as_tensor",
    "add",
    "sub",
    "neg",
    "mul",
    "div",
    "matmul",
    "tanh",
    "sigmoid",
    "relu",
    "exp",
    "log",
    "sqrt_clamped",
    "log_softmax",
    "softmax",
    "sum_",
    "mean_",
    "reshape",
    "transpose",
    "concat",
    "stack",
    "take",
    "pad_time",
    "conv2d",
    "maxpool2d_ceil",
    "conv1d_single_channel",
    "windowed_sum",
    "window_counts",
]
