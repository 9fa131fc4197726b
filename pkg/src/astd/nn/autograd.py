"""Reverse-mode automatic differentiation over numpy arrays.

Tensors form a DAG; each op records a closure that routes the output
gradient to its parents. backward() runs the closures in reverse
topological order. Ops preserve the input dtype so the same graph runs in
float32 for training and float64 for finite-difference verification.
"""

from __future__ import annotations

import numpy as np

_CHECK_FINITE = False


def set_finite_checks(enabled: bool) -> None:
    """Validate every op output for NaN/inf (slow; meant for tests)."""
    global _CHECK_FINITE
    _CHECK_FINITE = enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward
        if _CHECK_FINITE and not np.all(np.isfinite(self.data)):
            raise FloatingPointError("non-finite values produced by an op")

    # -- graph mechanics ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() on a non-scalar needs an explicit gradient")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def accumulate(self, grad: np.ndarray) -> None:
        if self.requires_grad:
            self.grad = grad if self.grad is None else self.grad + grad

    # -- arithmetic --------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        out = Tensor(self.data + other.data, _parents=(self, other))
        def backward(g):
            self.accumulate(_unbroadcast(g, self.shape))
            other.accumulate(_unbroadcast(g, other.shape))
        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, _parents=(self,))
        out._backward = lambda g: self.accumulate(-g)
        return out

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        out = Tensor(self.data * other.data, _parents=(self, other))
        def backward(g):
            self.accumulate(_unbroadcast(g * other.data, self.shape))
            other.accumulate(_unbroadcast(g * self.data, other.shape))
        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        out = Tensor(self.data / other.data, _parents=(self, other))
        def backward(g):
            self.accumulate(_unbroadcast(g / other.data, self.shape))
            other.accumulate(_unbroadcast(-g * self.data / other.data**2, other.shape))
        out._backward = backward
        return out

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, exponent: float):
        out = Tensor(self.data**exponent, _parents=(self,))
        out._backward = lambda g: self.accumulate(g * exponent * self.data ** (exponent - 1))
        return out

    def __matmul__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(np.asarray(other, dtype=self.data.dtype))
        if self.data.ndim != other.data.ndim or (
            self.data.ndim > 2 and self.shape[:-2] != other.shape[:-2]
        ):
            raise ValueError("matmul requires matching stacked dimensions")
        out = Tensor(self.data @ other.data, _parents=(self, other))
        def backward(g):
            self.accumulate(g @ _swap_last(other.data))
            other.accumulate(_swap_last(self.data) @ g)
        out._backward = backward
        return out

    # -- elementwise nonlinearities -----------------------------------------

    def exp(self):
        value = np.exp(self.data)
        out = Tensor(value, _parents=(self,))
        out._backward = lambda g: self.accumulate(g * value)
        return out

    def log(self):
        out = Tensor(np.log(self.data), _parents=(self,))
        out._backward = lambda g: self.accumulate(g / self.data)
        return out

    def sqrt(self):
        value = np.sqrt(self.data)
        out = Tensor(value, _parents=(self,))
        out._backward = lambda g: self.accumulate(g * 0.5 / value)
        return out

    def relu(self):
        mask = self.data > 0
        out = Tensor(np.where(mask, self.data, 0.0), _parents=(self,))
        out._backward = lambda g: self.accumulate(g * mask)
        return out

    def sigmoid(self):
        value = 1.0 / (1.0 + np.exp(-self.data))
        out = Tensor(value, _parents=(self,))
        out._backward = lambda g: self.accumulate(g * value * (1.0 - value))
        return out

    def clip(self, lo: float, hi: float):
        mask = (self.data > lo) & (self.data < hi)
        out = Tensor(np.clip(self.data, lo, hi), _parents=(self,))
        out._backward = lambda g: self.accumulate(g * mask)
        return out

    # -- reductions and shape ops -------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), _parents=(self,))
        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self.accumulate(np.broadcast_to(g, self.shape).copy())
        out._backward = backward
        return out

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else np.prod(
            [self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), _parents=(self,))
        out._backward = lambda g: self.accumulate(g.reshape(self.shape))
        return out

    def transpose(self, *axes):
        inverse = np.argsort(axes)
        out = Tensor(self.data.transpose(*axes), _parents=(self,))
        out._backward = lambda g: self.accumulate(g.transpose(*inverse))
        return out

    def __getitem__(self, key):
        out = Tensor(self.data[key], _parents=(self,))
        def backward(g):
            full = np.zeros_like(self.data)
            np.add.at(full, key, g)
            self.accumulate(full)
        out._backward = backward
        return out

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad={self.grad is not None})"


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 _parents=tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            t.accumulate(g[tuple(index)])
    out._backward = backward
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - x.data.max(axis=axis, keepdims=True)
    e = shifted.exp()
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - x.data.max(axis=axis, keepdims=True)
    return shifted - shifted.exp().sum(axis=axis, keepdims=True).log()


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None,
           padding: tuple[int, int] = (0, 0)) -> Tensor:
    """Stride-1 cross-correlation of (B, C, H, W) with (C', C, kh, kw).

    Lowered to one GEMM over gathered patch columns; the column matrix is
    kept for the weight-gradient GEMM.
    """
    ph, pw = padding
    co, ci, kh, kw = weight.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
    b, c, h, w = xp.shape
    oh, ow = h - kh + 1, w - kw + 1
    if oh < 1 or ow < 1:
        raise ValueError(f"kernel {kh}x{kw} does not fit padded input {h}x{w}")
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * kh * kw)
    kernel = weight.data.reshape(co, ci * kh * kw).T
    out_data = cols @ kernel
    if bias is not None:
        out_data += bias.data[None, :]
    out_data = out_data.reshape(b, oh, ow, co).transpose(0, 3, 1, 2)
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = Tensor(np.ascontiguousarray(out_data), _parents=parents)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(b * oh * ow, co)
        if weight.requires_grad:
            dw = (cols.T @ g2).T.reshape(co, ci, kh, kw)
            weight.accumulate(dw)
        if bias is not None and bias.requires_grad:
            bias.accumulate(g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g2 @ kernel.T).reshape(b, oh, ow, c, kh, kw)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + oh, j:j + ow] += dcols[:, :, :, :, i, j].transpose(
                        0, 3, 1, 2)
            if ph or pw:
                dxp = dxp[:, :, ph:ph + x.shape[2], pw:pw + x.shape[3]]
            x.accumulate(dxp)

    out._backward = backward
    return out


def maxpool_width2(x: Tensor) -> Tensor:
    """Max over non-overlapping width pairs; an odd trailing column drops."""
    b, c, h, w = x.shape
    w2 = w // 2
    if w2 < 1:
        raise ValueError("width must be at least 2")
    left = x.data[:, :, :, 0:2 * w2:2]
    right = x.data[:, :, :, 1:2 * w2:2]
    take_left = left >= right
    out = Tensor(np.where(take_left, left, right), _parents=(x,))

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[:, :, :, 0:2 * w2:2] = np.where(take_left, g, 0.0)
        dx[:, :, :, 1:2 * w2:2] = np.where(take_left, 0.0, g)
        x.accumulate(dx)

    out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _swap_last(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)
