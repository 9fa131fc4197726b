"""Network building blocks: linear, convolution, pooling, normalization,
multi-head self-attention and the standard post-norm encoder block.

Weights use fan-in-scaled uniform initialization with zero biases; every
constructor takes an explicit numpy Generator so runs are reproducible.
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, concat, conv2d, maxpool_width2, softmax


class Module:
    """Base class tracking parameters and submodules by attribute name."""

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self.__dict__.setdefault("_params", {})[name] = value
        elif isinstance(value, Module):
            self.__dict__.setdefault("_children", {})[name] = value
        elif isinstance(value, (list, tuple)) and value and all(
            isinstance(v, Module) for v in value
        ):
            for i, v in enumerate(value):
                self.__dict__.setdefault("_children", {})[f"{name}.{i}"] = v
        object.__setattr__(self, name, value)

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, p in self.__dict__.get("_params", {}).items():
            out[name] = p
        for prefix, child in self.__dict__.get("_children", {}).items():
            for name, p in child.parameters().items():
                out[f"{prefix}.{name}"] = p
        return out

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        """Assign parameters by name; any shape mismatch is a hard error."""
        params = self.parameters()
        for name, value in state.items():
            if name not in params:
                raise KeyError(f"unknown parameter {name!r}")
            if params[name].shape != value.shape:
                raise ValueError(f"shape mismatch for {name!r}: "
                                 f"{params[name].shape} vs {value.shape}")
            params[name].data = value.astype(params[name].dtype)

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.weight = _uniform(rng, (n_in, n_out), n_in, dtype)
        self.bias = _zeros((n_out,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if len(x.shape) == 2:
            return x @ self.weight + self.bias
        flat = x.reshape(-1, x.shape[-1])
        out = flat @ self.weight + self.bias
        return out.reshape(*x.shape[:-1], self.weight.shape[1])


class Conv2d(Module):
    """Stride-1 2-D cross-correlation with per-axis zero padding."""

    def __init__(self, c_in: int, c_out: int, kernel: tuple[int, int],
                 rng: np.random.Generator, padding: tuple[int, int] = (0, 0),
                 dtype=np.float32):
        kh, kw = kernel
        self.weight = _uniform(rng, (c_out, c_in, kh, kw), c_in * kh * kw, dtype)
        self.bias = _zeros((c_out,), dtype)
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.padding)


class MaxPoolWidth2(Module):
    def __call__(self, x: Tensor) -> Tensor:
        return maxpool_width2(x)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.shift = _zeros((dim,), dtype)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / (var + self.eps).sqrt() * self.gain + self.shift


class MultiHeadSelfAttention(Module):
    """Per-head scaled dot-product attention with an output projection."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 dtype=np.float32):
        if dim % heads != 0:
            raise ValueError(f"model width {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.query = Linear(dim, dim, rng, dtype)
        self.key = Linear(dim, dim, rng, dtype)
        self.value = Linear(dim, dim, rng, dtype)
        self.out = Linear(dim, dim, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        squeeze = len(x.shape) == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
        b, length, dim = x.shape
        dh = dim // self.heads

        def split(t: Tensor) -> Tensor:
            return t.reshape(b, length, self.heads, dh).transpose(0, 2, 1, 3)

        q, k, v = split(self.query(x)), split(self.key(x)), split(self.value(x))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
        attn = softmax(scores, axis=-1)
        context = (attn @ v).transpose(0, 2, 1, 3).reshape(b, length, dim)
        out = self.out(context)
        return out.reshape(length, dim) if squeeze else out

    def attention_weights(self, x: Tensor) -> np.ndarray:
        """Attention matrix per head, for inspection (no gradients)."""
        if len(x.shape) == 2:
            x = x.reshape(1, *x.shape)
        b, length, dim = x.shape
        dh = dim // self.heads
        q = self.query(x).data.reshape(b, length, self.heads, dh).transpose(0, 2, 1, 3)
        k = self.key(x).data.reshape(b, length, self.heads, dh).transpose(0, 2, 1, 3)
        scores = q @ np.swapaxes(k, -1, -2) / np.sqrt(dh)
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        return e / e.sum(axis=-1, keepdims=True)


class TransformerBlock(Module):
    """Post-norm encoder block: attention and feed-forward sublayers, each
    wrapped in residual + layer norm."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 ff_mult: int = 4, dtype=np.float32):
        self.attn = MultiHeadSelfAttention(dim, heads, rng, dtype)
        self.norm1 = LayerNorm(dim, dtype)
        self.ff1 = Linear(dim, ff_mult * dim, rng, dtype)
        self.ff2 = Linear(ff_mult * dim, dim, rng, dtype)
        self.norm2 = LayerNorm(dim, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        x = self.norm1(x + self.attn(x))
        return self.norm2(x + self.ff2(self.ff1(x).relu()))


__all__ = [
    "Module", "Linear", "Conv2d", "MaxPoolWidth2", "LayerNorm",
    "MultiHeadSelfAttention", "TransformerBlock", "concat",
]
