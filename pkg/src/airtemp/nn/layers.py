"""Layers with cached forward passes and hand-written backward passes.

Each layer registers its parameters in a shared :class:`ParamStore` under
a name prefix and accumulates gradients there during ``backward``.
Calling ``backward`` before ``forward`` raises :class:`StateError`.
"""
from __future__ import annotations

import math

import numpy as np

from .. import kernels
from ..errors import DimensionError, StateError
from . import functional as F
from .params import ParamStore, glorot_uniform


class Layer:
    kind = "layer"

    def __init__(self):
        self._cache = None

    def _take_cache(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called without a recorded forward pass")
        cache, self._cache = self._cache, None
        return cache

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)


class Dense(Layer):
    kind = "dense"

    def __init__(self, store: ParamStore, name: str, f_in: int, f_out: int, rng: np.random.Generator):
        super().__init__()
        self.store = store
        self.f_in, self.f_out = f_in, f_out
        self.w_name, self.b_name = f"{name}.w", f"{name}.b"
        store.add(self.w_name, glorot_uniform(rng, (f_out, f_in), f_in, f_out))
        store.add(self.b_name, np.zeros(f_out))

    def forward(self, x):
        x = np.asarray(x, dtype=self.store.dtype)
        self._cache = x
        return F.dense_forward(x, self.store[self.w_name], self.store[self.b_name])

    def backward(self, grad):
        x = self._take_cache()
        self.store.accumulate(self.w_name, grad.T @ x)
        self.store.accumulate(self.b_name, grad.sum(axis=0))
        return grad @ self.store[self.w_name]


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._cache = x > 0
        return F.relu_forward(x)

    def backward(self, grad):
        return grad * self._take_cache()


class Conv3x3(Layer):
    kind = "conv3x3"

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int, rng: np.random.Generator):
        super().__init__()
        self.store = store
        self.c_in, self.c_out = c_in, c_out
        self.w_name, self.b_name = f"{name}.w", f"{name}.b"
        store.add(self.w_name, glorot_uniform(rng, (c_out, c_in, 3, 3), c_in * 9, c_out * 9))
        store.add(self.b_name, np.zeros(c_out))

    def forward(self, x):
        out, cols = F.conv2d_forward(x, self.store[self.w_name], self.store[self.b_name])
        self._cache = (cols, x.shape)
        return out

    def backward(self, grad):
        cols, (c, h, w) = self._take_cache()
        g = grad.reshape(self.c_out, h * w)
        self.store.accumulate(self.w_name, (g @ cols.T).reshape(self.c_out, self.c_in, 3, 3))
        self.store.accumulate(self.b_name, g.sum(axis=1))
        wmat = self.store[self.w_name].reshape(self.c_out, self.c_in * 9)
        dcols = np.ascontiguousarray(wmat.T @ g)
        return kernels.col2im3x3(dcols, c, h, w)


class Conv1x1(Layer):
    """Learned channel projection used on residual skips."""

    kind = "conv1x1"

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int, rng: np.random.Generator):
        super().__init__()
        self.store = store
        self.c_in, self.c_out = c_in, c_out
        self.w_name, self.b_name = f"{name}.w", f"{name}.b"
        store.add(self.w_name, glorot_uniform(rng, (c_out, c_in), c_in, c_out))
        store.add(self.b_name, np.zeros(c_out))

    def forward(self, x):
        x = np.asarray(x, dtype=self.store.dtype)
        self._cache = x
        return F.conv1x1_forward(x, self.store[self.w_name], self.store[self.b_name])

    def backward(self, grad):
        x = self._take_cache()
        c, h, w = x.shape
        g = grad.reshape(self.c_out, h * w)
        self.store.accumulate(self.w_name, g @ x.reshape(c, h * w).T)
        self.store.accumulate(self.b_name, g.sum(axis=1))
        return (self.store[self.w_name].T @ g).reshape(c, h, w)


class SelfAttention(Layer):
    kind = "self_attention"

    def __init__(self, store: ParamStore, name: str, rng: np.random.Generator, width: int = F.ATTN_WIDTH):
        super().__init__()
        if width != F.ATTN_WIDTH:
            raise DimensionError(f"self-attention width must be {F.ATTN_WIDTH}, got {width}")
        self.store = store
        self.names = tuple(f"{name}.{p}" for p in ("wq", "wk", "wv"))
        d = F.TOKEN_DIM
        for n in self.names:
            store.add(n, glorot_uniform(rng, (d, d), d, d))

    def forward(self, x):
        x = np.asarray(x, dtype=self.store.dtype)
        wq, wk, wv = (self.store[n] for n in self.names)
        out, cache = F.self_attention_forward(x, wq, wk, wv)
        self._cache = cache
        return out

    def backward(self, grad):
        tokens, q, k, v, attn = self._take_cache()
        wq, wk, wv = (self.store[n] for n in self.names)
        b = grad.shape[0]
        d_mixed = grad.reshape(b, F.N_TOKENS, F.TOKEN_DIM)
        d_attn = d_mixed @ v.transpose(0, 2, 1)
        d_v = attn.transpose(0, 2, 1) @ d_mixed
        d_scores = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
        d_scores /= math.sqrt(F.TOKEN_DIM)
        d_q = d_scores @ k
        d_k = d_scores.transpose(0, 2, 1) @ q
        flat = tokens.reshape(-1, F.TOKEN_DIM)
        for n, dp in zip(self.names, (d_q, d_k, d_v)):
            self.store.accumulate(n, flat.T @ dp.reshape(-1, F.TOKEN_DIM))
        d_tokens = d_q @ wq.T + d_k @ wk.T + d_v @ wv.T
        return grad + d_tokens.reshape(b, F.ATTN_WIDTH)


class ResidualBlock(Layer):
    """inner(x) -> ReLU -> inner, plus a skip path, then an optional ReLU.

    ``spatial=True`` builds 3x3 convolutions over C x H x W inputs with a
    learned 1x1 skip projection when the channel count changes; otherwise
    dense layers over B x F inputs.  ``final_relu=False`` leaves the block
    output signed, which the last block of a regression head needs.
    """

    kind = "residual_block"

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int, rng: np.random.Generator,
                 spatial: bool = True, final_relu: bool = True):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.spatial = spatial
        inner = Conv3x3 if spatial else Dense
        self.first = inner(store, f"{name}.conv1" if spatial else f"{name}.fc1", c_in, c_out, rng)
        self.act = ReLU()
        self.second = inner(store, f"{name}.conv2" if spatial else f"{name}.fc2", c_out, c_out, rng)
        self.skip = None
        if c_in != c_out:
            proj = Conv1x1 if spatial else Dense
            self.skip = proj(store, f"{name}.proj", c_in, c_out, rng)
        self.out_act = ReLU() if final_relu else None

    @property
    def output_layers(self):
        return [l for l in (self.second, self.skip) if l is not None]

    def forward(self, x):
        h = self.second.forward(self.act.forward(self.first.forward(x)))
        s = self.skip.forward(x) if self.skip is not None else x
        out = h + s
        if self.out_act is not None:
            out = self.out_act.forward(out)
        self._cache = True
        return out

    def backward(self, grad):
        self._take_cache()
        if self.out_act is not None:
            grad = self.out_act.backward(grad)
        dx = self.first.backward(self.act.backward(self.second.backward(grad)))
        if self.skip is not None:
            dx = dx + self.skip.backward(grad)
        else:
            dx = dx + grad
        return dx


class Sequential(Layer):
    kind = "sequential"

    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        self._cache = True
        return x

    def backward(self, grad):
        self._take_cache()
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


def backward(model: Layer, grad_output) -> np.ndarray:
    """Propagate ``d loss / d output`` through ``model``; gradients land in its store."""
    return model.backward(np.asarray(grad_output))


def clear_cache(layer: Layer) -> None:
    """Drop recorded forward state in ``layer`` and every sub-layer (inference-only passes)."""
    layer._cache = None
    for attr in vars(layer).values():
        if isinstance(attr, Layer):
            clear_cache(attr)
        elif isinstance(attr, list):
            for item in attr:
                if isinstance(item, Layer):
                    clear_cache(item)
