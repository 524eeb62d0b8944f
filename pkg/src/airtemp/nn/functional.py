"""Stateless forward maps for each layer kind."""
from __future__ import annotations

import math

import numpy as np

from .. import kernels
from ..errors import DimensionError

N_TOKENS = 8
TOKEN_DIM = 8
ATTN_WIDTH = N_TOKENS * TOKEN_DIM


def conv2d_forward(x, weights, bias):
    """3x3 same-padded convolution of a C_in x H x W image.

    Returns the output and the unfolded patches (needed for the backward pass).
    """
    x = np.asarray(x)
    if x.ndim != 3:
        raise DimensionError(f"conv input must be C x H x W, got shape {x.shape}")
    c_out, c_in = weights.shape[:2]
    if weights.shape[2:] != (3, 3):
        raise DimensionError(f"conv kernels must be 3x3, got {weights.shape[2:]}")
    if x.shape[0] != c_in:
        raise DimensionError(f"conv expects {c_in} input channels, got {x.shape[0]}")
    _, h, w = x.shape
    cols = kernels.im2col3x3(np.ascontiguousarray(x, dtype=weights.dtype))
    out = weights.reshape(c_out, c_in * 9) @ cols
    out += bias[:, None]
    return out.reshape(c_out, h, w), cols


def conv1x1_forward(x, weights, bias):
    c_out, c_in = weights.shape
    if x.ndim != 3 or x.shape[0] != c_in:
        raise DimensionError(f"1x1 projection expects {c_in} channels, got shape {x.shape}")
    _, h, w = x.shape
    out = weights @ x.reshape(c_in, h * w) + bias[:, None]
    return out.reshape(c_out, h, w)


def dense_forward(x, weights, bias):
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != weights.shape[1]:
        raise DimensionError(f"dense expects B x {weights.shape[1]}, got shape {x.shape}")
    return x @ weights.T + bias


def relu_forward(x):
    return np.maximum(x, 0)


def softmax(s, axis=-1):
    z = s - s.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def self_attention_forward(x, wq, wk, wv):
    """Single-head attention over 8 tokens of width 8, with a residual add.

    ``x`` is B x 64; each row is read as an 8 x 8 token matrix.
    Returns the output and the cache used by the backward pass.
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != ATTN_WIDTH:
        raise DimensionError(f"self-attention expects width {ATTN_WIDTH}, got shape {x.shape}")
    b = x.shape[0]
    tokens = x.reshape(b, N_TOKENS, TOKEN_DIM)
    q = tokens @ wq
    k = tokens @ wk
    v = tokens @ wv
    scores = q @ k.transpose(0, 2, 1) / math.sqrt(TOKEN_DIM)
    attn = softmax(scores)
    mixed = attn @ v
    out = x + mixed.reshape(b, ATTN_WIDTH)
    return out, (tokens, q, k, v, attn)
