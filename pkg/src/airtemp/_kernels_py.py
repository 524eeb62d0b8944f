"""Pure-numpy implementations of the hot kernels.

These are the reference versions; ``_kernels.pyx`` must agree with them
to floating-point rounding (exactly, for the integer-valued selection).
"""
from __future__ import annotations

import numpy as np


def im2col3x3(x):
    """Unfold a C x H x W image into (C*9, H*W) patches with zero padding.

    Row ``c*9 + ky*3 + kx`` holds ``x[c, y+ky-1, x+kx-1]``.
    """
    c, h, w = x.shape
    padded = np.zeros((c, h + 2, w + 2), dtype=x.dtype)
    padded[:, 1:-1, 1:-1] = x
    cols = np.empty((c, 9, h, w), dtype=x.dtype)
    for ky in range(3):
        for kx in range(3):
            cols[:, ky * 3 + kx] = padded[:, ky:ky + h, kx:kx + w]
    return cols.reshape(c * 9, h * w)


def col2im3x3(cols, c, h, w):
    """Adjoint of :func:`im2col3x3`: scatter-add patches back onto the image."""
    cols = cols.reshape(c, 9, h, w)
    padded = np.zeros((c, h + 2, w + 2), dtype=cols.dtype)
    for ky in range(3):
        for kx in range(3):
            padded[:, ky:ky + h, kx:kx + w] += cols[:, ky * 3 + kx]
    return np.ascontiguousarray(padded[:, 1:-1, 1:-1])


def masked_l1(pred, obs, mask):
    """Return (mean |pred - obs| over mask, d loss / d pred, n_valid)."""
    m = np.asarray(mask, dtype=bool)
    n = int(m.sum())
    if n == 0:
        return float("nan"), np.zeros_like(pred), 0
    diff = pred.astype(np.float64) - obs.astype(np.float64)
    loss = float(np.abs(diff[m]).sum() / n)
    grad = (np.sign(diff) * m / n).astype(pred.dtype)
    return loss, grad, n


def select_ranks(values, lo, hi):
    """Order statistics ``lo`` and ``hi`` (0-based) along axis 0 of a K x P array."""
    if hi < lo:
        lo, hi = hi, lo
    k = values.shape[0]
    if not 0 <= lo < k or hi >= k:
        raise IndexError(f"ranks ({lo}, {hi}) outside ensemble of size {k}")
    part = np.partition(values, (lo, hi), axis=0)
    return part[lo].copy(), part[hi].copy()
