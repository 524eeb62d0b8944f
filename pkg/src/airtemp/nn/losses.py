"""L1 objectives returning (value, gradient w.r.t. the prediction)."""
from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import DegenerateInputError, DimensionError


def masked_l1(pred, obs, mask):
    """Mean absolute error over ``mask == 1`` entries, with its gradient.

    The value is accumulated in float64; the gradient has ``pred``'s dtype.
    """
    pred = np.asarray(pred)
    if np.shape(obs) != pred.shape or np.shape(mask) != pred.shape:
        raise DimensionError(f"shape mismatch: pred {pred.shape}, obs {np.shape(obs)}, mask {np.shape(mask)}")
    loss, grad, n = kernels.masked_l1(pred, np.asarray(obs, dtype=pred.dtype), mask)
    if n == 0:
        raise DegenerateInputError("mask selects no valid pixels")
    return loss, grad


def l1_loss(pred, target):
    pred = np.asarray(pred)
    return masked_l1(pred, target, np.ones(pred.shape, dtype=bool))
