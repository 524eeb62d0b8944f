"""Annual temperature cycle: T0 + A sin(2 pi t / N + phi) per pixel."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, SpecError
from .grid import GridStack


@dataclass
class AtcParamField:
    """Per-pixel cycle parameters plus the coarse-field amplifier coefficient."""

    T0: np.ndarray
    A: np.ndarray
    phi: np.ndarray
    rho: np.ndarray
    n_doy: int = 365

    def __post_init__(self):
        if self.n_doy not in (365, 366):
            raise SpecError(f"n_doy must be 365 or 366, got {self.n_doy}")
        shapes = {np.shape(g) for g in (self.T0, self.A, self.phi, self.rho)}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2:
            raise DimensionError(f"ATC grids must share one H x W shape, got {shapes}")

    @classmethod
    def constant(cls, shape, T0=0.0, A=0.0, phi=0.0, rho=0.0, n_doy=365) -> "AtcParamField":
        return cls(*(np.full(shape, v, dtype=np.float32) for v in (T0, A, phi, rho)), n_doy=n_doy)

    @property
    def shape(self) -> tuple[int, int]:
        return np.shape(self.T0)

    def is_finite(self) -> bool:
        return all(np.isfinite(g).all() for g in (self.T0, self.A, self.phi, self.rho))

    def canonical(self) -> "AtcParamField":
        """Resolve the (A, phi) ~ (-A, phi + pi) symmetry: A >= 0, phi in [-pi, pi)."""
        flip = np.asarray(self.A) < 0
        A = np.where(flip, -self.A, self.A)
        phi = np.where(flip, self.phi + np.pi, self.phi)
        phi = (phi + np.pi) % (2 * np.pi) - np.pi
        return AtcParamField(np.array(self.T0), A.astype(np.float32), phi.astype(np.float32),
                             np.array(self.rho), self.n_doy)

    def copy(self) -> "AtcParamField":
        return AtcParamField(*(np.array(g) for g in (self.T0, self.A, self.phi, self.rho)), n_doy=self.n_doy)


def angle_diff(a, b):
    """Smallest signed difference between two angles, in radians."""
    return (np.asarray(a) - np.asarray(b) + np.pi) % (2 * np.pi) - np.pi


def atc_eval(field: AtcParamField, pixel: tuple[int, int], t) -> float:
    row, col = pixel
    h, w = field.shape
    if not (0 <= row < h and 0 <= col < w):
        raise IndexError(f"pixel {pixel} outside {h} x {w} field")
    omega = 2.0 * np.pi / field.n_doy
    return float(field.T0[row, col]) + float(field.A[row, col]) * float(np.sin(omega * t + float(field.phi[row, col])))


def atc_values(field: AtcParamField, days) -> np.ndarray:
    """Cycle values for each day in ``days`` as a float32 D x H x W array."""
    days = np.asarray(days, dtype=np.float64)
    arg = 2.0 * np.pi * days[:, None, None] / field.n_doy + np.asarray(field.phi, dtype=np.float64)[None]
    out = np.asarray(field.T0, dtype=np.float64)[None] + np.asarray(field.A, dtype=np.float64)[None] * np.sin(arg)
    return out.astype(np.float32)


def atc_eval_stack(field: AtcParamField, days) -> GridStack:
    days = np.asarray(days)
    if days.size and (days.min() < 0 or days.max() >= field.n_doy):
        raise IndexError(f"day indices must lie in [0, {field.n_doy})")
    return GridStack.full(atc_values(field, days))


def harmonic_basis(days, n_doy: int) -> np.ndarray:
    """D x 3 design matrix [1, sin, cos] of the annual cycle at ``days``."""
    t = 2.0 * np.pi * np.asarray(days, dtype=np.float64) / n_doy
    return np.stack([np.ones_like(t), np.sin(t), np.cos(t)], axis=1)


def cycle_projector(days, n_doy: int) -> np.ndarray:
    """D x D projector onto the complement of the annual-cycle span."""
    basis = harmonic_basis(days, n_doy)
    return np.eye(len(basis)) - basis @ np.linalg.pinv(basis)
