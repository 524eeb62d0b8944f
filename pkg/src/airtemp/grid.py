"""C x H x W float32 raster stacks with a validity mask."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass
class GridStack:
    data: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim == 2:
            self.data = self.data[None]
        self.mask = np.ascontiguousarray(np.broadcast_to(self.mask, self.data.shape), dtype=bool)
        if self.data.ndim != 3:
            raise DimensionError(f"GridStack data must be C x H x W, got shape {self.data.shape}")

    @classmethod
    def full(cls, data) -> "GridStack":
        data = np.asarray(data, dtype=np.float32)
        return cls(data, np.ones(data.shape, dtype=bool))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def hw(self) -> tuple[int, int]:
        return self.data.shape[1:]

    def valid_fraction(self) -> float:
        return float(self.mask.mean())

    def channel(self, i: int) -> "GridStack":
        return GridStack(self.data[i:i + 1], self.mask[i:i + 1])

    def crop(self, rows: slice, cols: slice) -> "GridStack":
        return GridStack(self.data[:, rows, cols], self.mask[:, rows, cols])

    def filled(self, value: float = np.nan) -> np.ndarray:
        return np.where(self.mask, self.data, np.float32(value))
