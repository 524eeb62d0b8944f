"""Named parameters, their gradients, and the Adam optimizer state."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from ..errors import DimensionError, StateError

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float32):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class ParamStore:
    """A flat ``name -> array`` map of trainable parameters.

    Gradients are accumulated by layer ``backward`` calls and consumed by
    :meth:`adam_step`, after which they are cleared; stepping again without
    a new backward pass raises :class:`StateError`.  Adam moments are kept
    in float64 regardless of the parameter dtype.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray | None] = {}
        self.frozen: set[str] = set()
        self.lr_scale: dict[str, float] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already registered")
        arr = np.ascontiguousarray(value, dtype=self.dtype)
        self.params[name] = arr
        self.grads[name] = None
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def set(self, name: str, value) -> None:
        """Overwrite a parameter in place (layers keep references to it)."""
        target = self.params[name]
        value = np.asarray(value)
        if value.shape != target.shape:
            raise DimensionError(f"{name}: shape {value.shape} != {target.shape}")
        target[...] = value

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        target = self.params[name]
        if grad.shape != target.shape:
            raise DimensionError(f"gradient for {name}: shape {grad.shape} != {target.shape}")
        current = self.grads[name]
        if current is None:
            self.grads[name] = np.array(grad, dtype=self.dtype)
        else:
            current += grad

    def zero_grad(self) -> None:
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)

    def has_grads(self) -> bool:
        return any(g is not None for g in self.grads.values())

    def freeze(self, prefix: str) -> None:
        """Exclude every parameter whose name starts with ``prefix`` from updates."""
        self.frozen.update(n for n in self.params if n.startswith(prefix))

    def set_lr_scale(self, prefix: str, scale: float) -> None:
        """Multiply the learning rate of every parameter under ``prefix`` by ``scale``."""
        for n in self.params:
            if n.startswith(prefix):
                self.lr_scale[n] = float(scale)

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load(self, values: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(values)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k in self.params:
            self.set(k, values[k])

    def adam_step(self, lr: float, beta1: float = BETA1, beta2: float = BETA2, eps: float = EPS) -> None:
        if not self.has_grads():
            raise StateError("adam_step called without gradients; run backward first")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - beta1 ** t
        c2 = 1.0 - beta2 ** t
        for name, p in self.params.items():
            g = self.grads[name]
            if name in self.frozen:
                continue
            if name not in self._m:
                self._m[name] = np.zeros(p.shape, dtype=np.float64)
                self._v[name] = np.zeros(p.shape, dtype=np.float64)
            m, v = self._m[name], self._v[name]
            g64 = np.zeros(p.shape) if g is None else g.astype(np.float64)
            m *= beta1
            m += (1.0 - beta1) * g64
            v *= beta2
            v += (1.0 - beta2) * g64 * g64
            update = lr * self.lr_scale.get(name, 1.0) * (m / c1) / (np.sqrt(v / c2) + eps)
            p[...] = (p.astype(np.float64) - update).astype(p.dtype)
        for name in self.grads:
            self.grads[name] = None

    def moments(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return self._m[name], self._v[name]


def adam_step(params: ParamStore, lr: float) -> ParamStore:
    params.adam_step(lr)
    return params
