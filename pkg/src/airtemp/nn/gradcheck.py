"""Central finite-difference gradient checks for layers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Layer, ReLU
from .params import ParamStore


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


@dataclass
class GradCheckResult:
    errors: dict[str, float]
    # probes whose +/- perturbation flipped a ReLU gate; central differences
    # are not defined across the kink so those coordinates are not compared
    skipped: dict[str, int] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values())


def check_gradients(layer: Layer, store: ParamStore, x: np.ndarray, rng: np.random.Generator,
                    step: float = 1e-3) -> GradCheckResult:
    """Compare analytic and finite-difference gradients of ``sum(r * layer(x))``.

    ``r`` is a fixed random projection so every output element contributes.
    Every parameter and the input (key ``"input"``) is checked.  Use a
    float64 store; the loss is accumulated in float64 either way.
    """
    x = np.array(x, dtype=store.dtype)
    gates = [l for l in (layer, *_walk(layer)) if isinstance(l, ReLU)]
    r = rng.standard_normal(layer.forward(x).shape)
    _clear(layer)

    def probe(inp):
        out = layer.forward(inp)
        pattern = tuple(g._cache.tobytes() for g in gates)
        _clear(layer)
        return float(np.sum(r * out, dtype=np.float64)), pattern

    store.zero_grad()
    layer.forward(x)
    analytic = {"input": layer.backward(r.astype(store.dtype))}
    analytic.update({n: store.grads[n].copy() for n in store})

    targets = {n: store[n] for n in store}
    targets["input"] = x
    result = GradCheckResult(errors={})
    for name, arr in targets.items():
        flat = arr.reshape(-1)
        numeric = np.zeros(flat.size)
        valid = np.ones(flat.size, dtype=bool)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus, pat_plus = probe(x)
            flat[i] = orig - step
            minus, pat_minus = probe(x)
            flat[i] = orig
            numeric[i] = (plus - minus) / (2 * step)
            valid[i] = pat_plus == pat_minus
        result.errors[name] = relative_error(analytic[name].reshape(-1)[valid], numeric[valid])
        result.skipped[name] = int((~valid).sum())
    return result


def _walk(layer):
    for attr in vars(layer).values():
        items = attr if isinstance(attr, list) else [attr]
        for item in items:
            if isinstance(item, Layer):
                yield item
                yield from _walk(item)


def _clear(layer):
    layer._cache = None
    for sub in _walk(layer):
        sub._cache = None
