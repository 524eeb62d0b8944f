"""Snapshot ensembles: weighted mean, order-statistic intervals, coverage calibration."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .atc import AtcParamField, atc_values
from .errors import CalibrationError, ConfigError, DegenerateInputError, DimensionError

DEFAULT_K = 200
MIN_CALIBRATION_POINTS = 100


@dataclass
class IntervalCalibration:
    """Ranks are 1-based order statistics; ``lam`` scales both half-widths."""

    lam: float = 1.0
    lower_rank: int = 5
    upper_rank: int = 195
    target_coverage: float = 0.95
    raw_coverage: float = float("nan")
    calibrated_coverage: float = float("nan")
    n_points: int = 0

    def __post_init__(self):
        if not 1 <= self.lower_rank < self.upper_rank:
            raise ConfigError(f"need 1 <= lower_rank < upper_rank, got {self.lower_rank}, {self.upper_rank}")
        if not self.lam > 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")

    @classmethod
    def for_size(cls, k: int, target: float = 0.95, **kw) -> "IntervalCalibration":
        """Ranks bracketing the central ``target`` mass of ``k`` members (5, 195 for k=200)."""
        if k < 2:
            raise ConfigError(f"interval construction needs at least 2 snapshots, got {k}")
        tail = (1.0 - target) / 2.0
        lower = min(max(1, int(round(tail * k))), k - 1)
        upper = min(k, max(lower + 1, int(round((1.0 - tail) * k))))
        return cls(lower_rank=lower, upper_rank=upper, target_coverage=target, **kw)


@dataclass
class SnapshotEnsemble:
    """Snapshots of an amplifier model captured along one training run.

    Each member stores its cycle parameters and amplifier coefficient
    (K x H x W) and the response of its convolutional head to the tile's
    static reflectance (K x D x H x W, ``None`` when the head is disabled).
    A member's prediction for any coarse field is therefore
    ``cycle + rho * coarse + head``.
    """

    T0: np.ndarray
    A: np.ndarray
    phi: np.ndarray
    rho: np.ndarray
    head: np.ndarray | None
    days: np.ndarray
    n_doy: int
    weights: np.ndarray | None = None
    epochs: list[int] = field(default_factory=list)
    calibration: IntervalCalibration | None = None

    def __post_init__(self):
        k = len(self.T0)
        if self.weights is None:
            self.weights = np.full(k, 1.0 / k)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (k,):
            raise DimensionError(f"{len(self.weights)} weights for {k} snapshots")
        if (self.weights < 0).any() or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ConfigError("snapshot weights must be non-negative and sum to 1")

    def __len__(self) -> int:
        return len(self.T0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.T0.shape[1:]

    def member_field(self, k: int) -> AtcParamField:
        return AtcParamField(self.T0[k], self.A[k], self.phi[k], self.rho[k], self.n_doy)

    def predictions(self, coarse: np.ndarray, day_index=slice(None)) -> np.ndarray:
        """K x d x H x W member predictions for the selected day channels."""
        coarse = np.asarray(coarse, dtype=np.float32)[day_index]
        days = np.asarray(self.days)[day_index]
        out = np.empty((len(self),) + coarse.shape, dtype=np.float32)
        for k in range(len(self)):
            out[k] = atc_values(self.member_field(k), days) + self.rho[k][None] * coarse
            if self.head is not None:
                out[k] += self.head[k][day_index]
        return out


def ensemble_mean(predictions, weights=None) -> np.ndarray:
    """Weighted mean over the leading (snapshot) axis, accumulated in float64."""
    preds = np.asarray(predictions, dtype=np.float64)
    k = preds.shape[0]
    if k < 1:
        raise DegenerateInputError("empty ensemble")
    w = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (k,):
        raise DimensionError(f"{w.size} weights for {k} predictions")
    if np.all(w == w[0]) and abs(w[0] * k - 1.0) < 1e-12:
        # equal weights: sum then divide, exact where 1/k is not representable
        return preds.sum(axis=0) / k
    return np.tensordot(w, preds, axes=(0, 0))


def raw_interval(predictions, mean, calib: IntervalCalibration):
    """Half-widths (d_L, d_U) from the ``lower_rank``/``upper_rank`` order statistics.

    Both are clamped at zero when the mean falls outside the rank window.
    """
    preds = np.asarray(predictions)
    k = preds.shape[0]
    if k < calib.upper_rank:
        raise ConfigError(f"ensemble of {k} cannot supply order statistic {calib.upper_rank}")
    lo, hi = kernels.select_ranks(preds, calib.lower_rank - 1, calib.upper_rank - 1)
    mean = np.asarray(mean, dtype=np.float64)
    d_lower = np.maximum(mean - lo.astype(np.float64), 0.0)
    d_upper = np.maximum(hi.astype(np.float64) - mean, 0.0)
    return d_lower, d_upper


def critical_ratios(mean, d_lower, d_upper, obs) -> np.ndarray:
    """Smallest lambda that brings each observation inside its interval."""
    mean, d_lower, d_upper, obs = (np.asarray(a, dtype=np.float64).ravel() for a in (mean, d_lower, d_upper, obs))
    resid = obs - mean
    width = np.where(resid > 0, d_upper, d_lower)
    gap = np.abs(resid)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = gap / width
    r = np.where(gap == 0, 0.0, np.where(width > 0, r, np.inf))
    return r


def _covered(mean, d_lower, d_upper, obs, lam: float) -> np.ndarray:
    mean, d_lower, d_upper, obs = (np.asarray(a, dtype=np.float64).ravel() for a in (mean, d_lower, d_upper, obs))
    return (obs >= mean - lam * d_lower) & (obs <= mean + lam * d_upper)


def coverage(mean, d_lower, d_upper, obs, lam: float) -> float:
    """Fraction of observations inside [mean - lam*d_L, mean + lam*d_U]."""
    return float(_covered(mean, d_lower, d_upper, obs, lam).mean())


def calibrate_lambda(mean, d_lower, d_upper, obs, target: float = 0.95) -> float:
    """Smallest lambda whose scaled intervals cover ``target`` of the observations.

    Exact: lambda is the ceil(target * N)-th smallest critical ratio, nudged
    up by whole ulps if float rounding of ``lam * d`` would drop a point.
    """
    r = critical_ratios(mean, d_lower, d_upper, obs)
    n = r.size
    if n < MIN_CALIBRATION_POINTS:
        raise DegenerateInputError(f"calibration needs >= {MIN_CALIBRATION_POINTS} points, got {n}")
    k = math.ceil(target * n - 1e-9)
    lam = float(np.partition(r, k - 1)[k - 1])
    if not np.isfinite(lam):
        raise CalibrationError(f"target coverage {target} unreachable", float(np.isfinite(r).mean()))
    if lam <= 0.0:
        return float(np.finfo(np.float64).tiny)
    while int(_covered(mean, d_lower, d_upper, obs, lam).sum()) < k:
        lam = float(np.nextafter(lam, np.inf))
    return lam


def calibrate(mean, d_lower, d_upper, obs, calib: IntervalCalibration) -> IntervalCalibration:
    """Fill ``calib`` with lambda and before/after coverage on the given points."""
    lam = calibrate_lambda(mean, d_lower, d_upper, obs, calib.target_coverage)
    return IntervalCalibration(
        lam=lam, lower_rank=calib.lower_rank, upper_rank=calib.upper_rank,
        target_coverage=calib.target_coverage,
        raw_coverage=coverage(mean, d_lower, d_upper, obs, 1.0),
        calibrated_coverage=coverage(mean, d_lower, d_upper, obs, lam),
        n_points=int(np.size(obs)),
    )


def propagate_interval(transform, surf_mean, d_lower, d_upper, lam: float, features):
    """Push the calibrated surface interval through ``transform(t_surf, features)``.

    Bounds are swapped wherever the transform is locally decreasing so
    that ``low <= upp`` always holds.
    """
    surf_mean = np.asarray(surf_mean, dtype=np.float64)
    low = np.asarray(transform(surf_mean - lam * np.asarray(d_lower), features), dtype=np.float64)
    upp = np.asarray(transform(surf_mean + lam * np.asarray(d_upper), features), dtype=np.float64)
    return np.minimum(low, upp), np.maximum(low, upp)
