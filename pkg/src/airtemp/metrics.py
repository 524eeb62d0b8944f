"""RMSE / MAE / R^2 and binned breakdown reports."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DimensionError, UndefinedMetricError

BREAKDOWN_KEYS = ("none", "hour", "month", "temp_bin", "elev_bin")


def _pair(pred, obs):
    p = np.asarray(pred, dtype=np.float64).ravel()
    o = np.asarray(obs, dtype=np.float64).ravel()
    if p.shape != o.shape:
        raise DimensionError(f"length mismatch: {p.size} predictions, {o.size} observations")
    if p.size == 0:
        raise DegenerateInputError("metrics need at least one pair")
    return p, o


def sse(pred, obs) -> float:
    p, o = _pair(pred, obs)
    r = o - p
    return float(r @ r)


def rmse(pred, obs) -> float:
    p, o = _pair(pred, obs)
    r = o - p
    return float(np.sqrt((r @ r) / r.size))


def mae(pred, obs) -> float:
    p, o = _pair(pred, obs)
    return float(np.abs(o - p).sum() / p.size)


def r2(pred, obs) -> float:
    p, o = _pair(pred, obs)
    dev = o - o.mean()
    sst = float(dev @ dev)
    if sst == 0.0:
        raise UndefinedMetricError("R^2 is undefined for constant observations")
    r = o - p
    return 1.0 - float(r @ r) / sst


@dataclass
class EvalReport:
    rmse: float
    mae: float
    r2: float
    n: int
    key: str = "none"
    value: object = None
    sse: float = 0.0


def evaluate(pred, obs, key: str = "none", value=None) -> EvalReport:
    p, o = _pair(pred, obs)
    try:
        r2v = r2(p, o)
    except UndefinedMetricError:
        r2v = float("nan")
    return EvalReport(rmse(p, o), mae(p, o), r2v, int(p.size), key, value, sse(p, o))


def bin_values(key: str, *, hours=None, months=None, t_obs=None, elevation=None,
               temp_width: float = 5.0, elev_width: float = 250.0) -> np.ndarray:
    """Bin label for each pair (hour, month, or the lower edge of its bin)."""
    if key == "hour":
        return np.asarray(hours, dtype=np.int64)
    if key == "month":
        return np.asarray(months, dtype=np.int64)
    if key == "temp_bin":
        return np.floor(np.asarray(t_obs, dtype=np.float64) / temp_width) * temp_width
    if key == "elev_bin":
        return np.floor(np.asarray(elevation, dtype=np.float64) / elev_width) * elev_width
    raise ValueError(f"unknown breakdown key {key!r}; choose from {BREAKDOWN_KEYS}")


def breakdown_report(pred, obs, key: str = "none", *, hours=None, months=None, elevation=None,
                     temp_width: float = 5.0, elev_width: float = 250.0) -> list[EvalReport]:
    """One report per non-empty bin, in ascending bin order.

    Temperature bins use the observed air temperature; elevation bins use
    ``elevation``.  ``key="none"`` returns the pooled report.
    """
    p, o = _pair(pred, obs)
    if key == "none":
        return [evaluate(p, o)]
    labels = bin_values(key, hours=hours, months=months, t_obs=o, elevation=elevation,
                        temp_width=temp_width, elev_width=elev_width)
    if labels.shape != p.shape:
        raise DimensionError(f"{labels.size} bin labels for {p.size} pairs")
    reports = []
    for value in np.unique(labels):
        sel = labels == value
        v = int(value) if key in ("hour", "month") else float(value)
        reports.append(evaluate(p[sel], o[sel], key, v))
    return reports
