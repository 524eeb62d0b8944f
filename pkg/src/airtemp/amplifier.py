"""Gap-filling surface-temperature model: annual cycle + rho * coarse + conv head.

One model covers one (hour-of-day, year, tile).  It is trained with a masked
L1 loss on the cloud-free pixels, and snapshots along the trajectory form
the ensemble used for the mean reconstruction and its intervals.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .atc import AtcParamField, atc_values, cycle_projector
from .config import TrainConfig
from .ensemble import (IntervalCalibration, SnapshotEnsemble, calibrate, ensemble_mean, raw_interval)
from .errors import CalibrationError, DegenerateInputError, DimensionError, DivergenceError, StateError
from .grid import GridStack
from .nn import ParamStore, ResidualBlock, Sequential, clear_cache, masked_l1

log = logging.getLogger(__name__)

N_BANDS = 5
HEAD_CHANNELS = (16, 64, 128)


@dataclass
class ReconstructionDataset:
    """Inputs for one amplifier model.

    ``observed`` and ``coarse`` are D x H x W (one channel per entry of
    ``days``); ``reflectance`` is the 5 x H x W annual-mean reflectance.
    """

    observed: GridStack
    coarse: GridStack
    reflectance: GridStack
    days: np.ndarray
    n_doy: int = 365
    hour: int = 0
    year: int = 2023

    def __post_init__(self):
        self.days = np.asarray(self.days, dtype=np.int64)
        d, h, w = self.observed.shape
        if self.coarse.shape != (d, h, w):
            raise DimensionError(f"coarse stack {self.coarse.shape} does not match observed {(d, h, w)}")
        if self.reflectance.shape != (N_BANDS, h, w):
            raise DimensionError(f"reflectance must be {N_BANDS} x {h} x {w}, got {self.reflectance.shape}")
        if self.days.shape != (d,):
            raise DimensionError(f"{self.days.size} day indices for {d} channels")
        if self.days.size and (self.days.min() < 0 or self.days.max() >= self.n_doy):
            raise DimensionError(f"day indices must lie in [0, {self.n_doy})")
        if not self.coarse.mask.all():
            raise DegenerateInputError("coarse stack must be gap-free")

    @property
    def shape(self) -> tuple[int, int]:
        return self.observed.hw

    def crop(self, rows: slice, cols: slice) -> "ReconstructionDataset":
        return ReconstructionDataset(self.observed.crop(rows, cols), self.coarse.crop(rows, cols),
                                     self.reflectance.crop(rows, cols), self.days, self.n_doy,
                                     self.hour, self.year)


class ConvHead:
    """Four residual blocks 5 -> 16 -> 64 -> 128 -> D over the reflectance.

    With ``orthogonal=True`` the per-pixel output series is projected off
    the span of {1, sin, cos} of the annual cycle, so the head only
    explains variation the cycle cannot.
    """

    def __init__(self, store: ParamStore, rng: np.random.Generator, days, n_doy: int,
                 orthogonal: bool = True, in_channels: int = N_BANDS):
        chans = (in_channels,) + HEAD_CHANNELS + (len(days),)
        blocks = [
            ResidualBlock(store, f"head.block{i}", chans[i], chans[i + 1], rng,
                          final_relu=i < len(chans) - 2)
            for i in range(len(chans) - 1)
        ]
        self.net = Sequential(blocks)
        self.projector = cycle_projector(days, n_doy).astype(store.dtype) if orthogonal else None

    @property
    def blocks(self) -> list[ResidualBlock]:
        return self.net.layers

    def forward(self, x):
        out = self.net.forward(x)
        if self.projector is not None:
            d, h, w = out.shape
            out = (self.projector @ out.reshape(d, h * w)).reshape(d, h, w)
        return out

    def backward(self, grad):
        if self.projector is not None:
            d, h, w = grad.shape
            grad = (self.projector.T @ grad.reshape(d, h * w)).reshape(d, h, w)
        return self.net.backward(grad)

    def zero_output(self, store: ParamStore) -> None:
        """Zero the last block's output conv and skip so the head emits exactly 0."""
        for layer in self.blocks[-1].output_layers:
            store.set(layer.w_name, np.zeros_like(store[layer.w_name]))
            store.set(layer.b_name, np.zeros_like(store[layer.b_name]))


class AmplifierModel:
    def __init__(self, shape, days, n_doy: int = 365, hour: int = 0, year: int = 2023,
                 seed: int = 0, with_head: bool = True, orthogonal_head: bool = True):
        self.days = np.asarray(days, dtype=np.int64)
        self.n_doy = n_doy
        self.hour = hour
        self.year = year
        self.store = ParamStore()
        h, w = shape
        for name in ("T0", "A", "phi", "rho"):
            self.store.add(f"atc.{name}", np.zeros((h, w)))
        rng = np.random.default_rng(seed)
        self.head = ConvHead(self.store, rng, self.days, n_doy, orthogonal_head) if with_head else None
        self.history: list[tuple[int, float, float]] = []
        self._cache = None

    @property
    def atc(self) -> AtcParamField:
        s = self.store
        return AtcParamField(s["atc.T0"], s["atc.A"], s["atc.phi"], s["atc.rho"], self.n_doy)

    @property
    def shape(self) -> tuple[int, int]:
        return self.store["atc.T0"].shape

    def init_from_data(self, data: ReconstructionDataset, mask=None) -> None:
        """Warm start: T0 = mean of valid obs (else coarse mean), A = half the valid range (else 10)."""
        mask = data.observed.mask if mask is None else mask
        obs = np.where(mask, data.observed.data, np.nan)
        n_valid = mask.sum(axis=0)
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            t0 = np.nanmean(obs, axis=0)
            amp = 0.5 * (np.nanmax(obs, axis=0) - np.nanmin(obs, axis=0))
        t0 = np.where(n_valid > 0, t0, data.coarse.data.mean(axis=0))
        amp = np.where(n_valid > 1, amp, 10.0)
        self.store.set("atc.T0", t0)
        self.store.set("atc.A", amp)
        self.store.set("atc.phi", np.zeros(self.shape))
        self.store.set("atc.rho", np.zeros(self.shape))

    def head_output(self, reflectance) -> np.ndarray:
        d = len(self.days)
        if self.head is None:
            return np.zeros((d,) + self.shape, dtype=np.float32)
        out = self.head.forward(np.asarray(reflectance, dtype=np.float32))
        clear_cache(self.head.net)
        return out

    def components(self, data: ReconstructionDataset):
        """(cycle, rho * coarse, head) as three D x H x W arrays."""
        cycle = atc_values(self.atc, self.days)
        amplified = self.store["atc.rho"][None] * data.coarse.data
        return cycle, amplified, self.head_output(data.reflectance.data)

    def forward(self, data: ReconstructionDataset) -> np.ndarray:
        _check_data(self, data)
        s = self.store
        arg = 2.0 * np.pi * self.days[:, None, None] / self.n_doy + s["atc.phi"].astype(np.float64)[None]
        sin, cos = np.sin(arg), np.cos(arg)
        pred = s["atc.T0"].astype(np.float64)[None] + s["atc.A"].astype(np.float64)[None] * sin
        pred += s["atc.rho"].astype(np.float64)[None] * data.coarse.data
        head = None
        if self.head is not None:
            head = self.head.forward(data.reflectance.data)
            pred += head
        self._cache = (sin, cos, data.coarse.data)
        return pred.astype(np.float32), head

    def backward(self, grad) -> None:
        if self._cache is None:
            raise StateError("backward called without a recorded forward pass")
        sin, cos, coarse = self._cache
        self._cache = None
        g = grad.astype(np.float64)
        s = self.store
        s.accumulate("atc.T0", g.sum(axis=0))
        s.accumulate("atc.A", (g * sin).sum(axis=0))
        s.accumulate("atc.phi", (g * cos).sum(axis=0) * s["atc.A"])
        s.accumulate("atc.rho", (g * coarse).sum(axis=0))
        if self.head is not None:
            self.head.backward(grad)

    def predict(self, data: ReconstructionDataset) -> GridStack:
        cycle, amplified, head = self.components(data)
        return GridStack.full(cycle + amplified + head)


def amplifier_forward(model: AmplifierModel, data: ReconstructionDataset) -> GridStack:
    return model.predict(data)


def masked_l1_loss(pred, obs, mask) -> float:
    pred = pred.data if isinstance(pred, GridStack) else pred
    obs = obs.data if isinstance(obs, GridStack) else obs
    mask = mask.mask if isinstance(mask, GridStack) else mask
    return masked_l1(np.asarray(pred, dtype=np.float32), obs, mask)[0]


def split_test_pixels(mask: np.ndarray, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Hold out ``fraction`` of the valid pixels; returns (train_mask, test_mask)."""
    if fraction <= 0:
        return mask.copy(), np.zeros_like(mask)
    rng = np.random.default_rng([seed, 0x7E57])
    held = (rng.random(mask.shape) < fraction) & mask
    return mask & ~held, held


def train_amplifier(data: ReconstructionDataset, config: TrainConfig | None = None,
                    with_head: bool = True, model: AmplifierModel | None = None,
                    callback=None) -> tuple[AmplifierModel, SnapshotEnsemble]:
    """Fit all cycle, amplifier and head parameters jointly with Adam.

    Snapshots are recorded at the end of every epoch in
    ``config.snapshot_epochs()``; their intervals are calibrated on the
    training pixels before returning.
    """
    config = (config or TrainConfig()).validate()
    train_mask, test_mask = split_test_pixels(data.observed.mask, config.test_fraction, config.seed)
    if not train_mask.any():
        raise DegenerateInputError("no valid observations to train on")
    if model is None:
        model = AmplifierModel(data.shape, data.days, data.n_doy, data.hour, data.year,
                               seed=config.seed, with_head=with_head,
                               orthogonal_head=config.orthogonal_head)
        model.init_from_data(data, train_mask)
    model.store.set_lr_scale("head.", config.head_lr_scale)
    obs = data.observed.data
    snap_epochs = config.snapshot_epochs()
    snap_set = set(snap_epochs)
    k = len(snap_epochs)
    h, w = data.shape
    d = len(data.days)
    bank = {n: np.empty((k, h, w), dtype=np.float32) for n in ("T0", "A", "phi", "rho")}
    head_bank = np.empty((k, d, h, w), dtype=np.float32) if model.head is not None else None
    taken = 0

    def record(head_out):
        nonlocal taken
        for n in bank:
            bank[n][taken] = model.store[f"atc.{n}"]
        if head_bank is not None:
            head_bank[taken] = head_out
        taken += 1

    pending = False  # a snapshot epoch just ended; capture on the next forward
    for epoch in range(1, config.epochs + 1):
        pred, head_out = model.forward(data)
        if pending:
            record(head_out)
            pending = False
        loss, grad = masked_l1(pred, obs, train_mask)
        if not np.isfinite(loss):
            raise DivergenceError(epoch, loss)
        test_loss = masked_l1(pred, obs, test_mask)[0] if test_mask.any() else float("nan")
        model.history.append((epoch, loss, test_loss))
        if callback is not None:
            callback(epoch, loss, test_loss)
        model.backward(grad)
        model.store.adam_step(config.lr)
        if epoch in snap_set:
            pending = True
    if pending:
        record(model.head_output(data.reflectance.data))
    if not model.atc.is_finite():
        raise DivergenceError(config.epochs, float("nan"))

    ensemble = SnapshotEnsemble(bank["T0"], bank["A"], bank["phi"], bank["rho"], head_bank,
                                data.days.copy(), data.n_doy, epochs=snap_epochs)
    if k >= 2:
        ensemble.calibration = calibrate_ensemble(ensemble, data, train_mask, config.coverage)
    return model, ensemble


def atc_only_baseline(data: ReconstructionDataset, config: TrainConfig | None = None):
    """The enhanced-cycle baseline: identical training with the head removed."""
    return train_amplifier(data, config, with_head=False)


def _day_chunks(d: int, h: int, w: int, k: int, budget: int = 32_000_000):
    step = max(1, budget // max(1, k * h * w))
    for start in range(0, d, step):
        yield slice(start, min(d, start + step))


def ensemble_stats(ensemble: SnapshotEnsemble, data: ReconstructionDataset, calib: IntervalCalibration):
    """Mean and raw half-widths (float64, D x H x W), computed in day chunks."""
    d, h, w = data.observed.shape
    mean = np.empty((d, h, w))
    d_lower = np.empty((d, h, w))
    d_upper = np.empty((d, h, w))
    for sl in _day_chunks(d, h, w, len(ensemble)):
        preds = ensemble.predictions(data.coarse.data, sl)
        mean[sl] = ensemble_mean(preds, ensemble.weights)
        d_lower[sl], d_upper[sl] = raw_interval(preds, mean[sl], calib)
    return mean, d_lower, d_upper


def calibrate_ensemble(ensemble: SnapshotEnsemble, data: ReconstructionDataset, mask,
                       target: float = 0.95) -> IntervalCalibration:
    calib = IntervalCalibration.for_size(len(ensemble), target)
    mean, d_lower, d_upper = ensemble_stats(ensemble, data, calib)
    obs = data.observed.data.astype(np.float64)
    return calibrate(mean[mask], d_lower[mask], d_upper[mask], obs[mask], calib)


def reconstruct(ensemble: SnapshotEnsemble, data: ReconstructionDataset):
    """Gap-free (mean, lower, upper) stacks from the snapshot ensemble."""
    if len(ensemble) < 1:
        raise DegenerateInputError("empty ensemble")
    if ensemble.shape != data.shape or not np.array_equal(ensemble.days, data.days):
        raise DimensionError("ensemble and dataset cover different grids or days")
    if len(ensemble) < 2:
        mean = ensemble.predictions(data.coarse.data)[0]
        g = GridStack.full(mean)
        return g, GridStack.full(mean), GridStack.full(mean)
    calib = ensemble.calibration
    if calib is None:
        try:
            calib = calibrate_ensemble(ensemble, data, data.observed.mask)
        except (CalibrationError, DegenerateInputError) as exc:
            log.warning("calibration failed (%s); using raw order-statistic intervals", exc)
            calib = IntervalCalibration.for_size(len(ensemble))
        ensemble.calibration = calib
    mean, d_lower, d_upper = ensemble_stats(ensemble, data, calib)
    lower = mean - calib.lam * d_lower
    upper = mean + calib.lam * d_upper
    return GridStack.full(mean), GridStack.full(lower), GridStack.full(upper)


@dataclass
class TileJob:
    rows: slice
    cols: slice
    model: AmplifierModel | None = None
    ensemble: SnapshotEnsemble | None = None
    extra: dict = field(default_factory=dict)


def tile_slices(shape, tile: int) -> list[tuple[slice, slice]]:
    h, w = shape
    return [(slice(r, min(h, r + tile)), slice(c, min(w, c + tile)))
            for r in range(0, h, tile) for c in range(0, w, tile)]


def train_tiled(data: ReconstructionDataset, config: TrainConfig | None = None, with_head: bool = True,
                workers: int = 1) -> list[TileJob]:
    """Train one independent model per tile; tiles may run concurrently."""
    config = (config or TrainConfig()).validate()
    jobs = [TileJob(r, c) for r, c in tile_slices(data.shape, config.tile)]

    def run(job: TileJob) -> TileJob:
        job.model, job.ensemble = train_amplifier(data.crop(job.rows, job.cols), config, with_head)
        return job

    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, jobs))
    return [run(j) for j in jobs]


def reconstruct_tiled(jobs: list[TileJob], data: ReconstructionDataset):
    d, h, w = data.observed.shape
    out = [np.empty((d, h, w), dtype=np.float32) for _ in range(3)]
    for job in jobs:
        parts = reconstruct(job.ensemble, data.crop(job.rows, job.cols))
        for dst, part in zip(out, parts):
            dst[:, job.rows, job.cols] = part.data
    return tuple(GridStack.full(o) for o in out)


def _check_data(model: AmplifierModel, data: ReconstructionDataset) -> None:
    if data.shape != model.shape:
        raise DimensionError(f"dataset grid {data.shape} != model grid {model.shape}")
    if not np.array_equal(data.days, model.days):
        raise DimensionError("dataset days do not match the model's output channels")
