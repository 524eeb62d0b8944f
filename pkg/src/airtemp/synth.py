"""Synthetic scenes with known truth for every pipeline stage.

Construction (per hour of day ``h``)::

    truth_surf[h] = cycle(T0 + diurnal(h), A, phi) + rho * coarse[h] + texture[h]
    observed[h]   = truth_surf[h] + noise, masked by correlated cloud blobs
    coarse[h]     = weather anomaly on an 8x coarser grid, nearest-upsampled

The weather anomaly and the texture's daily amplitude are orthogonal to
{1, sin, cos} of the annual cycle over the scene's days, so the cycle
parameters are identifiable from the observations.  The texture's spatial
pattern is a smooth function of the reflectance bands, which is what the
conv head has to learn.
"""
from __future__ import annotations

import calendar
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np
from scipy import ndimage

from .atc import AtcParamField, atc_values, cycle_projector
from .errors import DimensionError, SpecError
from .grid import GridStack

PIXEL_DEG = 0.02
PIXEL_M = 2000.0
REANALYSIS_VARS = ("blh", "tcw", "shf", "u10", "v10")


def default_transform(t_surf, elevation, hour, **_):
    return 0.7 * t_surf - 0.002 * elevation + 1.5 * np.sin(2 * np.pi * np.asarray(hour) / 24.0) + 2.0


def affine_transform(t_surf, **_):
    return 0.8 * t_surf + 1.0


TRANSFORMS = {"default": default_transform, "affine": affine_transform}


@dataclass
class StationRecord:
    station_id: str
    lat: float
    lon: float
    elevation: float
    timestamp: datetime
    t_air: float

    def __post_init__(self):
        if not -60.0 <= self.t_air <= 60.0:
            raise SpecError(f"{self.station_id}: air temperature {self.t_air} outside [-60, 60]")
        ts = self.timestamp
        if ts.minute or ts.second or ts.microsecond:
            raise SpecError(f"{self.station_id}: timestamp {ts} is not on an hour boundary")


@dataclass
class SceneSpec:
    H: int = 32
    W: int = 32
    n_doy: int = 365
    n_days: int | None = None          # None -> every day of the year
    start_day: int = 0
    day_step: int = 1
    hours: tuple[int, ...] = (12,)
    year: int = 2023
    t0_range: tuple[float, float] = (5.0, 25.0)
    amp_range: tuple[float, float] = (8.0, 16.0)
    phase_range: tuple[float, float] = (-2.2, -1.6)
    rho_range: tuple[float, float] = (0.6, 1.0)
    diurnal_amplitude: float = 6.0
    weather_sigma: float = 3.0
    coarse_factor: int = 8
    texture_amplitude: float = 1.5
    noise_sigma: float = 0.0
    cloud_fraction: float = 0.3
    cloud_blob_scale: float = 6.0
    n_stations: int = 24
    station_noise: float = 0.0
    air_transform_truth: str = "default"
    lat0: float = 40.0
    lon0: float = -100.0
    seed: int = 0

    @property
    def days(self) -> np.ndarray:
        n = self.n_doy if self.n_days is None else self.n_days
        return self.start_day + self.day_step * np.arange(n)

    def validate(self) -> "SceneSpec":
        if self.H < 2 or self.W < 2:
            raise SpecError("scene must be at least 2 x 2")
        if self.n_doy != (366 if calendar.isleap(self.year) else 365):
            raise SpecError(f"n_doy {self.n_doy} does not match year {self.year}")
        days = self.days
        if days.size == 0 or days.min() < 0 or days.max() >= self.n_doy:
            raise SpecError(f"scene days must lie in [0, {self.n_doy})")
        if not self.hours or any(not 0 <= h < 24 for h in self.hours):
            raise SpecError("hours must be non-empty and within [0, 24)")
        if len(set(self.hours)) != len(self.hours):
            raise SpecError("hours must be distinct")
        if not 0.0 <= self.cloud_fraction < 1.0:
            raise SpecError(f"cloud_fraction must be in [0, 1), got {self.cloud_fraction}")
        n_pix = self.H * self.W
        if abs(round(self.cloud_fraction * n_pix) / n_pix - self.cloud_fraction) > 0.02:
            raise SpecError(f"cloud_fraction {self.cloud_fraction} unreachable on a {self.H} x {self.W} grid")
        if self.noise_sigma < 0 or self.station_noise < 0 or self.texture_amplitude < 0:
            raise SpecError("noise and texture amplitudes must be non-negative")
        if not 0 <= self.n_stations <= n_pix:
            raise SpecError(f"cannot place {self.n_stations} stations on {n_pix} pixels")
        if self.air_transform_truth not in TRANSFORMS:
            raise SpecError(f"unknown air_transform_truth {self.air_transform_truth!r}; "
                            f"choose from {sorted(TRANSFORMS)}")
        for lo, hi in (self.t0_range, self.amp_range, self.phase_range, self.rho_range):
            if not lo <= hi:
                raise SpecError("parameter ranges must be (low, high)")
        if self.coarse_factor < 1 or self.cloud_blob_scale <= 0:
            raise SpecError("coarse_factor and cloud_blob_scale must be positive")
        return self


@dataclass
class Station:
    station_id: str
    row: int
    col: int
    lat: float
    lon: float
    elevation: float


@dataclass
class SyntheticScene:
    spec: SceneSpec
    truth_atc: AtcParamField                # cycle parameters without the diurnal offset
    diurnal: dict[int, float]               # hour -> T0 offset
    truth_surf: dict[int, GridStack]
    observed_surf: dict[int, GridStack]
    coarse: dict[int, GridStack]
    texture: dict[int, np.ndarray]
    reflectance: GridStack
    lat: np.ndarray
    lon: np.ndarray
    elevation: np.ndarray
    slope: np.ndarray
    reanalysis: dict[int, dict[str, np.ndarray]]   # hour -> var -> D x H x W
    stations: list[Station]
    records: list[StationRecord] = field(default_factory=list)
    record_index: list[tuple[int, int, int]] = field(default_factory=list)   # (hour, day channel, station)

    @property
    def days(self) -> np.ndarray:
        return self.spec.days

    def atc_for_hour(self, hour: int) -> AtcParamField:
        f = self.truth_atc.copy()
        f.T0 = (f.T0 + self.diurnal[hour]).astype(np.float32)
        return f

    def dataset(self, hour: int):
        from .amplifier import ReconstructionDataset
        return ReconstructionDataset(self.observed_surf[hour], self.coarse[hour], self.reflectance,
                                     self.days, self.spec.n_doy, hour, self.spec.year)

    def timestamp(self, hour: int, day: int) -> datetime:
        return datetime(self.spec.year, 1, 1, tzinfo=timezone.utc) + timedelta(days=int(day), hours=int(hour))


def smooth_noise(rng: np.random.Generator, shape, scale: float) -> np.ndarray:
    """Zero-mean, unit-variance Gaussian random field with correlation length ~``scale``."""
    raw = rng.standard_normal(shape)
    f = ndimage.gaussian_filter(raw, sigma=scale, mode="wrap") if scale > 0 else raw
    f = f - f.mean()
    sd = f.std()
    return f / sd if sd > 0 else f


def _to_range(field_, lo, hi):
    u = 0.5 * (1.0 + np.tanh(field_ / 1.5))
    return lo + (hi - lo) * u


def _orthogonal_series(rng, n_series, days, n_doy) -> np.ndarray:
    """Unit-RMS random series (n_series x D) with no annual-cycle component."""
    proj = cycle_projector(days, n_doy)
    raw = rng.standard_normal((n_series, len(days)))
    # mild day-to-day persistence, like synoptic weather
    smooth = ndimage.uniform_filter1d(raw, size=3, axis=1, mode="nearest")
    out = smooth @ proj.T
    rms = np.sqrt((out ** 2).mean(axis=1, keepdims=True))
    return np.divide(out, rms, out=np.zeros_like(out), where=rms > 0)


def _upsample(coarse_grid: np.ndarray, factor: int, h: int, w: int) -> np.ndarray:
    up = np.repeat(np.repeat(coarse_grid, factor, axis=-2), factor, axis=-1)
    return up[..., :h, :w]


def cloud_mask(rng: np.random.Generator, h: int, w: int, fraction: float, blob_scale: float) -> np.ndarray:
    """Boolean cloud mask (True = cloudy) covering ``fraction`` of the grid in smooth blobs."""
    n_cloud = int(round(fraction * h * w))
    if n_cloud == 0:
        return np.zeros((h, w), dtype=bool)
    field_ = smooth_noise(rng, (h, w), blob_scale / 2.0)
    order = np.argsort(field_, axis=None, kind="stable")
    mask = np.zeros(h * w, dtype=bool)
    mask[order[-n_cloud:]] = True
    return mask.reshape(h, w)


def generate_scene(spec: SceneSpec) -> SyntheticScene:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    h, w = spec.H, spec.W
    days = spec.days
    d = len(days)
    corr = max(h, w) / 6.0

    T0 = _to_range(smooth_noise(rng, (h, w), corr), *spec.t0_range)
    A = _to_range(smooth_noise(rng, (h, w), corr), *spec.amp_range)
    phi = _to_range(smooth_noise(rng, (h, w), corr), *spec.phase_range)
    rho = _to_range(smooth_noise(rng, (h, w), corr), *spec.rho_range)
    truth_atc = AtcParamField(*(g.astype(np.float32) for g in (T0, A, phi, rho)), n_doy=spec.n_doy)

    # static surface: two latent patterns drive both texture and reflectance
    latent = np.stack([smooth_noise(rng, (h, w), 2.0), smooth_noise(rng, (h, w), 3.0)])
    mixing = rng.uniform(-1.0, 1.0, size=(5, 2))
    band_noise = np.stack([smooth_noise(rng, (h, w), 1.5) for _ in range(5)])
    refl = 0.25 + 0.06 * (np.einsum("bk,khw->bhw", mixing, latent) + 0.2 * band_noise)
    reflectance = GridStack.full(np.clip(refl, 0.01, 0.99))

    elevation = 750.0 + 500.0 * smooth_noise(rng, (h, w), corr)
    elevation = np.clip(elevation, 0.0, None).astype(np.float32)
    gy, gx = np.gradient(elevation.astype(np.float64), PIXEL_M)
    slope = np.degrees(np.arctan(np.hypot(gx, gy))).astype(np.float32)
    rows, cols = np.mgrid[0:h, 0:w]
    lat = (spec.lat0 - (rows + 0.5) * PIXEL_DEG).astype(np.float64)
    lon = (spec.lon0 + (cols + 0.5) * PIXEL_DEG).astype(np.float64)

    hc = -(-h // spec.coarse_factor)
    wc = -(-w // spec.coarse_factor)
    truth_surf, observed, coarse, texture, reanalysis, diurnal = {}, {}, {}, {}, {}, {}
    for hour in spec.hours:
        diurnal[hour] = float(spec.diurnal_amplitude * np.sin(2 * np.pi * (hour - 9) / 24.0))
        field_h = truth_atc.copy()
        field_h.T0 = (field_h.T0 + diurnal[hour]).astype(np.float32)
        weather = _orthogonal_series(rng, hc * wc, days, spec.n_doy).T.reshape(d, hc, wc)
        coarse_h = _upsample(spec.weather_sigma * weather, spec.coarse_factor, h, w).astype(np.float32)
        amps = _orthogonal_series(rng, 2, days, spec.n_doy)          # 2 x D
        tex = spec.texture_amplitude * np.einsum("kd,khw->dhw", amps, latent) / np.sqrt(2.0)
        tex = tex.astype(np.float32)
        truth = atc_values(field_h, days) + rho[None].astype(np.float32) * coarse_h + tex
        noise = spec.noise_sigma * rng.standard_normal(truth.shape) if spec.noise_sigma > 0 else 0.0
        cloudy = np.stack([cloud_mask(rng, h, w, spec.cloud_fraction, spec.cloud_blob_scale)
                           for _ in range(d)])
        truth_surf[hour] = GridStack.full(truth)
        observed[hour] = GridStack((truth + noise).astype(np.float32), ~cloudy)
        coarse[hour] = GridStack.full(coarse_h)
        texture[hour] = tex
        reanalysis[hour] = _reanalysis(rng, spec, d, hc, wc, hour)

    pick = rng.choice(h * w, size=spec.n_stations, replace=False)
    stations = [
        Station(f"S{i:04d}", int(p // w), int(p % w), float(lat.flat[p]), float(lon.flat[p]),
                float(elevation.flat[p]))
        for i, p in enumerate(pick)
    ]
    scene = SyntheticScene(spec, truth_atc, diurnal, truth_surf, observed, coarse, texture, reflectance,
                           lat, lon, elevation, slope, reanalysis, stations)
    _station_records(scene, rng)
    return scene


def _reanalysis(rng, spec: SceneSpec, d: int, hc: int, wc: int, hour: int) -> dict[str, np.ndarray]:
    base = {"blh": (800.0, 300.0), "tcw": (20.0, 6.0), "shf": (100.0, 60.0), "u10": (0.0, 3.0), "v10": (0.0, 3.0)}
    out = {}
    for name in REANALYSIS_VARS:
        mean, sd = base[name]
        if name in ("blh", "shf"):
            mean = mean * (1.0 + 0.5 * np.sin(2 * np.pi * (hour - 9) / 24.0))
        grid = mean + sd * rng.standard_normal((d, hc, wc))
        if name == "blh":
            grid = np.clip(grid, 50.0, None)
        out[name] = _upsample(grid, spec.coarse_factor, spec.H, spec.W).astype(np.float32)
    return out


def _station_records(scene: SyntheticScene, rng: np.random.Generator) -> None:
    spec = scene.spec
    transform = TRANSFORMS[spec.air_transform_truth]
    records, index = [], []
    for hour in spec.hours:
        truth = scene.truth_surf[hour].data
        for di, day in enumerate(scene.days):
            ts = scene.timestamp(hour, day)
            for si, st in enumerate(scene.stations):
                ra = {k: float(v[di, st.row, st.col]) for k, v in scene.reanalysis[hour].items()}
                value = float(transform(t_surf=float(truth[di, st.row, st.col]), elevation=st.elevation,
                                        hour=hour, lat=st.lat, lon=st.lon, **ra))
                if spec.station_noise > 0:
                    value += float(spec.station_noise * rng.standard_normal())
                records.append(StationRecord(st.station_id, st.lat, st.lon, st.elevation, ts, value))
                index.append((hour, di, si))
    scene.records = records
    scene.record_index = index


def truth_air(scene: SyntheticScene, hour: int) -> np.ndarray:
    """Noise-free air temperature over the whole grid (D x H x W) for ``hour``."""
    transform = TRANSFORMS[scene.spec.air_transform_truth]
    ra = scene.reanalysis[hour]
    return np.asarray(transform(t_surf=scene.truth_surf[hour].data.astype(np.float64),
                                elevation=scene.elevation[None].astype(np.float64), hour=hour,
                                lat=scene.lat[None], lon=scene.lon[None], **ra))


@dataclass
class OracleStats:
    rmse_observed: float
    mae_observed: float
    rmse_masked: float
    mae_masked: float
    n_observed: int
    n_masked: int


def oracle_eval(scene: SyntheticScene, output, hour: int | None = None, target: str = "surf") -> OracleStats:
    """Error of a pipeline output against stored truth, split by cloud state.

    ``target="surf"`` compares with the true surface temperature,
    ``target="air"`` with the noise-free air temperature.
    """
    from .metrics import mae, rmse

    hour = scene.spec.hours[0] if hour is None else hour
    pred = output.data if isinstance(output, GridStack) else np.asarray(output)
    truth = scene.truth_surf[hour].data if target == "surf" else truth_air(scene, hour)
    if pred.shape != truth.shape:
        raise DimensionError(f"output shape {pred.shape} does not match truth {truth.shape}")
    clear = scene.observed_surf[hour].mask
    stats = []
    for sel in (clear, ~clear):
        if sel.any():
            stats.append((rmse(pred[sel], truth[sel]), mae(pred[sel], truth[sel]), int(sel.sum())))
        else:
            stats.append((float("nan"), float("nan"), 0))
    (r_o, m_o, n_o), (r_m, m_m, n_m) = stats
    return OracleStats(r_o, m_o, r_m, m_m, n_o, n_m)
