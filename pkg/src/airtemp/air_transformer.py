"""Surface-to-air temperature network and its station-level training.

The network maps 16 features (surface temperature, reflectance, location,
hour, terrain and reanalysis covariates) to 2 m air temperature.  Features
and target are z-scored with statistics from the training stations; one
model is trained per (month, year).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import AirConfig, format_kv, parse_kv
from .errors import DataError, DimensionError, DivergenceError
from .grid import GridStack
from .nn import Dense, ParamStore, ReLU, ResidualBlock, SelfAttention, Sequential, clear_cache, l1_loss

log = logging.getLogger(__name__)

FEATURES = ("t_surf", "refl1", "refl2", "refl3", "refl4", "refl5", "lat", "lon", "hour",
            "elevation", "slope", "blh", "tcw", "shf", "u10", "v10")
N_FEATURES = len(FEATURES)
REANALYSIS_VARS = ("blh", "tcw", "shf", "u10", "v10")


@dataclass
class AuxGrids:
    """Static per-pixel layers: 5-band reflectance plus H x W location and terrain grids."""

    reflectance: np.ndarray | None
    lat: np.ndarray | None
    lon: np.ndarray | None
    elevation: np.ndarray | None
    slope: np.ndarray | None

    def check(self, hw) -> None:
        for name in ("reflectance", "lat", "lon", "elevation", "slope"):
            layer = getattr(self, name)
            if layer is None:
                raise DataError(f"missing auxiliary layer {name!r}")
            if np.shape(layer)[-2:] != tuple(hw):
                raise DimensionError(f"auxiliary layer {name!r} has grid {np.shape(layer)[-2:]}, expected {tuple(hw)}")
        if np.shape(self.reflectance)[0] != 5:
            raise DimensionError("reflectance must have 5 bands")

    @classmethod
    def from_scene(cls, scene) -> "AuxGrids":
        return cls(scene.reflectance.data, scene.lat, scene.lon, scene.elevation, scene.slope)


def _check_reanalysis(reanalysis, shape) -> None:
    for name in REANALYSIS_VARS:
        if reanalysis is None or name not in reanalysis:
            raise DataError(f"missing reanalysis layer {name!r}")
        if np.shape(reanalysis[name]) != tuple(shape):
            raise DimensionError(f"reanalysis layer {name!r} has shape {np.shape(reanalysis[name])}, "
                                 f"expected {tuple(shape)}")


def build_features(surf, aux: AuxGrids, reanalysis: dict, hour: int, day_idx, rows, cols) -> np.ndarray:
    """N x 16 feature rows for the (day channel, row, col) samples at ``hour``.

    ``surf`` is a D x H x W stack (array or GridStack); ``reanalysis`` maps
    each variable to a D x H x W grid already resampled to the fine grid.
    """
    if isinstance(surf, GridStack):
        valid = surf.mask
        surf = surf.data
    else:
        surf = np.asarray(surf)
        valid = None
    if surf.ndim != 3:
        raise DimensionError(f"surface stack must be D x H x W, got {surf.shape}")
    aux.check(surf.shape[1:])
    _check_reanalysis(reanalysis, surf.shape)
    di, r, c = (np.atleast_1d(np.asarray(a, dtype=np.int64)) for a in (day_idx, rows, cols))
    di, r, c = np.broadcast_arrays(di, r, c)
    if valid is not None and not valid[di, r, c].all():
        raise DataError("surface temperature is missing at a requested sample")
    n = di.size
    x = np.empty((n, N_FEATURES), dtype=np.float64)
    x[:, 0] = surf[di, r, c]
    x[:, 1:6] = np.asarray(aux.reflectance)[:, r, c].T
    x[:, 6] = np.asarray(aux.lat)[r, c]
    x[:, 7] = np.asarray(aux.lon)[r, c]
    x[:, 8] = hour
    x[:, 9] = np.asarray(aux.elevation)[r, c]
    x[:, 10] = np.asarray(aux.slope)[r, c]
    for j, name in enumerate(REANALYSIS_VARS):
        x[:, 11 + j] = reanalysis[name][di, r, c]
    if not np.isfinite(x).all():
        raise DataError("non-finite feature value")
    return x


def nearest_pixel(lat_grid, lon_grid, lat: float, lon: float) -> tuple[int, int]:
    """Grid cell whose center is nearest by great-circle distance."""
    p1, p2 = np.radians(lat_grid), np.radians(lat)
    dphi = p2 - p1
    dlmb = np.radians(lon - np.asarray(lon_grid))
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    flat = int(np.argmin(a))
    return divmod(flat, np.shape(lat_grid)[1])


@dataclass
class FeatureNorms:
    mean: np.ndarray
    std: np.ndarray
    target_mean: float = 0.0
    target_std: float = 1.0

    @classmethod
    def fit(cls, x, y) -> "FeatureNorms":
        """Z-score statistics; a zero spread (e.g. a single hour) is replaced by 1."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        std = x.std(axis=0)
        std[std == 0] = 1.0
        t_std = float(y.std()) or 1.0
        return cls(x.mean(axis=0), std, float(y.mean()), t_std)

    def normalize(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def normalize_target(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.target_mean) / self.target_std

    def denormalize_target(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.target_std + self.target_mean


class AirTransformerModel:
    """dense 16->64, ReLU, attention, residual(64), dense 64->128, ReLU, residual(128), dense 128->1."""

    def __init__(self, month: int = 1, year: int = 2023, seed: int = 0, norms: FeatureNorms | None = None):
        if not 1 <= month <= 12:
            raise DataError(f"month must be in 1..12, got {month}")
        self.month = month
        self.year = year
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        s = self.store
        self.net = Sequential([
            Dense(s, "in", N_FEATURES, 64, rng), ReLU(),
            SelfAttention(s, "attn", rng),
            ResidualBlock(s, "res64", 64, 64, rng, spatial=False),
            Dense(s, "mid", 64, 128, rng), ReLU(),
            ResidualBlock(s, "res128", 128, 128, rng, spatial=False),
            Dense(s, "out", 128, 1, rng),
        ])
        self.norms = norms or FeatureNorms(np.zeros(N_FEATURES), np.ones(N_FEATURES))
        self.history: list[tuple[int, float, float]] = []

    def forward_normalized(self, z) -> np.ndarray:
        return self.net.forward(np.asarray(z, dtype=np.float32))

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != N_FEATURES:
            raise DimensionError(f"expected N x {N_FEATURES} features, got {x.shape}")
        out = self.forward_normalized(self.norms.normalize(x))
        clear_cache(self.net)
        return self.norms.denormalize_target(out[:, 0])

    def metadata(self) -> dict[str, object]:
        items: dict[str, object] = {"month": self.month, "year": self.year,
                                    "target_mean": repr(self.norms.target_mean),
                                    "target_std": repr(self.norms.target_std)}
        for i, name in enumerate(FEATURES):
            items[f"mean.{name}"] = repr(float(self.norms.mean[i]))
            items[f"std.{name}"] = repr(float(self.norms.std[i]))
        return items

    def sidecar_text(self) -> str:
        return format_kv(self.metadata())

    @classmethod
    def from_parts(cls, params: dict[str, np.ndarray], sidecar: str) -> "AirTransformerModel":
        meta = parse_kv(sidecar)
        try:
            norms = FeatureNorms(np.array([float(meta[f"mean.{n}"]) for n in FEATURES]),
                                 np.array([float(meta[f"std.{n}"]) for n in FEATURES]),
                                 float(meta["target_mean"]), float(meta["target_std"]))
            model = cls(int(meta["month"]), int(meta["year"]), norms=norms)
        except KeyError as exc:
            raise DataError(f"model sidecar lacks {exc.args[0]!r}") from None
        model.store.load(params)
        return model


def transform_forward(model: AirTransformerModel, features) -> np.ndarray:
    return model.predict(features)


@dataclass
class TrainTestSplit:
    train_stations: frozenset
    test_stations: frozenset

    def __post_init__(self):
        self.train_stations = frozenset(self.train_stations)
        self.test_stations = frozenset(self.test_stations)
        if self.train_stations & self.test_stations:
            raise DataError("train and test station sets overlap")

    @classmethod
    def by_station(cls, station_ids, fraction: float = 0.2, seed: int = 0) -> "TrainTestSplit":
        """Hold out ``round(fraction * n)`` stations, chosen by a seeded shuffle."""
        ids = sorted(set(station_ids))
        n_test = int(round(fraction * len(ids)))
        if fraction > 0 and len(ids) > 1:
            n_test = min(max(n_test, 1), len(ids) - 1)
        order = np.random.default_rng([seed, 0x5717]).permutation(len(ids))
        test = {ids[i] for i in order[:n_test]}
        return cls(frozenset(ids) - test, frozenset(test))


@dataclass
class AirSamples:
    """Feature rows with their targets and bookkeeping per row."""

    x: np.ndarray
    y: np.ndarray
    station_ids: np.ndarray
    months: np.ndarray
    hours: np.ndarray
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).reshape(-1, N_FEATURES)
        n = len(self.x)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.station_ids = np.asarray(self.station_ids, dtype=object)
        self.months = np.asarray(self.months, dtype=np.int64)
        self.hours = np.asarray(self.hours, dtype=np.int64)
        for name in ("y", "station_ids", "months", "hours"):
            if len(getattr(self, name)) != n:
                raise DimensionError(f"{name} has {len(getattr(self, name))} rows, features have {n}")

    def __len__(self) -> int:
        return len(self.y)

    def select(self, sel) -> "AirSamples":
        return AirSamples(self.x[sel], self.y[sel], self.station_ids[sel], self.months[sel], self.hours[sel],
                          {k: np.asarray(v)[sel] for k, v in self.extra.items()})

    def in_stations(self, ids) -> np.ndarray:
        return np.isin(self.station_ids, list(ids))


def station_samples(records, surf_by_hour: dict, days, aux: AuxGrids, reanalysis_by_hour: dict,
                    year: int | None = None) -> AirSamples:
    """Match station records to the surface stacks and assemble features.

    Records whose hour or day has no surface stack are skipped.  Stations
    are matched to the nearest pixel center once per station id.
    """
    days = np.asarray(days, dtype=np.int64)
    day_pos = {int(d): i for i, d in enumerate(days)}
    pixel: dict[str, tuple[int, int]] = {}
    groups: dict[int, list] = {}
    for rec in records:
        ts = rec.timestamp
        if year is not None and ts.year != year:
            continue
        hour = ts.hour
        di = day_pos.get(ts.timetuple().tm_yday - 1)
        if hour not in surf_by_hour or di is None:
            continue
        if rec.station_id not in pixel:
            pixel[rec.station_id] = nearest_pixel(aux.lat, aux.lon, rec.lat, rec.lon)
        groups.setdefault(hour, []).append((di, pixel[rec.station_id], rec))
    parts = []
    for hour in sorted(groups):
        rows = groups[hour]
        di = np.array([g[0] for g in rows])
        rr = np.array([g[1][0] for g in rows])
        cc = np.array([g[1][1] for g in rows])
        x = build_features(surf_by_hour[hour], aux, reanalysis_by_hour[hour], hour, di, rr, cc)
        # station coordinates pass through unchanged
        x[:, 6] = [g[2].lat for g in rows]
        x[:, 7] = [g[2].lon for g in rows]
        x[:, 9] = [g[2].elevation for g in rows]
        parts.append(AirSamples(x, [g[2].t_air for g in rows], [g[2].station_id for g in rows],
                                [g[2].timestamp.month for g in rows], np.full(len(rows), hour),
                                {"day_idx": di, "row": rr, "col": cc}))
    if not parts:
        return AirSamples(np.empty((0, N_FEATURES)), [], [], [], [], {"day_idx": [], "row": [], "col": []})
    return AirSamples(np.concatenate([p.x for p in parts]), np.concatenate([p.y for p in parts]),
                      np.concatenate([p.station_ids for p in parts]), np.concatenate([p.months for p in parts]),
                      np.concatenate([p.hours for p in parts]),
                      {k: np.concatenate([p.extra[k] for p in parts]) for k in parts[0].extra})


def train_air_transformer(samples: AirSamples, split: TrainTestSplit, config: AirConfig | None = None,
                          month: int | None = None, year: int = 2023, callback=None) -> AirTransformerModel:
    """Fit one model on the training stations' samples for ``month``.

    ``month=None`` uses every sample (all must share one month).  The L1
    loss is minimized on the z-scored target; ``history`` reports it in
    degrees C for the training and held-out stations.
    """
    config = (config or AirConfig()).validate()
    if month is None:
        months = np.unique(samples.months)
        if len(months) > 1:
            raise DataError(f"samples span months {months.tolist()}; pass month= to select one")
        month = int(months[0]) if len(months) else 1
    in_month = samples.months == month
    train_sel = in_month & samples.in_stations(split.train_stations)
    test_sel = in_month & samples.in_stations(split.test_stations)
    if not train_sel.any():
        raise DataError(f"no training samples for month {month}")
    x_tr, y_tr = samples.x[train_sel], samples.y[train_sel]
    norms = FeatureNorms.fit(x_tr, y_tr)
    model = AirTransformerModel(month, year, seed=config.seed, norms=norms)
    z_tr = norms.normalize(x_tr).astype(np.float32)
    t_tr = norms.normalize_target(y_tr).astype(np.float32)[:, None]
    z_te = norms.normalize(samples.x[test_sel]).astype(np.float32) if test_sel.any() else None
    y_te = samples.y[test_sel]
    n = len(z_tr)
    batch = min(config.batch_size, n)
    rng = np.random.default_rng([config.seed, 0xA1])
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            pred = model.forward_normalized(z_tr[idx])
            loss, grad = l1_loss(pred, t_tr[idx])
            total += loss * len(idx)
            model.net.backward(grad)
            model.store.adam_step(config.lr)
        train_l1 = total / n * norms.target_std
        if not np.isfinite(train_l1):
            raise DivergenceError(epoch, train_l1)
        test_l1 = float("nan")
        if z_te is not None and (epoch == config.epochs or epoch % 50 == 0 or epoch == 1):
            out = model.forward_normalized(z_te)
            clear_cache(model.net)
            test_l1 = float(np.abs(norms.denormalize_target(out[:, 0]) - y_te).mean())
        model.history.append((epoch, float(train_l1), test_l1))
        if callback is not None:
            callback(epoch, train_l1, test_l1)
    return model


def predict_map(model: AirTransformerModel, surf, aux: AuxGrids, reanalysis: dict, hour: int,
                chunk: int = 262_144) -> GridStack:
    """Gap-free D x H x W air-temperature stack for ``hour``."""
    data = surf.data if isinstance(surf, GridStack) else np.asarray(surf)
    if data.ndim == 2:
        data = data[None]
    d, h, w = data.shape
    aux.check((h, w))
    _check_reanalysis(reanalysis, data.shape)
    di, rr, cc = (a.ravel() for a in np.indices((d, h, w)))
    out = np.empty(d * h * w, dtype=np.float64)
    for start in range(0, out.size, chunk):
        sl = slice(start, start + chunk)
        out[sl] = model.predict(build_features(data, aux, reanalysis, hour, di[sl], rr[sl], cc[sl]))
    return GridStack.full(out.reshape(d, h, w).astype(np.float32))


@dataclass
class MlrModel:
    """Ordinary least squares on the same 16 features (comparison baseline)."""

    coef: np.ndarray
    intercept: float
    norms: FeatureNorms

    @classmethod
    def fit(cls, x, y) -> "MlrModel":
        norms = FeatureNorms.fit(x, y)
        z = norms.normalize(x)
        design = np.column_stack([np.ones(len(z)), z])
        sol, *_ = np.linalg.lstsq(design, np.asarray(y, dtype=np.float64), rcond=None)
        return cls(sol[1:], float(sol[0]), norms)

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != N_FEATURES:
            raise DimensionError(f"expected N x {N_FEATURES} features, got {x.shape}")
        return self.norms.normalize(x) @ self.coef + self.intercept
