"""File formats: TGRD grid stacks, station CSV, PPM maps, model sidecars.

TGRD layout (little-endian)::

    b"TGRD" | u32 version | u32 C | u32 H | u32 W | f32 nodata | C*H*W f32

Every writer goes through :func:`atomic_write` so a failed run never
leaves a partial file behind.
"""
from __future__ import annotations

import calendar
import csv
import io as _io
import logging
import os
import struct
import tempfile
from collections import defaultdict
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import (BadMagicError, DataError, DuplicateRecordError, GridFormatError, StationFormatError,
                     TruncatedGridError, VersionMismatchError)
from .grid import GridStack
from .synth import StationRecord

log = logging.getLogger(__name__)

MAGIC = b"TGRD"
VERSION = 1
NODATA = -9999.0
_HEADER = struct.Struct("<4sIIIIf")
STATION_HEADER = ("station_id", "lat", "lon", "elevation_m", "timestamp_utc", "t_air_c")


@contextmanager
def atomic_write(path: str | Path, mode: str = "wb"):
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        newline = "" if "b" not in mode else None
        with os.fdopen(fd, mode, newline=newline) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def encode_grid(grid: GridStack, nodata: float = NODATA) -> bytes:
    data = np.asarray(grid.data, dtype="<f4")
    nod = np.float32(nodata)
    if np.any(data[grid.mask] == nod):
        raise GridFormatError(f"valid data contains the nodata sentinel {nodata}")
    out = np.where(grid.mask, data, nod).astype("<f4")
    c, h, w = out.shape
    return _HEADER.pack(MAGIC, VERSION, c, h, w, float(nod)) + out.tobytes(order="C")


def decode_grid(buf: bytes) -> GridStack:
    if len(buf) < _HEADER.size:
        if buf[:4] and not MAGIC.startswith(buf[:4]):
            raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
        raise TruncatedGridError(f"header needs {_HEADER.size} bytes, file has {len(buf)}")
    magic, version, c, h, w, nodata = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatchError(f"grid format version {version}, this reader supports {VERSION}")
    n = c * h * w
    payload = len(buf) - _HEADER.size
    if payload < 4 * n:
        raise TruncatedGridError(f"payload has {payload} bytes, header promises {4 * n}")
    if payload > 4 * n:
        raise GridFormatError(f"{payload - 4 * n} trailing bytes after payload")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=_HEADER.size).reshape(c, h, w)
    mask = data != np.float32(nodata)
    return GridStack(data.astype(np.float32), mask)


def write_grid(grid: GridStack, path: str | Path, nodata: float = NODATA) -> None:
    payload = encode_grid(grid, nodata)
    with atomic_write(path) as fh:
        fh.write(payload)


def read_grid(path: str | Path) -> GridStack:
    return decode_grid(Path(path).read_bytes())


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:00:00Z")


def parse_timestamp(text: str) -> datetime:
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    ts = datetime.fromisoformat(raw)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    ts = ts.astimezone(timezone.utc)
    if ts.minute or ts.second or ts.microsecond:
        raise ValueError(f"timestamp {text!r} is not on an hour boundary")
    return ts


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def write_stations(records, path: str | Path) -> None:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(STATION_HEADER)
    for r in records:
        writer.writerow([r.station_id, _fmt(r.lat), _fmt(r.lon), _fmt(r.elevation),
                         format_timestamp(r.timestamp), _fmt(r.t_air)])
    with atomic_write(path, "w") as fh:
        fh.write(buf.getvalue())


def read_stations(path: str | Path, filter_valid: bool = False, min_valid_fraction: float = 0.5
                  ) -> list[StationRecord]:
    """Parse a station CSV.

    With ``filter_valid``, station-years whose records fill fewer than
    ``min_valid_fraction`` of that year's hourly slots are dropped.
    """
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        log.warning("station file %s is empty", path)
        return []
    reader = csv.reader(_io.StringIO(text))
    header = next(reader)
    if tuple(h.strip() for h in header) != STATION_HEADER:
        raise StationFormatError(f"expected header {','.join(STATION_HEADER)}, got {','.join(header)}", 1)
    records: list[StationRecord] = []
    seen: set[tuple[str, datetime]] = set()
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(STATION_HEADER):
            raise StationFormatError(f"expected {len(STATION_HEADER)} fields, got {len(row)}", lineno)
        sid = row[0].strip()
        if not sid:
            raise StationFormatError("empty station_id", lineno)
        try:
            lat, lon, elev = float(row[1]), float(row[2]), float(row[3])
            ts = parse_timestamp(row[4])
            t_air = float(row[5])
        except ValueError as exc:
            raise StationFormatError(str(exc), lineno) from None
        if not all(np.isfinite(v) for v in (lat, lon, elev, t_air)):
            raise StationFormatError("non-finite value", lineno)
        if (sid, ts) in seen:
            raise DuplicateRecordError(sid, format_timestamp(ts), lineno)
        seen.add((sid, ts))
        try:
            records.append(StationRecord(sid, lat, lon, elev, ts, t_air))
        except ValueError as exc:
            raise StationFormatError(str(exc), lineno) from None
    if not records:
        log.warning("station file %s has no records", path)
    if filter_valid:
        records = filter_station_years(records, min_valid_fraction)
    return records


def filter_station_years(records, min_valid_fraction: float = 0.5) -> list[StationRecord]:
    counts: dict[tuple[str, int], int] = defaultdict(int)
    for r in records:
        counts[(r.station_id, r.timestamp.year)] += 1
    keep = {k for k, n in counts.items()
            if n >= min_valid_fraction * (8784 if calendar.isleap(k[1]) else 8760)}
    return [r for r in records if (r.station_id, r.timestamp.year) in keep]


# color ramps as (position, (r, g, b)) stops
RAMPS = {
    "thermal": [(0.0, (49, 54, 149)), (0.25, (116, 173, 209)), (0.5, (255, 255, 191)),
                (0.75, (244, 109, 67)), (1.0, (165, 0, 38))],
    "gray": [(0.0, (0, 0, 0)), (1.0, (255, 255, 255))],
    "diverging": [(0.0, (5, 48, 97)), (0.5, (247, 247, 247)), (1.0, (103, 0, 31))],
}
NODATA_RGB = (128, 128, 128)


def apply_ramp(values: np.ndarray, ramp: str, vmin: float, vmax: float) -> np.ndarray:
    if ramp not in RAMPS:
        raise DataError(f"unknown color ramp {ramp!r}; choose from {sorted(RAMPS)}")
    stops = RAMPS[ramp]
    pos = np.array([p for p, _ in stops])
    span = vmax - vmin
    t = np.zeros_like(values, dtype=np.float64) if span == 0 else (values - vmin) / span
    t = np.clip(t, 0.0, 1.0)
    rgb = np.stack([np.interp(t, pos, [c[i] for _, c in stops]) for i in range(3)], axis=-1)
    return np.rint(rgb).astype(np.uint8)


def render_map(grid: GridStack, path: str | Path, channel: int = 0, ramp: str = "thermal",
               vmin: float | None = None, vmax: float | None = None) -> None:
    """Write one channel as a binary PPM (P6); invalid pixels are gray."""
    data = grid.data[channel].astype(np.float64)
    valid = grid.mask[channel] & np.isfinite(data)
    if vmin is None or vmax is None:
        if not valid.any():
            raise DataError("no valid pixels to derive a color range from")
        vmin = float(data[valid].min()) if vmin is None else vmin
        vmax = float(data[valid].max()) if vmax is None else vmax
    if not (np.isfinite(vmin) and np.isfinite(vmax)) or vmax < vmin:
        raise DataError(f"invalid color range [{vmin}, {vmax}]")
    rgb = apply_ramp(np.where(valid, data, vmin), ramp, vmin, vmax)
    rgb[~valid] = NODATA_RGB
    h, w = data.shape
    with atomic_write(path) as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P6":
        raise DataError("not a binary PPM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise DataError("only 8-bit PPM supported")
    pixels = raw[len(raw) - w * h * 3:]
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3)


def write_csv(path: str | Path, header, rows) -> None:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    with atomic_write(path, "w") as fh:
        fh.write(buf.getvalue())


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "nan" if not np.isfinite(v) else f"{float(v):.6f}"
    return str(v)


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    """Deterministic uncompressed ``.npz`` (fixed member order, no timestamps)."""
    import zipfile
    with atomic_write(path) as fh:
        with zipfile.ZipFile(fh, "w", compression=zipfile.ZIP_STORED) as zf:
            for name in sorted(arrays):
                bio = _io.BytesIO()
                np.lib.format.write_array(bio, np.asarray(arrays[name], order="C"), allow_pickle=False)
                info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
                zf.writestr(info, bio.getvalue())


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    with np.load(path, allow_pickle=False) as z:
        return {k: z[k] for k in z.files}


# scene directories: the layout the CLI reads and `synth` writes
SCENE_META = "scene.cfg"
REANALYSIS_VARS = ("blh", "tcw", "shf", "u10", "v10")


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _join(values) -> str:
    return ",".join(str(int(v)) for v in values)


class SceneFiles:
    """Lazy view of a scene directory.

    Files: ``scene.cfg``, ``reflectance.tgrd`` (5 bands), ``static.tgrd``
    (lat, lon, elevation, slope), and per hour ``observed_hHH.tgrd``,
    ``coarse_hHH.tgrd`` and one ``<var>_hHH.tgrd`` per reanalysis
    variable, plus ``stations.csv``.  Synthetic scenes also carry
    ``truth_hHH.tgrd`` and ``truth_air_hHH.tgrd``.
    """

    def __init__(self, root: str | Path):
        from .config import read_kv
        self.root = Path(root)
        meta_path = self.root / SCENE_META
        if not meta_path.exists():
            raise DataError(f"{self.root} is not a scene directory (no {SCENE_META})")
        self.meta = read_kv(meta_path)
        try:
            self.days = np.array(_ints(self.meta["days"]), dtype=np.int64)
            self.hours = _ints(self.meta["hours"])
            self.n_doy = int(self.meta["n_doy"])
            self.year = int(self.meta["year"])
        except KeyError as exc:
            raise DataError(f"{meta_path} lacks {exc.args[0]!r}") from None
        self._cache: dict[str, GridStack] = {}

    def path(self, name: str) -> Path:
        return self.root / name

    def grid(self, name: str) -> GridStack:
        if name not in self._cache:
            p = self.path(name)
            if not p.exists():
                raise DataError(f"scene file {name} is missing from {self.root}")
            self._cache[name] = read_grid(p)
        return self._cache[name]

    def has(self, name: str) -> bool:
        return self.path(name).exists()

    def check_hour(self, hour: int) -> int:
        if hour not in self.hours:
            raise DataError(f"hour {hour} not in scene hours {self.hours}")
        return hour

    def dataset(self, hour: int):
        from .amplifier import ReconstructionDataset
        self.check_hour(hour)
        return ReconstructionDataset(self.grid(f"observed_h{hour:02d}.tgrd"), self.grid(f"coarse_h{hour:02d}.tgrd"),
                                     self.grid("reflectance.tgrd"), self.days, self.n_doy, hour, self.year)

    def aux(self):
        from .air_transformer import AuxGrids
        static = self.grid("static.tgrd").data.astype(np.float64)
        if static.shape[0] != 4:
            raise DataError("static.tgrd must hold lat, lon, elevation, slope")
        return AuxGrids(self.grid("reflectance.tgrd").data, static[0], static[1], static[2], static[3])

    def reanalysis(self, hour: int) -> dict[str, np.ndarray]:
        return {v: self.grid(f"{v}_h{hour:02d}.tgrd").data for v in REANALYSIS_VARS}

    def stations(self, filter_valid: bool = False) -> list[StationRecord]:
        return read_stations(self.path("stations.csv"), filter_valid)


def write_scene(scene, root: str | Path) -> None:
    """Write a synthetic scene as a scene directory (truth layers included)."""
    from .config import format_kv
    from .synth import truth_air
    root = Path(root)
    spec = scene.spec
    meta = {"days": _join(scene.days), "hours": _join(spec.hours), "n_doy": spec.n_doy, "year": spec.year,
            "H": spec.H, "W": spec.W, "seed": spec.seed, "air_transform_truth": spec.air_transform_truth}
    write_grid(scene.reflectance, root / "reflectance.tgrd")
    static = np.stack([scene.lat, scene.lon, scene.elevation, scene.slope])
    write_grid(GridStack.full(static), root / "static.tgrd")
    for hour in spec.hours:
        tag = f"h{hour:02d}"
        write_grid(scene.observed_surf[hour], root / f"observed_{tag}.tgrd")
        write_grid(scene.coarse[hour], root / f"coarse_{tag}.tgrd")
        write_grid(scene.truth_surf[hour], root / f"truth_{tag}.tgrd")
        write_grid(GridStack.full(truth_air(scene, hour)), root / f"truth_air_{tag}.tgrd")
        for var in REANALYSIS_VARS:
            write_grid(GridStack.full(scene.reanalysis[hour][var]), root / f"{var}_{tag}.tgrd")
    write_stations(scene.records, root / "stations.csv")
    with atomic_write(root / SCENE_META, "w") as fh:
        fh.write(format_kv(meta))


def save_ensembles(path: str | Path, jobs) -> None:
    """Store every tile's snapshot ensemble (cycle params, head responses, calibration)."""
    arrays: dict[str, np.ndarray] = {"n_tiles": np.array(len(jobs))}
    for i, job in enumerate(jobs):
        ens = job.ensemble
        p = f"tile{i:03d}."
        arrays[p + "bounds"] = np.array([job.rows.start, job.rows.stop, job.cols.start, job.cols.stop])
        for name in ("T0", "A", "phi", "rho"):
            arrays[p + name] = getattr(ens, name)
        if ens.head is not None:
            arrays[p + "head"] = ens.head
        arrays[p + "days"] = np.asarray(ens.days)
        arrays[p + "n_doy"] = np.array(ens.n_doy)
        arrays[p + "weights"] = ens.weights
        arrays[p + "epochs"] = np.asarray(ens.epochs, dtype=np.int64)
        c = ens.calibration
        if c is not None:
            arrays[p + "calibration"] = np.array([c.lam, c.lower_rank, c.upper_rank, c.target_coverage,
                                                  c.raw_coverage, c.calibrated_coverage, c.n_points])
    save_arrays(path, arrays)


def load_ensembles(path: str | Path):
    from .amplifier import TileJob
    from .ensemble import IntervalCalibration, SnapshotEnsemble
    try:
        z = load_arrays(path)
        jobs = []
        for i in range(int(z["n_tiles"])):
            p = f"tile{i:03d}."
            r0, r1, c0, c1 = (int(v) for v in z[p + "bounds"])
            calib = None
            if p + "calibration" in z:
                lam, lo, hi, tgt, raw, cal, n = z[p + "calibration"]
                calib = IntervalCalibration(float(lam), int(lo), int(hi), float(tgt), float(raw), float(cal), int(n))
            ens = SnapshotEnsemble(z[p + "T0"], z[p + "A"], z[p + "phi"], z[p + "rho"], z.get(p + "head"),
                                   z[p + "days"], int(z[p + "n_doy"]), z[p + "weights"],
                                   z[p + "epochs"].tolist(), calib)
            jobs.append(TileJob(slice(r0, r1), slice(c0, c1), None, ens))
    except (KeyError, ValueError, OSError) as exc:
        raise DataError(f"cannot load ensembles from {path}: {exc}") from None
    return jobs
