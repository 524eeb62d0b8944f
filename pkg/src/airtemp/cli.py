"""``airtemp`` command line: synth, train-amplifier, reconstruct, train-air, predict, evaluate, ablate, render.

Settings resolve as built-in defaults < ``--config`` file < command-line
flags.  Everything is seeded; reruns with the same inputs and seed write
byte-identical files.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from . import io
from .air_transformer import (AirTransformerModel, MlrModel, TrainTestSplit, predict_map, station_samples,
                              train_air_transformer)
from .amplifier import reconstruct_tiled, train_tiled
from .config import AirConfig, RunConfig, TrainConfig, load_run_config, read_kv
from .errors import AirTempError, ConfigError, DataError
from .grid import GridStack
from .metrics import BREAKDOWN_KEYS, breakdown_report, evaluate
from .synth import SceneSpec, generate_scene

log = logging.getLogger("airtemp")

_T = TrainConfig()
_A = AirConfig()

REPORT_HEADER = ("bin_key", "bin_value", "n", "rmse", "mae", "r2")
CALIBRATION_HEADER = ("model_id", "lambda", "raw_coverage", "calibrated_coverage", "n_points")


# ---------------------------------------------------------------- config

def _common(p: argparse.ArgumentParser, out_help: str = "output directory") -> None:
    g = p.add_argument_group("run settings")
    g.add_argument("--config", metavar="PATH", help="key = value config file (amplifier.*, air.*, threads)")
    g.add_argument("--seed", type=int, metavar="U64", help="random seed for every stage (default: 0)")
    g.add_argument("--tile", type=int, metavar="N", help=f"amplifier tile size in pixels (default: {_T.tile})")
    g.add_argument("--coverage", type=float, metavar="F",
                   help=f"target interval coverage (default: {_T.coverage})")
    g.add_argument("--out", metavar="PATH", required=True, help=out_help)
    g.add_argument("--epochs", type=int, help=f"amplifier epochs (default: {_T.epochs})")
    g.add_argument("--lr", type=float, help=f"amplifier Adam learning rate (default: {_T.lr})")
    g.add_argument("--snapshot-start", type=int,
                   help=f"snapshots begin after this epoch (default: {_T.snapshot_start})")
    g.add_argument("--snapshot-every", type=int, help=f"epochs between snapshots (default: {_T.snapshot_every})")
    g.add_argument("--n-snapshots", type=int, help=f"ensemble size (default: {_T.n_snapshots})")
    g.add_argument("--air-epochs", type=int, help=f"air-temperature network epochs (default: {_A.epochs})")
    g.add_argument("--air-lr", type=float, help=f"air-temperature network learning rate (default: {_A.lr})")
    g.add_argument("--batch-size", type=int,
                   help=f"air-temperature batch size, capped at the sample count (default: {_A.batch_size})")


_FLAG_MAP = {
    "amplifier": {"seed": "seed", "tile": "tile", "coverage": "coverage", "epochs": "epochs", "lr": "lr",
                  "snapshot_start": "snapshot_start", "snapshot_every": "snapshot_every",
                  "n_snapshots": "n_snapshots"},
    "air": {"seed": "seed", "air_epochs": "epochs", "air_lr": "lr", "batch_size": "batch_size"},
}


def resolve_config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    for section, mapping in _FLAG_MAP.items():
        changes = {dst: getattr(args, src) for src, dst in mapping.items() if getattr(args, src, None) is not None}
        setattr(cfg, section, dataclasses.replace(getattr(cfg, section), **changes))
    for key in sorted(cfg.extra):
        log.warning("ignoring unknown config key %r", key)
    return cfg.validate()


def workers(cfg: RunConfig) -> int:
    n = cfg.threads or os.cpu_count() or 1
    cap = os.environ.get("AIRTEMP_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"AIRTEMP_THREADS must be an integer, got {cap!r}") from None
    return n


def _coerce_field(value: str, default):
    if isinstance(default, tuple):
        kind = type(default[0]) if default else int
        return tuple(kind(v) for v in value.split(",") if v.strip())
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if default is None:
        return None if value.lower() in ("", "none") else int(value)
    return value


def scene_spec_from_kv(items: dict[str, str]) -> SceneSpec:
    spec = SceneSpec()
    names = {f.name for f in dataclasses.fields(spec)}
    unknown = sorted(set(items) - names)
    if unknown:
        raise ConfigError(f"unknown scene keys: {unknown}")
    changes = {}
    for key, value in items.items():
        try:
            changes[key] = _coerce_field(value, getattr(spec, key))
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    return dataclasses.replace(spec, **changes)


# ---------------------------------------------------------------- helpers

def _hours(scene: io.SceneFiles, hour) -> list[int]:
    return list(scene.hours) if hour is None else [scene.check_hour(hour)]


def _tag(hour: int) -> str:
    return f"h{hour:02d}"


def _month_of(year: int, days) -> np.ndarray:
    base = datetime(year, 1, 1)
    return np.array([(base + timedelta(days=int(d))).month for d in days], dtype=np.int64)


def _train_hour(scene: io.SceneFiles, hour: int, cfg: RunConfig, with_head: bool = True):
    data = scene.dataset(hour)
    log.info("training %s model for hour %d (%d x %d, %d days)", "amplifier" if with_head else "baseline",
             hour, *data.shape, len(data.days))
    jobs = train_tiled(data, cfg.amplifier, with_head, workers(cfg))
    return data, jobs


def _log_rows(jobs):
    for i, job in enumerate(jobs):
        for epoch, train_l1, test_l1 in job.model.history:
            yield (i, epoch, train_l1, test_l1)


def _calibration_rows(prefix: str, hour: int, year: int, jobs):
    for i, job in enumerate(jobs):
        c = job.ensemble.calibration
        if c is not None:
            yield (f"{prefix}_{_tag(hour)}_y{year}_t{i:03d}", c.lam, c.raw_coverage, c.calibrated_coverage,
                   c.n_points)


def _recon_grids(recon_dir: Path, hours, kind: str = "mean") -> dict[int, GridStack]:
    out = {}
    for h in hours:
        p = recon_dir / f"recon_{kind}_{_tag(h)}.tgrd"
        if p.exists():
            out[h] = io.read_grid(p)
    if not out:
        raise DataError(f"no reconstructions (recon_{kind}_hHH.tgrd) found in {recon_dir}")
    return out


def _fit_air_models(samples, split, cfg: RunConfig, year: int):
    models = {}
    for month in np.unique(samples.months):
        models[int(month)] = train_air_transformer(samples, split, cfg.air, month=int(month), year=year)
    return models


def _predict_samples(models, samples) -> np.ndarray:
    out = np.empty(len(samples))
    for month, model in models.items():
        sel = samples.months == month
        if sel.any():
            out[sel] = model.predict(samples.x[sel])
    return out


def _report_rows(reports):
    for r in reports:
        value = "all" if r.value is None else r.value
        yield (r.key, value, r.n, r.rmse, r.mae, r.r2)


def _read_split(path: Path) -> TrainTestSplit:
    import csv
    if not path.exists():
        raise DataError(f"split file {path} not found")
    train, test = set(), set()
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            (test if row["set"] == "test" else train).add(row["station_id"])
    return TrainTestSplit(train, test)


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> None:
    items = read_kv(args.spec) if args.spec else {}
    spec = scene_spec_from_kv(items)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    spec.validate()
    scene = generate_scene(spec)
    io.write_scene(scene, args.out)
    log.info("wrote scene (%d x %d, %d days, hours %s) to %s", spec.H, spec.W, len(spec.days), spec.hours, args.out)


def cmd_train_amplifier(args) -> None:
    cfg = resolve_config(args)
    scene = io.SceneFiles(args.scene)
    hours = _hours(scene, args.hour)
    out = Path(args.out)
    prefix = "baseline" if args.baseline else "amplifier"
    calib_rows = []
    for hour in hours:
        _, jobs = _train_hour(scene, hour, cfg, with_head=not args.baseline)
        io.save_ensembles(out / f"{prefix}_{_tag(hour)}.npz", jobs)
        io.write_csv(out / f"{prefix}_{_tag(hour)}_log.csv", ("tile", "epoch", "train_l1", "test_l1"),
                     _log_rows(jobs))
        calib_rows.extend(_calibration_rows(prefix, hour, scene.year, jobs))
    io.write_csv(out / f"{prefix}_calibration.csv", CALIBRATION_HEADER, calib_rows)


def cmd_reconstruct(args) -> None:
    scene = io.SceneFiles(args.scene)
    hours = _hours(scene, args.hour)
    models = Path(args.models)
    for hour in hours:
        path = models / f"{args.prefix}_{_tag(hour)}.npz"
        if not path.exists():
            raise DataError(f"no ensemble {path.name} in {models}")
    out = Path(args.out)
    for hour in hours:
        jobs = io.load_ensembles(models / f"{args.prefix}_{_tag(hour)}.npz")
        mean, lower, upper = reconstruct_tiled(jobs, scene.dataset(hour))
        for kind, grid in (("mean", mean), ("lower", lower), ("upper", upper)):
            io.write_grid(grid, out / f"recon_{kind}_{_tag(hour)}.tgrd")


def cmd_train_air(args) -> None:
    cfg = resolve_config(args)
    scene = io.SceneFiles(args.scene)
    records = io.read_stations(args.stations, args.filter_valid) if args.stations else scene.stations(args.filter_valid)
    surf = _recon_grids(Path(args.recon), scene.hours)
    samples = station_samples(records, surf, scene.days, scene.aux(), {h: scene.reanalysis(h) for h in surf},
                              scene.year)
    if len(samples) == 0:
        raise DataError("no station records overlap the reconstructed hours and days")
    split = TrainTestSplit.by_station(samples.station_ids, cfg.air.test_fraction, cfg.air.seed)
    models = _fit_air_models(samples, split, cfg, scene.year)
    out = Path(args.out)
    log_rows = []
    for month, model in models.items():
        io.save_arrays(out / f"air_m{month:02d}.npz", model.store.snapshot())
        with io.atomic_write(out / f"air_m{month:02d}.cfg", "w") as fh:
            fh.write(model.sidecar_text())
        log_rows.extend((month, e, a, b) for e, a, b in model.history)
    io.write_csv(out / "air_log.csv", ("month", "epoch", "train_l1", "test_l1"), log_rows)
    io.write_csv(out / "split.csv", ("station_id", "set"),
                 [(s, "train") for s in sorted(split.train_stations)] +
                 [(s, "test") for s in sorted(split.test_stations)])


def load_air_models(models_dir: Path) -> dict[int, AirTransformerModel]:
    models = {}
    for meta in sorted(models_dir.glob("air_m??.cfg")):
        params = io.load_arrays(meta.with_suffix(".npz"))
        model = AirTransformerModel.from_parts(params, meta.read_text(encoding="utf-8"))
        models[model.month] = model
    if not models:
        raise DataError(f"no air-temperature models (air_mMM.cfg/.npz) in {models_dir}")
    return models


def cmd_predict(args) -> None:
    scene = io.SceneFiles(args.scene)
    hours = _hours(scene, args.hour)
    models = load_air_models(Path(args.models))
    months = _month_of(scene.year, scene.days)
    missing = sorted(set(months.tolist()) - set(models))
    if missing:
        raise DataError(f"no air-temperature model for month(s) {missing}")
    recon = Path(args.recon)
    grids = {kind: _recon_grids(recon, hours, kind) for kind in ("mean", "lower", "upper")}
    aux = scene.aux()
    out = Path(args.out)
    for hour in hours:
        if hour not in grids["mean"]:
            raise DataError(f"no reconstruction for hour {hour} in {recon}")
        reanalysis = scene.reanalysis(hour)
        maps = {}
        for kind in ("mean", "lower", "upper"):
            surf = grids[kind][hour].data
            pred = np.empty(surf.shape, dtype=np.float32)
            for month, model in models.items():
                sel = np.flatnonzero(months == month)
                if sel.size:
                    sub = {k: v[sel] for k, v in reanalysis.items()}
                    pred[sel] = predict_map(model, surf[sel], aux, sub, hour).data
            maps[kind] = pred
        # a decreasing transform would swap the bounds
        low = np.minimum(maps["lower"], maps["upper"])
        upp = np.maximum(maps["lower"], maps["upper"])
        io.write_grid(GridStack.full(maps["mean"]), out / f"air_{_tag(hour)}.tgrd")
        io.write_grid(GridStack.full(low), out / f"air_lower_{_tag(hour)}.tgrd")
        io.write_grid(GridStack.full(upp), out / f"air_upper_{_tag(hour)}.tgrd")


def cmd_evaluate(args) -> None:
    scene = io.SceneFiles(args.scene)
    pred_dir = Path(args.pred)
    records = io.read_stations(args.stations) if args.stations else scene.stations()
    if args.split:
        split = _read_split(Path(args.split))
        records = [r for r in records if r.station_id in split.test_stations]
    aux = scene.aux()
    day_pos = {int(d): i for i, d in enumerate(scene.days)}
    grids: dict[int, np.ndarray] = {}
    pix: dict[str, tuple[int, int]] = {}
    pred, obs, hours, months, elev = [], [], [], [], []
    from .air_transformer import nearest_pixel
    for r in records:
        h = r.timestamp.hour
        di = day_pos.get(r.timestamp.timetuple().tm_yday - 1)
        if di is None or r.timestamp.year != scene.year:
            continue
        if h not in grids:
            p = pred_dir / f"air_{_tag(h)}.tgrd"
            if not p.exists():
                continue
            grids[h] = io.read_grid(p).data
        if r.station_id not in pix:
            pix[r.station_id] = nearest_pixel(aux.lat, aux.lon, r.lat, r.lon)
        row, col = pix[r.station_id]
        pred.append(grids[h][di, row, col])
        obs.append(r.t_air)
        hours.append(h)
        months.append(r.timestamp.month)
        elev.append(r.elevation)
    if not pred:
        raise DataError("no station records match the predicted grids")
    reports = breakdown_report(pred, obs, args.key, hours=hours, months=months, elevation=elev)
    io.write_csv(Path(args.out) / f"report_{args.key}.csv", REPORT_HEADER, _report_rows(reports))


def cmd_ablate(args) -> None:
    """Table-3 style comparison on held-out stations.

    atc_only: cycle + amplified coarse (no conv head) feeding the air network;
    amplifier_mlr: full reconstruction feeding a linear regression;
    amplifier_airtransformer: full reconstruction feeding the air network.
    """
    cfg = resolve_config(args)
    scene = io.SceneFiles(args.scene)
    hours = list(scene.hours)
    records = scene.stations()
    aux = scene.aux()
    reanalysis = {h: scene.reanalysis(h) for h in hours}
    recon: dict[str, dict[int, np.ndarray]] = {"amplifier": {}, "baseline": {}}
    loss_rows = []
    for hour in hours:
        for name, head in (("amplifier", True), ("baseline", False)):
            data, jobs = _train_hour(scene, hour, cfg, with_head=head)
            recon[name][hour] = reconstruct_tiled(jobs, data)[0].data
            for i, job in enumerate(jobs):
                _, train_l1, test_l1 = job.model.history[-1]
                loss_rows.append((hour, name, i, train_l1, test_l1))
    samples = {k: station_samples(records, v, scene.days, aux, reanalysis, scene.year) for k, v in recon.items()}
    full = samples["amplifier"]
    if len(full) == 0:
        raise DataError("no station records overlap the scene")
    split = TrainTestSplit.by_station(full.station_ids, cfg.air.test_fraction, cfg.air.seed)
    test = full.in_stations(split.test_stations)
    if not test.any():
        raise DataError("ablation needs held-out stations; raise air.test_fraction or add stations")
    rows = []
    base_models = _fit_air_models(samples["baseline"], split, cfg, scene.year)
    rows.append(("atc_only", _predict_samples(base_models, samples["baseline"])[test]))
    train = full.in_stations(split.train_stations)
    mlr_pred = np.empty(len(full))
    for month in np.unique(full.months):
        sel = full.months == month
        mlr = MlrModel.fit(full.x[sel & train], full.y[sel & train])
        mlr_pred[sel] = mlr.predict(full.x[sel])
    rows.append(("amplifier_mlr", mlr_pred[test]))
    air_models = _fit_air_models(full, split, cfg, scene.year)
    rows.append(("amplifier_airtransformer", _predict_samples(air_models, full)[test]))
    y = full.y[test]
    out = Path(args.out)
    table = []
    for name, pred in rows:
        r = evaluate(pred, y)
        table.append((name, r.mae, r.rmse, r.r2, r.n))
    io.write_csv(out / "ablation.csv", ("method", "mae", "rmse", "r2", "n"), table)
    io.write_csv(out / "ablation_amplifier_loss.csv", ("hour", "model", "tile", "train_l1", "test_l1"), loss_rows)


def cmd_render(args) -> None:
    grid = io.read_grid(args.grid)
    if not 0 <= args.channel < grid.shape[0]:
        raise DataError(f"channel {args.channel} out of range for a {grid.shape[0]}-channel grid")
    io.render_map(grid, args.out, args.channel, args.ramp, args.vmin, args.vmax)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="airtemp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="generate a synthetic scene directory")
    p.add_argument("--spec", metavar="PATH", help="key = value scene description (fields of SceneSpec)")
    p.add_argument("--seed", type=int, metavar="U64", help="overrides the spec's seed (default: 0)")
    p.add_argument("--out", required=True, metavar="DIR", help="scene directory to write")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-amplifier", help="train gap-filling ensembles per hour and tile")
    p.add_argument("--scene", required=True, metavar="DIR")
    p.add_argument("--hour", type=int, help="train only this hour (default: every scene hour)")
    p.add_argument("--baseline", action="store_true", help="drop the conv head (cycle + amplified coarse only)")
    _common(p)
    p.set_defaults(func=cmd_train_amplifier)

    p = sub.add_parser("reconstruct", help="gap-free mean/lower/upper stacks from trained ensembles")
    p.add_argument("--scene", required=True, metavar="DIR")
    p.add_argument("--models", required=True, metavar="DIR", help="output of train-amplifier")
    p.add_argument("--prefix", default="amplifier", choices=("amplifier", "baseline"),
                   help="which ensembles to use (default: amplifier)")
    p.add_argument("--hour", type=int, help="only this hour (default: every scene hour)")
    _common(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("train-air", help="train per-month air-temperature networks on station records")
    p.add_argument("--scene", required=True, metavar="DIR")
    p.add_argument("--recon", required=True, metavar="DIR", help="output of reconstruct")
    p.add_argument("--stations", metavar="CSV", help="station file (default: the scene's stations.csv)")
    p.add_argument("--filter-valid", action="store_true",
                   help="drop station-years with fewer than 50%% of hourly records")
    _common(p)
    p.set_defaults(func=cmd_train_air)

    p = sub.add_parser("predict", help="air-temperature maps with propagated intervals")
    p.add_argument("--scene", required=True, metavar="DIR")
    p.add_argument("--recon", required=True, metavar="DIR")
    p.add_argument("--models", required=True, metavar="DIR", help="output of train-air")
    p.add_argument("--hour", type=int, help="only this hour (default: every scene hour)")
    _common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="station-level RMSE/MAE/R2 report")
    p.add_argument("--scene", required=True, metavar="DIR")
    p.add_argument("--pred", required=True, metavar="DIR", help="output of predict")
    p.add_argument("--stations", metavar="CSV", help="station file (default: the scene's stations.csv)")
    p.add_argument("--split", metavar="CSV", help="split.csv from train-air; evaluate held-out stations only")
    p.add_argument("--key", default="none", choices=BREAKDOWN_KEYS, help="breakdown key (default: none)")
    _common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="compare atc_only, amplifier_mlr and amplifier_airtransformer")
    p.add_argument("--scene", required=True, metavar="DIR")
    _common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("render", help="render one grid channel as a PPM image")
    p.add_argument("--grid", required=True, metavar="PATH")
    p.add_argument("--channel", type=int, default=0, help="channel index (default: 0)")
    p.add_argument("--ramp", default="thermal", choices=sorted(io.RAMPS), help="color ramp (default: thermal)")
    p.add_argument("--vmin", type=float, help="value mapped to the ramp start (default: data minimum)")
    p.add_argument("--vmax", type=float, help="value mapped to the ramp end (default: data maximum)")
    p.add_argument("--out", required=True, metavar="PATH", help="image file to write")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except AirTempError as exc:
        print(f"airtemp {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"airtemp {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
