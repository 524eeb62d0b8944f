import csv
import re

import pytest

from airtemp.cli import build_parser, main
from conftest import run, run_pipeline, write_kv

SUBCOMMANDS = ("train-amplifier", "reconstruct", "train-air", "predict", "evaluate", "ablate")
TINY_SPEC = dict(H=8, W=8, n_days=12, day_step=30, hours="6,18", n_stations=10, station_noise=0.2,
                 cloud_blob_scale=3.0)
TINY_CFG = {"amplifier.epochs": 30, "amplifier.snapshot_start": 10, "amplifier.n_snapshots": 10,
            "air.epochs": 20, "air.batch_size": 128}


def help_text(command):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command").choices[command]
    return sub.format_help()


@pytest.mark.parametrize("command", SUBCOMMANDS)
def test_help_lists_published_defaults(command):
    text = re.sub(r"\s+", " ", help_text(command))
    for flag, default in (("--epochs", "600"), ("--lr", "0.1"), ("--air-epochs", "500"), ("--air-lr", "0.01"),
                          ("--batch-size", "65536"), ("--coverage", "0.95"), ("--seed", "0"),
                          ("--n-snapshots", "200"), ("--snapshot-every", "2")):
        assert re.search(re.escape(flag) + r" \S+ .*?\(default: " + re.escape(default) + r"\)", text), flag
    for flag in ("--config", "--tile", "--out"):
        assert flag in text


def test_every_subcommand_has_help():
    for command in SUBCOMMANDS + ("synth", "render"):
        assert "--out" in help_text(command)


def test_typed_errors_exit_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.tgrd"
    bad.write_bytes(b"DRGT" + bytes(40))
    assert main(["render", "--grid", str(bad), "--out", str(tmp_path / "x.ppm")]) == 2
    assert "magic" in capsys.readouterr().err
    assert not (tmp_path / "x.ppm").exists()
    assert main(["render", "--grid", str(tmp_path / "missing.tgrd"), "--out", str(tmp_path / "x.ppm")]) == 1
    spec = write_kv(tmp_path / "s.spec", {"cloud_fraction": 1.5})
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "scene")]) == 2
    assert not (tmp_path / "scene").exists()


def test_invalid_config_is_rejected_before_outputs(tmp_path):
    run("synth", "--spec", write_kv(tmp_path / "s.spec", TINY_SPEC), "--out", tmp_path / "scene")
    cfg = write_kv(tmp_path / "c.cfg", {"amplifier.epochs": 100})
    out = tmp_path / "models"
    assert main(["train-amplifier", "--scene", str(tmp_path / "scene"), "--config", str(cfg),
                 "--out", str(out)]) == 2
    assert not out.exists() or not any(out.iterdir())
    cfg = write_kv(tmp_path / "c2.cfg", {"amplifier.epochs": "many"})
    assert main(["train-amplifier", "--scene", str(tmp_path / "scene"), "--config", str(cfg),
                 "--out", str(out)]) == 2


@pytest.fixture(scope="module")
def pipelines(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    return [run_pipeline(base / f"run{i}", TINY_SPEC, TINY_CFG, seed=3) for i in range(2)]


def test_pipeline_outputs(pipelines):
    root = pipelines[0]
    for name in ("recon/recon_mean_h06.tgrd", "recon/recon_lower_h18.tgrd", "air/air_m01.npz", "air/air_m01.cfg",
                 "air/split.csv", "pred/air_h06.tgrd", "pred/air_lower_h06.tgrd", "report/report_none.csv",
                 "report/map.ppm", "models/amplifier_h06.npz", "models/amplifier_calibration.csv"):
        assert (root / name).exists(), name
    with open(root / "report" / "report_hour.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["bin_value"] for r in rows] == ["6", "18"]
    assert set(rows[0]) == {"bin_key", "bin_value", "n", "rmse", "mae", "r2"}


def test_pipeline_rerun_is_byte_identical(pipelines):
    a, b = pipelines
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert len(files) > 20
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), str(rel)


def test_ablate_rows(tmp_path):
    run("synth", "--spec", write_kv(tmp_path / "s.spec", TINY_SPEC), "--out", tmp_path / "scene")
    cfg = write_kv(tmp_path / "c.cfg", TINY_CFG)
    run("ablate", "--scene", tmp_path / "scene", "--config", cfg, "--out", tmp_path / "abl")
    with open(tmp_path / "abl" / "ablation.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["method"] for r in rows] == ["atc_only", "amplifier_mlr", "amplifier_airtransformer"]
    assert set(rows[0]) == {"method", "mae", "rmse", "r2", "n"}
