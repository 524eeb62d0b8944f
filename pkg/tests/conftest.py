from pathlib import Path

from airtemp.cli import main


def write_kv(path: Path, items: dict) -> Path:
    path.write_text("".join(f"{k} = {v}\n" for k, v in items.items()))
    return path


def run(*argv) -> None:
    code = main([str(a) for a in argv])
    assert code == 0, f"airtemp {' '.join(map(str, argv))} exited with {code}"


def run_pipeline(root: Path, spec: dict, config: dict, seed: int = 0) -> Path:
    """synth -> train-amplifier -> reconstruct -> train-air -> predict -> evaluate -> render under ``root``."""
    root.mkdir(parents=True, exist_ok=True)
    spec_file = write_kv(root / "scene.spec", spec)
    cfg = write_kv(root / "run.cfg", config)
    scene, models, recon, air, pred, report = (root / n for n in ("scene", "models", "recon", "air", "pred",
                                                                  "report"))
    common = ("--config", cfg, "--seed", seed)
    run("synth", "--spec", spec_file, "--seed", seed, "--out", scene)
    run("train-amplifier", "--scene", scene, *common, "--out", models)
    run("reconstruct", "--scene", scene, "--models", models, *common, "--out", recon)
    run("train-air", "--scene", scene, "--recon", recon, *common, "--out", air)
    run("predict", "--scene", scene, "--recon", recon, "--models", air, *common, "--out", pred)
    for key in ("none", "hour", "month", "temp_bin", "elev_bin"):
        run("evaluate", "--scene", scene, "--pred", pred, "--split", air / "split.csv", "--key", key, *common,
            "--out", report)
    first = sorted(pred.glob("air_h*.tgrd"))[0]
    run("render", "--grid", first, "--out", report / "map.ppm")
    return root
