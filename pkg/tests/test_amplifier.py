import numpy as np
import pytest

from airtemp.amplifier import (AmplifierModel, ReconstructionDataset, amplifier_forward, atc_only_baseline,
                               masked_l1_loss, reconstruct, reconstruct_tiled, split_test_pixels, train_amplifier,
                               train_tiled)
from airtemp.atc import atc_eval_stack, atc_values
from airtemp.config import TrainConfig
from airtemp.ensemble import SnapshotEnsemble
from airtemp.errors import ConfigError, DegenerateInputError, DimensionError
from airtemp.grid import GridStack
from airtemp.synth import SceneSpec, generate_scene

SHORT = dict(epochs=60, snapshot_start=20, snapshot_every=2, n_snapshots=20)


def random_dataset(seed=0, h=8, w=8, days=range(0, 365, 37), holes=0.3):
    rng = np.random.default_rng(seed)
    days = np.asarray(list(days))
    d = len(days)
    obs = rng.normal(15, 5, (d, h, w))
    return ReconstructionDataset(GridStack(obs, rng.random((d, h, w)) >= holes),
                                 GridStack.full(rng.normal(0, 3, (d, h, w))),
                                 GridStack.full(rng.uniform(0.05, 0.5, (5, h, w))), days)


def randomize(model, seed):
    rng = np.random.default_rng(seed)
    for name in ("T0", "A", "phi", "rho"):
        model.store.set(f"atc.{name}", rng.uniform(-2, 2, model.shape))


@pytest.fixture(scope="module")
def scene():
    spec = SceneSpec(H=12, W=12, n_days=40, day_step=9, texture_amplitude=1.5, cloud_fraction=0.3,
                     cloud_blob_scale=3.0, n_stations=2, seed=11)
    return generate_scene(spec)


def test_zero_head_zero_rho_equals_cycle():
    data = random_dataset()
    m = AmplifierModel(data.shape, data.days)
    randomize(m, 1)
    m.store.set("atc.rho", np.zeros(m.shape))
    m.head.zero_output(m.store)
    out = amplifier_forward(m, data)
    np.testing.assert_array_equal(out.data, atc_eval_stack(m.atc, data.days).data)


def test_pass_through_coarse():
    data = random_dataset(1)
    m = AmplifierModel(data.shape, data.days)
    m.store.set("atc.rho", np.ones(m.shape))
    m.head.zero_output(m.store)
    np.testing.assert_allclose(amplifier_forward(m, data).data, data.coarse.data, atol=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_component_sum_oracle(seed):
    data = random_dataset(seed, days=range(0, 365, 36))
    m = AmplifierModel(data.shape, data.days, seed=seed)
    randomize(m, seed + 10)
    cycle = atc_values(m.atc, data.days).astype(np.float64)
    amplified = m.store["atc.rho"][None].astype(np.float64) * data.coarse.data
    head = m.head.forward(data.reflectance.data).astype(np.float64)
    out = amplifier_forward(m, data).data
    np.testing.assert_allclose(out, cycle + amplified + head, atol=1e-5)
    train_out = m.forward(data)[0]
    np.testing.assert_allclose(train_out, out, atol=1e-5)


def test_forward_rejects_mismatched_data():
    m = AmplifierModel((8, 8), np.arange(5))
    with pytest.raises(DimensionError):
        m.forward(random_dataset(h=6))
    with pytest.raises(DimensionError):
        m.forward(random_dataset())


def test_dataset_validation():
    data = random_dataset()
    with pytest.raises(DimensionError):
        ReconstructionDataset(data.observed, data.coarse, data.coarse, data.days)
    with pytest.raises(DegenerateInputError):
        ReconstructionDataset(data.observed, data.observed, data.reflectance, data.days)


def test_masked_l1_cases():
    rng = np.random.default_rng(0)
    obs = rng.normal(size=(3, 4, 5)).astype(np.float32)
    mask = rng.random((3, 4, 5)) < 0.6
    assert masked_l1_loss(obs, obs, mask) == 0.0
    assert masked_l1_loss(obs + 2, obs, mask) == pytest.approx(2.0, abs=1e-6)
    with pytest.raises(DegenerateInputError):
        masked_l1_loss(obs, obs, np.zeros_like(mask))


def test_masked_l1_loop_oracle():
    rng = np.random.default_rng(1)
    for _ in range(10):
        shape = tuple(rng.integers(2, 7, 3))
        pred = rng.normal(size=shape).astype(np.float32)
        obs = rng.normal(size=shape).astype(np.float32)
        mask = rng.random(shape) < 0.5
        mask.flat[0] = True
        total, n = 0.0, 0
        for idx in np.ndindex(shape):
            if mask[idx]:
                total += abs(float(pred[idx]) - float(obs[idx]))
                n += 1
        assert masked_l1_loss(pred, obs, mask) == pytest.approx(total / n, rel=1e-7)


def test_default_schedule():
    c = TrainConfig()
    assert (c.epochs, c.lr) == (600, 0.1)
    epochs = c.snapshot_epochs()
    assert len(epochs) == 200 and epochs[0] == 201 and epochs[-1] == 599 and np.all(np.diff(epochs) == 2)


def test_short_run_rejected():
    with pytest.raises(ConfigError, match="unreachable"):
        TrainConfig(epochs=200).validate()
    with pytest.raises(ConfigError):
        train_amplifier(random_dataset(), TrainConfig(epochs=150))


def test_all_masked_is_degenerate():
    data = random_dataset(holes=1.01)
    with pytest.raises(DegenerateInputError):
        train_amplifier(data, TrainConfig(**SHORT))


def test_baseline_head_output_is_zero(scene):
    model, ens = atc_only_baseline(scene.dataset(12), TrainConfig(**SHORT))
    assert model.head is None and ens.head is None
    assert not model.head_output(np.random.default_rng(0).random((5, 12, 12))).any()


def test_short_training(scene):
    data = scene.dataset(12)
    model, ens = train_amplifier(data, TrainConfig(**SHORT))
    assert len(ens) == 20 and ens.epochs[0] == 21
    first, last = model.history[0][1], model.history[-1][1]
    assert last <= first
    mean, lower, upper = reconstruct(ens, data)
    for g in (mean, lower, upper):
        assert g.shape == data.observed.shape and np.isfinite(g.data).all() and g.mask.all()
    assert (lower.data <= mean.data + 1e-4).all() and (mean.data <= upper.data + 1e-4).all()
    m = split_test_pixels(data.observed.mask, 0.2, 0)[0]
    inside = (data.observed.data >= lower.data - 1e-4) & (data.observed.data <= upper.data + 1e-4)
    assert inside[m].mean() >= 0.945


def test_identical_snapshots_have_zero_width():
    data = random_dataset(2)
    m = AmplifierModel(data.shape, data.days, with_head=False)
    randomize(m, 3)
    k = 10
    stack = lambda a: np.repeat(a[None], k, axis=0)
    ens = SnapshotEnsemble(stack(m.store["atc.T0"]), stack(m.store["atc.A"]), stack(m.store["atc.phi"]),
                           stack(m.store["atc.rho"]), None, data.days, data.n_doy)
    mean, lower, upper = reconstruct(ens, data)
    np.testing.assert_allclose(mean.data, amplifier_forward(m, data).data, atol=1e-5)
    np.testing.assert_array_equal(lower.data, mean.data)
    np.testing.assert_array_equal(upper.data, mean.data)


def test_tiled_training_covers_grid(scene):
    data = scene.dataset(12)
    cfg = TrainConfig(**SHORT, tile=8)
    jobs = train_tiled(data, cfg)
    assert len(jobs) == 4
    mean, lower, upper = reconstruct_tiled(jobs, data)
    assert np.isfinite(mean.data).all()
    ref = reconstruct(jobs[0].ensemble, data.crop(jobs[0].rows, jobs[0].cols))[0]
    np.testing.assert_array_equal(mean.data[:, :8, :8], ref.data)


def test_training_is_deterministic(scene):
    data = scene.dataset(12)
    a = train_amplifier(data, TrainConfig(**SHORT))[1]
    b = train_amplifier(data, TrainConfig(**SHORT))[1]
    assert a.T0.tobytes() == b.T0.tobytes() and a.head.tobytes() == b.head.tobytes()


@pytest.mark.slow
def test_smoothed_loss_non_increasing_on_default_schedule(scene):
    model, _ = train_amplifier(scene.dataset(12), TrainConfig())
    loss = np.array([h[1] for h in model.history])
    ma = np.convolve(loss, np.ones(50) / 50, mode="valid")[100:]
    # constant-lr Adam on L1 jitters at the plateau; allow 5% above the running minimum
    assert np.all(ma <= 1.05 * np.minimum.accumulate(ma))
    assert ma[-1] < 0.6 * ma[0]
