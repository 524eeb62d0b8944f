import numpy as np
import pytest
from scipy import ndimage

from airtemp.atc import atc_values
from airtemp.errors import DimensionError, SpecError
from airtemp.metrics import mae, rmse
from airtemp.synth import (SceneSpec, affine_transform, cloud_mask, default_transform, generate_scene,
                           oracle_eval, truth_air)


def small(**kw):
    base = dict(H=16, W=16, n_days=12, day_step=30, n_stations=6, seed=5)
    base.update(kw)
    return SceneSpec(**base)


@pytest.fixture(scope="module")
def scene():
    return generate_scene(small(noise_sigma=0.3, station_noise=0.2))


def test_noiseless_scene_is_cycle_plus_amplified_coarse():
    s = generate_scene(small(texture_amplitude=0.0, noise_sigma=0.0, cloud_fraction=0.0))
    hour = s.spec.hours[0]
    f = s.atc_for_hour(hour)
    expected = atc_values(f, s.days) + f.rho[None] * s.coarse[hour].data
    np.testing.assert_array_equal(s.observed_surf[hour].data, expected)
    assert s.observed_surf[hour].mask.all()


def test_same_seed_is_bit_identical():
    a, b = generate_scene(small(noise_sigma=0.5, station_noise=0.5)), generate_scene(small(noise_sigma=0.5,
                                                                                            station_noise=0.5))
    h = a.spec.hours[0]
    for name in ("truth_surf", "observed_surf", "coarse"):
        ga, gb = getattr(a, name)[h], getattr(b, name)[h]
        assert ga.data.tobytes() == gb.data.tobytes()
        assert ga.mask.tobytes() == gb.mask.tobytes()
    assert [r.t_air for r in a.records] == [r.t_air for r in b.records]
    c = generate_scene(small(noise_sigma=0.5, station_noise=0.5, seed=6))
    assert c.truth_surf[h].data.tobytes() != a.truth_surf[h].data.tobytes()


def test_observed_equals_truth_plus_noise_where_clear(scene):
    h = scene.spec.hours[0]
    obs, truth = scene.observed_surf[h], scene.truth_surf[h]
    diff = (obs.data - truth.data)[obs.mask]
    assert 0.2 < diff.std() < 0.4
    assert scene.coarse[h].mask.all() and truth.mask.all()


@pytest.mark.parametrize("seed", range(5))
def test_cloud_fraction_counting_oracle(seed):
    s = generate_scene(SceneSpec(H=32, W=32, n_days=5, cloud_fraction=0.3, n_stations=2, seed=seed))
    mask = s.observed_surf[12].mask
    frac = 1.0 - np.count_nonzero(mask) / mask.size
    assert 0.28 <= frac <= 0.32


def test_cloud_blobs_are_spatially_correlated():
    rng = np.random.default_rng(0)
    scale = 6.0
    areas = []
    for _ in range(10):
        labels, n = ndimage.label(cloud_mask(rng, 64, 64, 0.3, scale))
        areas.extend(np.bincount(labels.ravel())[1:])
    assert np.mean(areas) >= scale ** 2 / 4


def test_unreachable_cloud_fraction():
    with pytest.raises(SpecError):
        SceneSpec(H=2, W=2, cloud_fraction=0.1).validate()
    with pytest.raises(SpecError):
        SceneSpec(cloud_fraction=1.0).validate()


def test_spec_validation():
    for bad in (dict(n_doy=366), dict(hours=()), dict(hours=(24,)), dict(noise_sigma=-1.0),
                dict(n_stations=10_000), dict(air_transform_truth="cubic"), dict(n_days=400)):
        with pytest.raises(SpecError):
            SceneSpec(**bad).validate()


def test_stations_on_distinct_pixels(scene):
    assert len(scene.stations) == scene.spec.n_stations
    assert len({(st.row, st.col) for st in scene.stations}) == len(scene.stations)
    assert len(scene.records) == len(scene.stations) * len(scene.days) * len(scene.spec.hours)


def test_station_values_follow_transform():
    s = generate_scene(small(station_noise=0.0))
    h = s.spec.hours[0]
    air = truth_air(s, h)
    for rec, (hour, di, si) in zip(s.records, s.record_index):
        st = s.stations[si]
        assert rec.t_air == pytest.approx(air[di, st.row, st.col], abs=1e-9)


def test_transforms():
    assert default_transform(t_surf=10.0, elevation=0.0, hour=0) == pytest.approx(9.0)
    assert default_transform(t_surf=10.0, elevation=500.0, hour=6) == pytest.approx(9.0 - 1.0 + 1.5)
    assert affine_transform(t_surf=10.0) == pytest.approx(9.0)


def test_oracle_eval_truth_is_zero(scene):
    h = scene.spec.hours[0]
    st = oracle_eval(scene, scene.truth_surf[h])
    assert st.rmse_observed == st.mae_masked == 0.0
    assert st.n_observed + st.n_masked == scene.truth_surf[h].data.size


def test_oracle_eval_constant_offset(scene):
    h = scene.spec.hours[0]
    st = oracle_eval(scene, scene.truth_surf[h].data.astype(np.float64) + 1.0)
    assert st.mae_observed == pytest.approx(1.0) and st.mae_masked == pytest.approx(1.0)


def test_oracle_eval_matches_metrics_module(scene):
    h = scene.spec.hours[0]
    rng = np.random.default_rng(3)
    out = rng.normal(15, 5, scene.truth_surf[h].data.shape)
    st = oracle_eval(scene, out)
    clear = scene.observed_surf[h].mask
    truth = scene.truth_surf[h].data
    assert st.rmse_observed == rmse(out[clear], truth[clear])
    assert st.mae_masked == mae(out[~clear], truth[~clear])
    air = oracle_eval(scene, truth_air(scene, h), target="air")
    assert air.rmse_observed == 0.0


def test_oracle_eval_misaligned(scene):
    with pytest.raises(DimensionError):
        oracle_eval(scene, np.zeros((2, 2, 2)))
