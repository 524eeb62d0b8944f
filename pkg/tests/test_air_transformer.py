import numpy as np
import pytest

from airtemp.air_transformer import (FEATURES, N_FEATURES, AirSamples, AirTransformerModel, AuxGrids, FeatureNorms,
                                     MlrModel, TrainTestSplit, build_features, nearest_pixel, predict_map,
                                     station_samples, train_air_transformer, transform_forward)
from airtemp.config import AirConfig
from airtemp.errors import DataError, DimensionError
from airtemp.metrics import evaluate
from airtemp.synth import SceneSpec, generate_scene

QUICK = AirConfig(epochs=30, batch_size=256)


@pytest.fixture(scope="module")
def scene():
    # days 20..39 straddle the January/February boundary
    return generate_scene(SceneSpec(H=12, W=12, n_days=20, start_day=20, hours=(6, 15), n_stations=10,
                                    station_noise=0.2, seed=4))


@pytest.fixture(scope="module")
def samples(scene):
    return station_samples(scene.records, {h: scene.truth_surf[h].data for h in scene.spec.hours}, scene.days,
                           AuxGrids.from_scene(scene), scene.reanalysis, scene.spec.year)


def test_sixteen_features():
    assert N_FEATURES == len(FEATURES) == 16 == 1 + 5 + 3 + 2 + 5
    assert "aspect" not in FEATURES


def test_station_fields_pass_through(scene, samples):
    assert len(samples) == len(scene.records)
    by_id = {st.station_id: st for st in scene.stations}
    for i in range(0, len(samples), 37):
        st = by_id[samples.station_ids[i]]
        assert samples.x[i, FEATURES.index("lat")] == st.lat
        assert samples.x[i, FEATURES.index("lon")] == st.lon
        assert samples.x[i, FEATURES.index("elevation")] == st.elevation
        assert (samples.extra["row"][i], samples.extra["col"][i]) == (st.row, st.col)
        assert samples.x[i, 0] == scene.truth_surf[samples.hours[i]].data[samples.extra["day_idx"][i], st.row, st.col]


def test_nearest_pixel_recovers_station_cells(scene):
    for st in scene.stations:
        assert nearest_pixel(scene.lat, scene.lon, st.lat + 0.004, st.lon - 0.004) == (st.row, st.col)


def test_build_features_errors(scene):
    aux = AuxGrids.from_scene(scene)
    h = scene.spec.hours[0]
    surf = scene.observed_surf[h]
    di, r, c = np.nonzero(~surf.mask)
    with pytest.raises(DataError):
        build_features(surf, aux, scene.reanalysis[h], h, di[:1], r[:1], c[:1])
    missing = dict(scene.reanalysis[h])
    del missing["tcw"]
    with pytest.raises(DataError, match="tcw"):
        build_features(scene.truth_surf[h], aux, missing, h, 0, 0, 0)
    no_slope = AuxGrids(aux.reflectance, aux.lat, aux.lon, aux.elevation, None)
    with pytest.raises(DataError, match="slope"):
        build_features(scene.truth_surf[h], no_slope, scene.reanalysis[h], h, 0, 0, 0)
    with pytest.raises(DimensionError):
        build_features(scene.truth_surf[h].data[:, :5], aux, scene.reanalysis[h], h, 0, 0, 0)


def test_norm_round_trip():
    rng = np.random.default_rng(0)
    x = rng.normal(50, 30, (200, N_FEATURES))
    x[:, 8] = 12.0
    y = rng.normal(10, 4, 200)
    n = FeatureNorms.fit(x, y)
    assert n.std[8] == 1.0
    np.testing.assert_allclose(n.denormalize(n.normalize(x)), x, atol=1e-6)
    np.testing.assert_allclose(n.denormalize_target(n.normalize_target(y)), y, atol=1e-6)
    z = n.normalize(x)
    np.testing.assert_allclose(z[:, :8].mean(axis=0), 0, atol=1e-9)
    np.testing.assert_allclose(z[:, :8].std(axis=0), 1, atol=1e-9)


def constant_model(bias, norms=None):
    m = AirTransformerModel(norms=norms)
    m.store.set("out.w", np.zeros_like(m.store["out.w"]))
    m.store.set("out.b", np.full_like(m.store["out.b"], bias))
    return m


def test_constant_head():
    norms = FeatureNorms(np.zeros(N_FEATURES), np.ones(N_FEATURES), target_mean=10.0, target_std=2.0)
    m = constant_model(0.5, norms)
    out = transform_forward(m, np.random.default_rng(1).normal(size=(7, N_FEATURES)))
    np.testing.assert_allclose(out, 11.0, atol=1e-6)


def test_identical_rows_and_batch_consistency():
    m = AirTransformerModel(seed=3)
    rng = np.random.default_rng(2)
    row = rng.normal(size=(1, N_FEATURES))
    same = transform_forward(m, np.repeat(row, 5, axis=0))
    assert np.all(same == same[0])
    batch = rng.normal(size=(50, N_FEATURES))
    batch[17] = row[0]
    np.testing.assert_allclose(transform_forward(m, batch)[17], transform_forward(m, row)[0], atol=1e-6)


def test_feature_width_mismatch():
    with pytest.raises(DimensionError):
        transform_forward(AirTransformerModel(), np.zeros((3, 15)))
    with pytest.raises(DimensionError):
        MlrModel.fit(np.random.default_rng(0).random((40, 16)), np.zeros(40)).predict(np.zeros((2, 17)))


def test_split_is_disjoint_and_seeded():
    ids = [f"S{i}" for i in range(25)]
    a = TrainTestSplit.by_station(ids, 0.2, seed=1)
    assert len(a.test_stations) == 5 and not a.train_stations & a.test_stations
    assert a.train_stations | a.test_stations == set(ids)
    assert TrainTestSplit.by_station(ids, 0.2, seed=1) == a
    assert TrainTestSplit.by_station(ids, 0.2, seed=2) != a
    with pytest.raises(DataError):
        TrainTestSplit({"A", "B"}, {"B"})
    two = TrainTestSplit.by_station(["A", "B"], 0.2)
    assert len(two.test_stations) == 1 and len(two.train_stations) == 1


def test_training_reduces_loss_and_is_reproducible(samples):
    split = TrainTestSplit.by_station(samples.station_ids, 0.2, seed=0)
    a = train_air_transformer(samples, split, QUICK, month=1)
    b = train_air_transformer(samples, split, QUICK, month=1)
    assert a.history[-1][1] < a.history[0][1]
    np.testing.assert_array_equal(a.history, b.history)
    for name in a.store:
        assert a.store[name].tobytes() == b.store[name].tobytes()


def test_month_models_only_see_their_month(samples):
    split = TrainTestSplit.by_station(samples.station_ids, 0.2, seed=0)
    assert set(np.unique(samples.months)) == {1, 2}
    jan = train_air_transformer(samples, split, QUICK, month=1)
    train_jan = samples.in_stations(split.train_stations) & (samples.months == 1)
    expected = FeatureNorms.fit(samples.x[train_jan], samples.y[train_jan])
    np.testing.assert_array_equal(jan.norms.mean, expected.mean)
    # corrupting February rows leaves the January model untouched
    poisoned = samples.select(np.arange(len(samples)))
    poisoned.y[poisoned.months == 2] += 100.0
    jan2 = train_air_transformer(poisoned, split, QUICK, month=1)
    np.testing.assert_array_equal(jan2.history, jan.history)
    with pytest.raises(DataError):
        train_air_transformer(samples, split, QUICK, month=7)
    with pytest.raises(DataError):
        train_air_transformer(samples, split, QUICK)


def test_predictions_are_plausible(samples):
    split = TrainTestSplit.by_station(samples.station_ids, 0.2, seed=0)
    m = train_air_transformer(samples, split, QUICK, month=2)
    pred = m.predict(samples.x)
    assert np.isfinite(pred).all()
    assert pred.min() >= samples.y.min() - 10 and pred.max() <= samples.y.max() + 10


def test_predict_map_matches_point_predictions(scene, samples):
    split = TrainTestSplit.by_station(samples.station_ids, 0.2, seed=0)
    m = train_air_transformer(samples, split, QUICK, month=1)
    aux = AuxGrids.from_scene(scene)
    h = scene.spec.hours[1]
    grid = predict_map(m, scene.truth_surf[h], aux, scene.reanalysis[h], h, chunk=500)
    assert grid.shape == scene.truth_surf[h].shape and grid.mask.all() and np.isfinite(grid.data).all()
    sel = samples.hours == h
    rows = np.nonzero(sel)[0][:20]
    # station coordinates differ from pixel-centre values only through the pass-through fields
    x = build_features(scene.truth_surf[h], aux, scene.reanalysis[h], h, samples.extra["day_idx"][rows],
                       samples.extra["row"][rows], samples.extra["col"][rows])
    on_map = grid.data[samples.extra["day_idx"][rows], samples.extra["row"][rows], samples.extra["col"][rows]]
    np.testing.assert_allclose(on_map, transform_forward(m, x), atol=1e-4)
    const = predict_map(constant_model(0.0, m.norms), scene.truth_surf[h], aux, scene.reanalysis[h], h)
    assert np.ptp(const.data) == 0
    with pytest.raises(DimensionError):
        predict_map(m, scene.truth_surf[h].data[:, :6], aux, scene.reanalysis[h], h)


def test_station_residuals_match_metrics(samples):
    split = TrainTestSplit.by_station(samples.station_ids, 0.2, seed=0)
    m = train_air_transformer(samples, split, QUICK, month=1)
    sel = samples.months == 1
    pred = m.predict(samples.x[sel])
    resid = pred - samples.y[sel]
    r = evaluate(pred, samples.y[sel])
    assert r.rmse == pytest.approx(np.sqrt(np.mean(resid ** 2)), rel=1e-12)
    assert r.mae == pytest.approx(np.mean(np.abs(resid)), rel=1e-12)


def test_sidecar_round_trip(samples):
    split = TrainTestSplit.by_station(samples.station_ids, 0.2, seed=0)
    m = train_air_transformer(samples, split, QUICK, month=2, year=2023)
    params = m.store.snapshot()
    back = AirTransformerModel.from_parts(params, m.sidecar_text())
    assert (back.month, back.year) == (2, 2023)
    np.testing.assert_array_equal(back.predict(samples.x[:10]), m.predict(samples.x[:10]))
    with pytest.raises(DataError):
        AirTransformerModel.from_parts(params, "month = 2\n")


def test_mlr_recovers_linear_target():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(300, N_FEATURES))
    y = x @ rng.normal(size=N_FEATURES) + 3.0
    np.testing.assert_allclose(MlrModel.fit(x, y).predict(x), y, atol=1e-9)


def test_samples_validation():
    with pytest.raises(DimensionError):
        AirSamples(np.zeros((3, N_FEATURES)), [1, 2], ["a"] * 3, [1] * 3, [0] * 3)
    with pytest.raises(DataError):
        AirTransformerModel(month=13)
