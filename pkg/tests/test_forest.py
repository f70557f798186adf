import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pefrf.forest import (ForestConfig, ModelFormatError, ModelVersionError, TrainingSet,
                          grid_search, load_model, model_to_bytes, oob_error, predict,
                          predict_many, save_model, split_counts, train_forest)


def synthetic(n, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([rng.random(n) * 0.5, rng.random(n) * 0.8, 2.0 + rng.random(n)])
    y = np.clip((X[:, 2] - 2.0) * 0.7 + 0.3 * X[:, 0] + noise * rng.standard_normal(n), 0, 1)
    return TrainingSet(X, y)


def test_training_set_validation():
    with pytest.raises(ValueError):
        TrainingSet(np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(ValueError):
        TrainingSet(np.zeros((2, 3)), np.array([0.5, 1.5]))
    ts = TrainingSet.from_pairs([((0, 0, 3), 1.0), ((0.1, 0.2, 2.5), 0.4)])
    assert len(ts) == 2


def test_config_defaults():
    cfg = ForestConfig()
    assert (cfg.n_trees, cfg.max_depth, cfg.features_per_split, cfg.bootstrap) == (200, 20, 3, True)
    with pytest.raises(ValueError):
        ForestConfig(features_per_split=4)


def test_single_sample_forest():
    ts = TrainingSet([[0.1, 0.2, 2.9]], [0.7])
    model = train_forest(ts, ForestConfig(n_trees=5))
    assert all(t.n_nodes == 1 for t in model.trees)
    assert predict(model, (5, 5, 5)) == 0.7


def test_constant_targets():
    ts = synthetic(30)
    ts = TrainingSet(ts.features, np.full(30, 0.42))
    model = train_forest(ts, ForestConfig(n_trees=10))
    assert all(t.n_nodes == 1 and t.value[0] == 0.42 for t in model.trees)
    assert predict(model, (0, 0, 0)) == pytest.approx(0.42, abs=1e-15)
    assert oob_error(model, ts).mse == pytest.approx(0.0, abs=1e-30)


def test_memorization_single_tree():
    rng = np.random.default_rng(4)
    X = rng.random((50, 3))
    X[:, 2] = 2 + X[:, 2]
    y = X[:, 2] / 3
    ts = TrainingSet(X, y)
    model = train_forest(ts, ForestConfig(n_trees=1, bootstrap=False, max_depth=20))
    assert np.array_equal(predict_many(model, X), y)
    for i in (0, 17, 49):
        assert predict(model, X[i]) == y[i]


def test_depth_zero_tree_predicts_mean():
    ts = TrainingSet([[0, 0, 1], [0, 1, 2], [1, 0, 3]], [0.2, 0.4, 0.6])
    model = train_forest(ts, ForestConfig(n_trees=1, max_depth=0, bootstrap=False))
    assert predict(model, (9, 9, 9)) == pytest.approx(0.4, abs=1e-15)


def test_depth_limit_respected():
    model = train_forest(synthetic(80), ForestConfig(n_trees=5, max_depth=3))
    assert max(t.depth() for t in model.trees) <= 3


def test_determinism_and_worker_independence():
    ts = synthetic(60, noise=0.05)
    cfg = ForestConfig(n_trees=12, seed=99)
    a = model_to_bytes(train_forest(ts, cfg))
    b = model_to_bytes(train_forest(ts, cfg, workers=3))
    assert a == b


def test_input_order_does_not_matter():
    ts = synthetic(40, noise=0.05)
    perm = np.random.default_rng(1).permutation(40)
    cfg = ForestConfig(n_trees=8, seed=3)
    a = train_forest(ts, cfg)
    b = train_forest(ts.subset(perm), cfg)
    assert model_to_bytes(a) == model_to_bytes(b)


def test_earlier_trees_unaffected_by_tree_count():
    ts = synthetic(40, noise=0.05)
    small = train_forest(ts, ForestConfig(n_trees=3, seed=5))
    big = train_forest(ts, ForestConfig(n_trees=9, seed=5))
    for s, b in zip(small.trees, big.trees[:3]):
        assert np.array_equal(s.threshold, b.threshold) and np.array_equal(s.value, b.value)


@settings(max_examples=15)
@given(st.integers(5, 40), st.integers(0, 2 ** 32), st.integers(1, 3))
def test_prediction_range_and_contraction(n, seed, fps):
    ts = synthetic(n, seed=seed % 1000, noise=0.2)
    model = train_forest(ts, ForestConfig(n_trees=6, seed=seed, features_per_split=fps))
    q = np.random.default_rng(seed).random((20, 3)) * 4 - 1
    p = predict_many(model, q)
    lo, hi = model.leaf_range()
    assert np.all((0 <= p) & (p <= 1))
    assert np.all((lo - 1e-12 <= p) & (p <= hi + 1e-12))


def test_oob_requires_bootstrap():
    model = train_forest(synthetic(10), ForestConfig(n_trees=2, bootstrap=False))
    with pytest.raises(ValueError):
        oob_error(model, synthetic(10))


def test_oob_empty_coverage_is_signalled():
    ts = TrainingSet([[0, 0, 1]], [0.5])
    model = train_forest(ts, ForestConfig(n_trees=1))
    with pytest.warns(UserWarning):
        res = oob_error(model, ts)
    assert res.n_covered == 0 and np.isnan(res.mse)


def test_oob_tracks_held_out_error():
    train = synthetic(100, seed=1, noise=0.05)
    test = synthetic(400, seed=2, noise=0.05)
    model = train_forest(train, ForestConfig(n_trees=200, seed=0))
    oob = oob_error(model, train)
    err = predict_many(model, test.features) - test.targets
    held_out = float(np.mean(err ** 2))
    assert oob.n_covered == 100
    assert held_out / 2 <= oob.mse <= 2 * held_out


def test_grid_search_singleton_and_argmax():
    ts = synthetic(40, noise=0.02)
    best, cells = grid_search(ts, [7], [4], k=4, seed=0)
    assert (best.n_trees, best.max_depth) == (7, 4) and len(cells) == 1
    best, cells = grid_search(ts, [5, 10], [2, 6], k=4, seed=0)
    top = max(c.mean_srcc for c in cells)
    chosen = next(c for c in cells if (c.n_trees, c.max_depth) == (best.n_trees, best.max_depth))
    assert chosen.mean_srcc == top


def test_grid_search_tie_break():
    # duplicate configs give identical scores; fewer trees then shallower wins
    ts = synthetic(30, noise=0.02)
    cfg = ForestConfig(n_trees=1, bootstrap=False, seed=0)
    best, cells = grid_search(ts, [3, 1], [25, 20], k=3, seed=0, base=cfg)
    assert len({c.mean_srcc for c in cells}) == 1
    assert (best.n_trees, best.max_depth) == (1, 20)


def test_grid_search_too_few_samples():
    with pytest.raises(ValueError):
        grid_search(synthetic(3), [5], [5], k=5)


def test_save_load_roundtrip(tmp_path):
    ts = synthetic(50, noise=0.05)
    model = train_forest(ts, ForestConfig(n_trees=10, seed=2 ** 63 + 7))
    path = tmp_path / "m.rf"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.config == model.config
    q = np.random.default_rng(0).random((100, 3)) * 3
    assert predict_many(loaded, q).tobytes() == predict_many(model, q).tobytes()
    assert oob_error(loaded, ts) == oob_error(model, ts)
    assert model_to_bytes(loaded) == path.read_bytes()


def test_load_rejects_truncated_and_bumped(tmp_path):
    raw = model_to_bytes(train_forest(synthetic(20), ForestConfig(n_trees=3)))
    assert raw[:8] == b"PEFRF-RF"
    path = tmp_path / "m.rf"
    path.write_bytes(raw[:-20])
    with pytest.raises(ModelFormatError):
        load_model(path)
    bumped = bytearray(raw)
    bumped[8] += 1
    path.write_bytes(bytes(bumped))
    with pytest.raises(ModelVersionError):
        load_model(path)


def test_split_counts_report():
    model = train_forest(synthetic(40), ForestConfig(n_trees=4))
    counts = split_counts(model)
    assert counts.sum() == sum(int((t.feature >= 0).sum()) for t in model.trees)
