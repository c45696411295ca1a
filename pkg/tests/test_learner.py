import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from devmatch.learner import (
    BaggedEnsemble, BoostParams, bootstrap_indices, cross_validate, dumps, fit_tree,
    fold_assignment, load, loads, log_loss, logistic_grad_hess, predict, save, sigmoid, train,
    train_bagged,
)

from oracles import all_small_datasets, check_greedy_tree, route

EXACT = BoostParams(rounds=1, max_depth=10, min_child_weight=0.0, min_split_gain=0.0)


def toy(n=300, d=5, seed=0, missing=0.1):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 6, size=(n, d)).astype(float)
    X[rng.random((n, d)) < missing] = -1.0
    y = ((X[:, 0] + X[:, 1] + rng.normal(0, 1.5, n)) > 5).astype(float)
    return X, y


def test_grad_hess_finite_differences():
    rng = np.random.default_rng(1)
    for m in rng.uniform(-8, 8, 200):
        for y in (0.0, 1.0):
            eps = 1e-5
            loss = lambda z: log_loss(sigmoid(z), y)
            g, h = logistic_grad_hess(sigmoid(m), y)
            assert abs((loss(m + eps) - loss(m - eps)) / (2 * eps) - g) < 1e-6
            gp, _ = logistic_grad_hess(sigmoid(m + eps), y)
            gm, _ = logistic_grad_hess(sigmoid(m - eps), y)
            assert abs((gp - gm) / (2 * eps) - h) < 1e-6


def test_sigmoid_is_clipped_and_finite():
    p = sigmoid(np.array([-1e9, 0.0, 1e9]))
    assert np.all(np.isfinite(p)) and 0 < p[0] < 1e-12 and p[1] == 0.5 and 1 - p[2] < 1e-12


def test_single_leaf_weight():
    X = np.zeros((5, 1))
    g = np.array([0.5, -0.25, 0.1, 0.3, -0.2])
    h = np.array([0.25, 0.2, 0.1, 0.05, 0.3])
    t = fit_tree(X, g, h, BoostParams(l2_reg=1.0))
    assert t.n_nodes == 1
    assert abs(t.weight[0] - (-g.sum() / (h.sum() + 1.0))) < 1e-12


def test_threshold_midpoint_and_strict_left():
    X = np.array([[0.0], [0.0], [2.0], [2.0]])
    g = np.array([-1.0, -1.0, 1.0, 1.0])
    h = np.ones(4)
    t = fit_tree(X, g, h, EXACT)
    assert t.feature[0] == 0 and t.threshold[0] == 1.0
    assert route(t, [0.999]) == t.left[0] and route(t, [1.0]) == t.right[0]


def test_missing_direction_learned():
    X = np.array([[-1.0], [-1.0], [0.0], [1.0], [5.0], [6.0]])
    g = np.array([-1.0, -1.0, -1.0, -1.0, 1.0, 1.0])
    h = np.ones(6)
    t = fit_tree(X, g, h, EXACT.with_overrides(max_depth=1))
    assert t.missing_left[0] and t.threshold[0] == 3.0


def test_missing_vs_rest_split():
    X = np.array([[-1.0], [-1.0], [3.0], [3.0]])
    g = np.array([-1.0, -1.0, 1.0, 1.0])
    t = fit_tree(X, g, np.ones(4), EXACT)
    assert t.feature[0] == 0 and t.missing_left[0] and t.threshold[0] == 3.0


def test_mask_disables_missing_semantics():
    X = np.array([[-1.0], [-1.0], [3.0], [3.0]])
    g = np.array([-1.0, -1.0, 1.0, 1.0])
    t = fit_tree(X, g, np.ones(4), EXACT, missing_mask=np.array([False]))
    assert not t.missing_left[0] and t.threshold[0] == 1.0


def test_min_split_gain_and_child_weight_gates():
    X = np.array([[0.0], [1.0]])
    g = np.array([-1.0, 1.0])
    h = np.ones(2)
    # gain = 0.5*(1/2 + 1/2 - 0) = 0.5
    assert fit_tree(X, g, h, EXACT).n_nodes == 3
    assert fit_tree(X, g, h, EXACT.with_overrides(min_split_gain=0.6)).n_nodes == 1
    assert fit_tree(X, g, h, EXACT.with_overrides(min_child_weight=1.5)).n_nodes == 1


def test_depth_limit():
    X, y = toy()
    m = train(X, y, BoostParams(rounds=3, max_depth=2, min_split_gain=0.0, min_child_weight=0.0))
    assert all(t.depth() <= 2 for t in m.trees)


def test_exhaustive_two_row_datasets():
    checked = 0
    for X, y in all_small_datasets(2):
        if min(y) == max(y):
            continue
        p = np.full(2, 0.5)
        g, h = logistic_grad_hess(p, np.array(y))
        t = fit_tree(np.array(X), g, h, EXACT)
        assert check_greedy_tree(t, X, list(g), list(h), EXACT) == []
        checked += 1
    assert checked == 81 * 2


@settings(max_examples=60)
@given(hnp.arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(1, 3)),
                  elements=st.sampled_from([-1.0, 0.0, 0.5, 1.0, 2.0, 7.0])),
       st.data())
def test_tree_is_greedy_optimal(X, data):
    n = len(X)
    g = np.array(data.draw(st.lists(st.floats(-1, 1), min_size=n, max_size=n)))
    h = np.array(data.draw(st.lists(st.floats(0.01, 0.25), min_size=n, max_size=n)))
    params = BoostParams(rounds=1, max_depth=3, min_child_weight=0.02, min_split_gain=0.0)
    t = fit_tree(X, g, h, params)
    assert check_greedy_tree(t, X.tolist(), list(g), list(h), params) == []


def test_loss_monotone():
    X, y = toy(500)
    m = train(X, y, BoostParams(rounds=60))
    diffs = np.diff(m.loss_history)
    assert np.all(diffs <= 1e-12)
    assert m.loss_history[-1] < m.loss_history[0]


def test_subsample_deterministic_and_different():
    X, y = toy(400)
    p = BoostParams(rounds=10, subsample=0.5)
    a, b, c = train(X, y, p, seed=1), train(X, y, p, seed=1), train(X, y, p, seed=2)
    assert np.array_equal(a.predict(X), b.predict(X))
    assert not np.array_equal(a.predict(X), c.predict(X))


def test_train_rejects_bad_labels():
    X = np.zeros((4, 2))
    with pytest.raises(ValueError):
        train(X, np.zeros(4))
    with pytest.raises(ValueError):
        train(X, np.array([0, 1, 2, 1]))
    with pytest.raises(ValueError):
        train(np.zeros((0, 2)), np.zeros(0))


def test_params_validated():
    for bad in (dict(rounds=0), dict(subsample=0), dict(learning_rate=2), dict(base_score=1.0),
                dict(max_depth=0), dict(l2_reg=-1)):
        with pytest.raises(ValueError):
            BoostParams(**bad)


def test_bagging_mean_and_seeds():
    X, y = toy(300)
    p = BoostParams(rounds=8)
    ens = train_bagged(X, y, p, n_bags=4, master_seed=10)
    assert ens.seeds == [10, 11, 12, 13]
    members = ens.member_predictions(X)
    np.testing.assert_allclose(ens.predict(X), members.mean(axis=0), rtol=0, atol=1e-15)
    idx = bootstrap_indices(len(X), 12)
    solo = train(X[idx], y[idx], p, seed=12)
    np.testing.assert_array_equal(solo.predict(X), members[2])
    np.testing.assert_array_equal(bootstrap_indices(50, 3), np.random.default_rng(3).integers(0, 50, 50))


def test_one_bag_without_bootstrap_is_plain_training():
    X, y = toy(200)
    p = BoostParams(rounds=5)
    ens = train_bagged(X, y, p, n_bags=1, master_seed=4, bootstrap=False)
    np.testing.assert_array_equal(ens.predict(X), train(X, y, p, seed=4).predict(X))


def test_parallel_bagging_identical():
    X, y = toy(200)
    p = BoostParams(rounds=5)
    a = train_bagged(X, y, p, n_bags=3, master_seed=0)
    b = train_bagged(X, y, p, n_bags=3, master_seed=0, n_jobs=2)
    np.testing.assert_array_equal(a.predict(X), b.predict(X))


def test_predict_empty():
    X, y = toy(100)
    m = train(X, y, BoostParams(rounds=2))
    assert predict(m, np.zeros((0, X.shape[1]))).shape == (0,)


def test_serialization_roundtrip(tmp_path):
    X, y = toy(300)
    m = train(X, y, BoostParams(rounds=15, learning_rate=0.3), missing_mask=np.array([1, 0, 1, 1, 0], bool))
    m2 = loads(dumps(m))
    np.testing.assert_array_equal(m.predict(X), m2.predict(X))
    assert m2.params == m.params and m2.seed == m.seed
    ens = train_bagged(X, y, BoostParams(rounds=4), n_bags=2, master_seed=7)
    save(ens, tmp_path / "e.txt")
    back = load(tmp_path / "e.txt")
    assert isinstance(back, BaggedEnsemble) and back.seeds == [7, 8]
    np.testing.assert_array_equal(ens.predict(X), back.predict(X))
    assert dumps(back) == dumps(ens)


def test_loads_rejects_garbage():
    with pytest.raises(ValueError):
        loads("not a model\n")


def test_fold_assignment():
    groups = [f"g{i % 23}" for i in range(100)]
    a = fold_assignment(groups, 5, 0)
    assert a == fold_assignment(groups, 5, 0)
    sizes = np.bincount(list(a.values()))
    assert sizes.max() - sizes.min() <= 1
    with pytest.raises(ValueError):
        fold_assignment(["a", "b"], 3, 0)


def test_cross_validate_groups_by_device(small_catalog):
    from devmatch.candidates import select_all
    from devmatch.features import DeviceLabels, build_dataset, missing_mask

    cat = small_catalog
    ids = sorted(d for d, r in cat.devices.items() if r.handle.known)
    rows = build_dataset(cat, select_all(cat, ids), DeviceLabels.from_catalog(cat, ids))
    res = cross_validate(rows, [{"rounds": 5}, {"rounds": 10}], k=3, missing_mask=missing_mask())
    assert len(res) == 2 and all(len(r.fold_log_loss) == 3 for r in res)
    assert all(0 <= r.mean_f05 <= 1 and math.isfinite(r.mean_log_loss) for r in res)
