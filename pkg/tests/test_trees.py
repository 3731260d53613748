import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from missinglens.errors import DataError
from missinglens.trees import (
    LEAF,
    anomaly_score,
    average_path_length,
    fit_isolation_forest,
    fit_random_forest,
    fit_regression_tree,
    harmonic,
    predict_forest,
)


def _mse(tree, X, y, w=None):
    w = np.ones_like(y) if w is None else w
    return float(np.sum(w * (tree.predict(X) - y) ** 2) / np.sum(w))


# ---------------------------------------------------------------- regression tree


def test_single_split_between_clusters():
    X = np.array([[1.0], [2.0], [9.0], [10.0]])
    tree = fit_regression_tree(X, np.array([0.0, 0, 1, 1]), max_depth=1, min_leaf=1)
    assert tree.n_leaves == 2
    assert 2.0 < tree.threshold[0] < 9.0
    assert tree.threshold[0] == 5.5  # midpoint rule
    assert sorted(tree.value[tree.feature == LEAF, 0].tolist()) == [0.0, 1.0]


def test_constant_target_gives_single_leaf():
    tree = fit_regression_tree(np.arange(10.0)[:, None], np.full(10, 3.5), max_depth=3)
    assert tree.n_nodes == 1
    assert np.all(tree.predict(np.array([[-100.0], [100.0]])) == 3.5)


def test_depth_zero_rejected():
    with pytest.raises(DataError):
        fit_regression_tree(np.ones((3, 1)), np.ones(3), max_depth=0)


def test_empty_input_rejected():
    with pytest.raises(DataError):
        fit_regression_tree(np.empty((0, 1)), np.empty(0))


def test_matches_sklearn_tree():
    from sklearn.tree import DecisionTreeRegressor

    rng = np.random.default_rng(3)
    X = rng.normal(size=(300, 3))
    y = np.sin(X[:, 0]) + X[:, 1] ** 2 + 0.1 * rng.normal(size=300)
    ours = fit_regression_tree(X, y, max_depth=3, min_leaf=5)
    ref = DecisionTreeRegressor(max_depth=3, min_samples_leaf=5, random_state=0).fit(X, y)
    assert np.allclose(ours.predict(X), ref.predict(X), atol=1e-10)


def test_weighted_leaf_is_weighted_mean():
    X = np.array([[0.0], [0.0], [1.0], [1.0]])
    y = np.array([1.0, 3.0, 0.0, 0.0])
    w = np.array([3.0, 1.0, 1.0, 1.0])
    tree = fit_regression_tree(X, y, weights=w, max_depth=1, min_leaf=1)
    assert tree.predict(np.array([[0.0]]))[0] == pytest.approx(1.5)


def test_categorical_split_by_mean_order():
    codes = np.array([0, 1, 2, 0, 1, 2] * 5, dtype=float)[:, None]
    y = np.where(codes[:, 0] == 1, 5.0, 0.0)
    tree = fit_regression_tree(codes, y, max_depth=1, min_leaf=1, categorical=[0])
    assert np.allclose(tree.predict(np.array([[0.0], [1.0], [2.0]])), [0, 5, 0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_training_error_non_increasing_in_depth(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(80, 2))
    y = X[:, 0] * X[:, 1] + rng.normal(size=80)
    w = rng.uniform(0.5, 2.0, size=80)
    errs = [_mse(fit_regression_tree(X, y, weights=w, max_depth=d, min_leaf=2), X, y, w) for d in (1, 2, 3, 4)]
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_paths_bounded_and_every_row_reaches_a_leaf(seed, depth):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(60, 3))
    tree = fit_regression_tree(X, rng.normal(size=60), max_depth=depth, min_leaf=1)
    assert tree.height <= depth
    leaves = tree.apply(X)
    assert np.all(tree.feature[leaves] == LEAF)


# ---------------------------------------------------------------- random forest


def test_one_tree_forest_equals_single_tree():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(100, 2))
    y = X[:, 0] + rng.normal(size=100)
    forest = fit_random_forest(X, y, n_trees=1, mtry=2, subsample=None, seed=1, max_depth=3, min_leaf=2)
    tree = fit_regression_tree(X, y, max_depth=3, min_leaf=2)
    assert np.allclose(predict_forest(forest, X), tree.predict(X))


def test_constant_target_forest():
    X = np.random.default_rng(0).normal(size=(40, 2))
    forest = fit_random_forest(X, np.full(40, 7.0), n_trees=5)
    assert np.all(predict_forest(forest, X) == 7.0)


def test_forest_learns_linear_function():
    x = np.linspace(0, 1, 100)
    y = 3 * x
    forest = fit_random_forest(x[:, None], y, n_trees=50, seed=0)
    pred = predict_forest(forest, np.array([[0.5]]))[0]
    assert y.min() <= pred <= y.max()
    assert abs(pred - 1.5) < 0.5


def test_degenerate_forest_inputs_rejected():
    with pytest.raises(DataError):
        fit_random_forest(np.empty((5, 0)), np.ones(5))
    with pytest.raises(DataError):
        fit_random_forest(np.ones((5, 2)), np.ones(5), mtry=3)


def test_forest_reproducible_and_classifies():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(120, 3))
    y = (X[:, 0] > 0).astype(float)
    a = fit_random_forest(X, y, n_trees=20, seed=5, classification=True)
    b = fit_random_forest(X, y, n_trees=20, seed=5, classification=True)
    assert np.array_equal(predict_forest(a, X), predict_forest(b, X))
    assert np.mean(predict_forest(a, X) == y) > 0.95


def test_more_trees_reduce_prediction_variance():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(150, 2))
    y = np.sin(2 * X[:, 0]) + 0.5 * rng.normal(size=150)
    point = np.array([[0.3, -0.2]])
    spread = {}
    for n_trees in (1, 50):
        preds = [predict_forest(fit_random_forest(X, y, n_trees=n_trees, seed=s), point)[0] for s in range(20)]
        spread[n_trees] = np.var(preds)
    assert spread[50] <= spread[1]


# ---------------------------------------------------------------- isolation forest


def test_harmonic_and_normaliser():
    assert harmonic(1) == pytest.approx(1.0, abs=1e-14)
    assert harmonic(3) == pytest.approx(1 + 1 / 2 + 1 / 3, abs=1e-14)
    assert average_path_length(2) == pytest.approx(1.0, abs=1e-14)
    assert average_path_length(1) == 0.0


def test_two_point_forest_scores_half():
    forest = fit_isolation_forest(np.array([[0.0], [1.0]]), n_trees=10, seed=0)
    assert np.allclose(anomaly_score(forest, np.array([0.0, 1.0])), 0.5, atol=1e-15)


def test_identical_points_score_equally():
    forest = fit_isolation_forest(np.full((30, 2), 4.2), n_trees=20, seed=0)
    s = anomaly_score(forest, np.full((30, 2), 4.2))
    assert np.all(s == s[0])


def test_outlier_has_max_score():
    rng = np.random.default_rng(0)
    pts = np.append(rng.normal(0, 0.01, 100), 100.0)
    forest = fit_isolation_forest(pts, n_trees=100, subsample_size=64, seed=1)
    s = anomaly_score(forest, pts)
    assert int(np.argmax(s)) == 100


def test_scores_in_unit_interval_and_height_bounded():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(500, 3))
    forest = fit_isolation_forest(X, n_trees=30, subsample_size=100, seed=2)
    assert all(t.height <= math.ceil(math.log2(100)) for t in forest.trees)
    s = anomaly_score(forest, X)
    assert np.all((s > 0) & (s <= 1))


def test_subsample_clamped_and_deterministic():
    X = np.random.default_rng(4).normal(size=(20, 1))
    a = fit_isolation_forest(X, subsample_size=256, seed=9)
    b = fit_isolation_forest(X, subsample_size=256, seed=9)
    assert a.subsample_size == 20
    assert np.array_equal(anomaly_score(a, X), anomaly_score(b, X))
    with pytest.raises(DataError):
        fit_isolation_forest(np.array([1.0]))
