import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from seedplan import forest
from seedplan.errors import ConfigError, ContractError
from seedplan.forest import ForestConfig, ForestModel, Tree


def _linear_task(n, seed, sigma=0.1):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 4))
    y = 3 * X[:, 0] + sigma * rng.standard_normal(n)
    return X, y


def _leaf(value):
    return Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([float(value)]))


def test_constant_target():
    X = np.random.default_rng(0).normal(size=(30, 3))
    m = forest.fit(X, np.full(30, 7.0), ForestConfig(n_trees=10))
    assert np.all(m.predict(X) == 7.0)
    assert forest.mse(m, X, np.full(30, 7.0)) == 0.0


def test_single_record():
    m = forest.fit(np.array([[1.0, 2.0]]), np.array([4.5]), ForestConfig(n_trees=5))
    assert m.predict(np.array([-3.0, 9.0])) == 4.5


def test_constant_X_gives_root_leaves():
    X = np.ones((20, 3))
    y = np.arange(20.0)
    m = forest.fit(X, y, ForestConfig(n_trees=8, bootstrap=False))
    assert all(t.n_nodes == 1 for t in m.trees)
    assert m.predict(X[0]) == pytest.approx(y.mean())


def test_empty_input_rejected():
    with pytest.raises(ContractError):
        forest.fit(np.zeros((0, 2)), np.zeros(0), ForestConfig(n_trees=2))


def test_linear_signal_learned():
    X, y = _linear_task(2000, 1)
    Xt, yt = _linear_task(1000, 2)
    m = forest.fit(X, y, ForestConfig(n_trees=100, seed=3))
    assert forest.mse(m, Xt, yt) < np.var(yt) / 10
    assert np.isfinite(m.oob_mse)
    assert len(m.trees) == 100


def test_predict_averages_trees():
    cfg = ForestConfig(n_trees=2)
    m = ForestModel([_leaf(4.0), _leaf(6.0)], cfg, ("a",))
    assert m.predict(np.array([0.0])) == 5.0
    assert ForestModel([_leaf(5.0)], ForestConfig(n_trees=1), ("a",)).predict(np.array([1.0])) == 5.0


def test_predict_dimension_mismatch():
    X, y = _linear_task(50, 0)
    m = forest.fit(X, y, ForestConfig(n_trees=3))
    with pytest.raises(ContractError):
        m.predict(np.zeros(3))


def test_mse_definitions():
    X, y = _linear_task(200, 4)
    m = forest.fit(X, y, ForestConfig(n_trees=1, min_samples_leaf=1, bootstrap=False, features_per_split=4))
    assert forest.mse(m, X, y) == 0.0  # fully grown trees on distinct points
    base = ForestModel([_leaf(y.mean())], ForestConfig(n_trees=1), tuple("abcd"))
    assert forest.mse(base, X, y) == pytest.approx(np.var(y))
    with pytest.raises(ContractError):
        forest.mse(m, X[:0], y[:0])


def test_deterministic_given_seed():
    X, y = _linear_task(300, 5)
    a = forest.fit(X, y, ForestConfig(n_trees=10, seed=11))
    b = forest.fit(X, y, ForestConfig(n_trees=10, seed=11))
    assert a.to_dict() == b.to_dict()
    c = forest.fit(X, y, ForestConfig(n_trees=10, seed=12))
    assert a.to_dict() != c.to_dict()


def test_more_trees_not_worse():
    X, y = _linear_task(600, 6, sigma=0.5)
    Xt, yt = _linear_task(2000, 7, sigma=0.5)
    small = np.mean([forest.mse(forest.fit(X, y, ForestConfig(n_trees=5, seed=s)), Xt, yt) for s in range(3)])
    big = np.mean([forest.mse(forest.fit(X, y, ForestConfig(n_trees=100, seed=s)), Xt, yt) for s in range(3)])
    assert big <= small + 0.01


def test_serialization_round_trip(tmp_path):
    X, y = _linear_task(200, 8)
    m = forest.fit(X, y, ForestConfig(n_trees=7, max_depth=4, seed=2), attribute_names=("a", "b", "c", "d"))
    m.save(tmp_path / "f.json")
    back = ForestModel.load(tmp_path / "f.json")
    assert back.to_dict() == m.to_dict()
    np.testing.assert_array_equal(back.predict(X), m.predict(X))


def test_config_validation():
    with pytest.raises(ConfigError):
        ForestConfig(n_trees=0)
    with pytest.raises(ConfigError):
        ForestConfig(min_samples_leaf=0)
    with pytest.raises(ConfigError):
        forest.fit(np.zeros((5, 2)), np.zeros(5), ForestConfig(n_trees=1, features_per_split=3))
    assert ForestConfig().resolved(28).features_per_split == 10


def test_max_depth_zero_is_stump_free():
    X, y = _linear_task(100, 9)
    m = forest.fit(X, y, ForestConfig(n_trees=3, max_depth=0))
    assert all(t.n_nodes == 1 for t in m.trees)


def test_importance_of_unused_attribute_is_zero():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(300, 3))
    X[:, 2] = 1.5
    y = 2 * X[:, 0] + 0.1 * rng.standard_normal(300)
    m = forest.fit(X, y, ForestConfig(n_trees=30, seed=1))
    assert 2 not in m.split_features()
    imp = forest.permutation_importance(m, X, y, seed=4)
    assert abs(imp[2]) < 1e-6
    assert int(np.argmax(imp)) == 0


def test_importance_needs_two_rows():
    X, y = _linear_task(50, 1)
    m = forest.fit(X, y, ForestConfig(n_trees=3))
    with pytest.raises(ContractError):
        forest.permutation_importance(m, X[:1], y[:1])


def test_permuting_unsplit_attribute_changes_nothing():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(200, 4))
    y = np.sin(X[:, 1]) + 0.05 * rng.standard_normal(200)
    m = forest.fit(X, y, ForestConfig(n_trees=20, seed=0, features_per_split=1))
    unused = [j for j in range(4) if j not in m.split_features()]
    Xp = X.copy()
    for j in unused:
        Xp[:, j] = rng.permutation(Xp[:, j])
    np.testing.assert_array_equal(m.predict(Xp), m.predict(X))


@given(
    hnp.arrays(np.float64, st.tuples(st.integers(2, 40), st.integers(1, 4)),
               elements=st.floats(-100, 100, allow_nan=False)),
    st.integers(0, 1000),
)
def test_predictions_within_target_range(X, seed):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=len(X)) * 10
    m = forest.fit(X, y, ForestConfig(n_trees=4, min_samples_leaf=1, seed=seed))
    probe = rng.uniform(-150, 150, size=(20, X.shape[1]))
    p = m.predict(probe)
    assert np.all(p >= y.min() - 1e-9) and np.all(p <= y.max() + 1e-9)


@given(st.integers(0, 10_000))
def test_internal_nodes_have_two_children(seed):
    X, y = _linear_task(80, seed)
    m = forest.fit(X, y, ForestConfig(n_trees=2, min_samples_leaf=2, seed=seed))
    for t in m.trees:
        internal = t.feature >= 0
        assert np.all(t.left[internal] > 0) and np.all(t.right[internal] > 0)
        assert np.all(t.left[~internal] == -1) and np.all(t.right[~internal] == -1)
        assert np.isfinite(t.value).all()
