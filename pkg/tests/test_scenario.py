import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from seedplan import scenario
from seedplan.dataset import WEATHER_RANDOM, Dataset
from seedplan.errors import ContractError, DataError
from seedplan.forest import ForestConfig, ForestModel, Tree
from seedplan.hierarchy import HierarchicalModel
from seedplan.scenario import ScenarioMatrix, SiteQuery, WeatherSample


def _sites_dataset(sites):
    """``sites``: list of (site_id, lat, lon, climate, years). One record per site-year."""
    rows = [(s, lat, lon, c, y) for s, lat, lon, c, years in sites for y in years]
    n = len(rows)
    names = ("TEMP", "PREC", "RAD", "SOIL")
    X = np.array([[1000.0 + i, 500.0 + i, 2000.0 + i, 7.0] for i in range(n)])
    return Dataset(names, np.array([r[4] for r in rows]), np.array([r[0] for r in rows]),
                   np.array([r[1] for r in rows], float), np.array([r[2] for r in rows], float),
                   np.array([r[3] for r in rows]), np.array(["V"] * n), X, np.ones(n), np.ones(n))


def _leaf(value, p):
    t = Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([float(value)]))
    return ForestModel([t], ForestConfig(n_trees=1), tuple(f"a{i}" for i in range(p)))


def _linear_tree(feature, threshold, lo, hi, p):
    t = Tree(np.array([feature, -1, -1]), np.array([threshold, 0.0, 0.0]), np.array([1, -1, -1]),
             np.array([2, -1, -1]), np.array([0.0, lo, hi]))
    return ForestModel([t], ForestConfig(n_trees=1), ("TEMP", "PREC", "RAD", "SOIL")[:p])


GRID = [(f"S{i:02d}", float(i), float(-i), "C1" if i % 3 == 0 else "C2", [2010, 2011]) for i in range(10)]


def test_query_validation():
    with pytest.raises(ContractError):
        SiteQuery(91.0, 0.0, "C1")
    with pytest.raises(ContractError):
        SiteQuery(0.0, -181.0, "C1")


def test_single_site_always_returned():
    d = _sites_dataset([("A", 1.0, 1.0, "X", [2010])])
    assert scenario.similar_sites(d, SiteQuery(50.0, 50.0, "Y"), 20) == {"A"}


def test_union_of_neighbors_and_climate():
    d = _sites_dataset(GRID)
    got = scenario.similar_sites(d, SiteQuery(0.0, 0.0, "C1"), 2)
    assert got == {"S00", "S01"} | {"S00", "S03", "S06", "S09"}


def test_query_at_site_includes_it():
    d = _sites_dataset(GRID)
    assert "S05" in scenario.similar_sites(d, SiteQuery(5.0, -5.0, "none"), 1)


def test_neighbor_ties_broken_by_site_id():
    d = _sites_dataset([("B", 1.0, 0.0, "X", [2010]), ("A", -1.0, 0.0, "X", [2010]), ("C", 0.0, 1.0, "X", [2010])])
    assert scenario.similar_sites(d, SiteQuery(0.0, 0.0, "none"), 1) == {"A"}
    assert scenario.similar_sites(d, SiteQuery(0.0, 0.0, "none"), 2) == {"A", "B"}


def test_singleton_pool():
    d = _sites_dataset([("A", 1.0, 1.0, "X", [2012])])
    w = scenario.sample_weather(d, {"A"}, 25, seed=3)
    assert len(w) == 25 and len(set(w)) == 1
    assert w[0] == WeatherSample(1000.0, 500.0, 2000.0, "A", 2012)


def test_empty_pool_raises():
    d = _sites_dataset(GRID)
    with pytest.raises(DataError):
        scenario.sample_weather(d, {"nowhere"}, 5)


def test_pool_is_distinct_site_years():
    d = _sites_dataset([("A", 0.0, 0.0, "X", [2010, 2010, 2011])])
    assert len(scenario.weather_pool(d, {"A"})) == 2


def test_sampling_uniform_within_3_sigma():
    d = _sites_dataset(GRID)
    sites = {s for s, *_ in GRID}
    n = 10_000
    draws = scenario.sample_weather(d, sites, n, seed=17)
    pool = scenario.weather_pool(d, sites)
    counts = {(w.source_site, w.source_year): 0 for w in pool}
    for w in draws:
        counts[(w.source_site, w.source_year)] += 1
    p = 1 / len(pool)
    sd = math.sqrt(n * p * (1 - p))
    assert all(abs(c - n * p) <= 3 * sd for c in counts.values())
    # chi-square with 19 degrees of freedom; 99.9% quantile is 43.8
    chi2 = sum((c - n * p) ** 2 / (n * p) for c in counts.values())
    assert chi2 < 43.8


def test_sampling_deterministic():
    d = _sites_dataset(GRID)
    sites = {"S01", "S02"}
    assert scenario.sample_weather(d, sites, 50, 4) == scenario.sample_weather(d, sites, 50, 4)


# -- scenario matrices ---------------------------------------------------

def _toy_model(resid):
    names = ("TEMP", "PREC", "RAD", "SOIL")
    check = _linear_tree(0, 1005.0, 40.0, 60.0, 4)
    ratio = {"A": _leaf(1.0, 4), "B": _leaf(1.5, 4)}
    ratio = {v: ForestModel(m.trees, m.config, names) for v, m in ratio.items()}
    return HierarchicalModel(check, ratio, dict(resid))


def test_zero_noise_single_sample_is_deterministic():
    m = _toy_model({"A": 0.0, "B": 0.0})
    w = [WeatherSample(1000.0, 1.0, 1.0, "S", 2010)] * 4
    s = scenario.build_scenarios(m, {"SOIL": 7.0}, w, seed=1)
    np.testing.assert_array_equal(s.values, np.tile([40.0, 60.0], (4, 1)))
    assert s.n_floored == 0


def test_build_same_seed_identical():
    m = _toy_model({"A": 4.0, "B": 1.0})
    d = _sites_dataset(GRID)
    w = scenario.sample_weather(d, {"S01", "S02", "S03"}, 100, seed=2)
    a = scenario.build_scenarios(m, {"SOIL": 7.0}, w, seed=9)
    b = scenario.build_scenarios(m, {"SOIL": 7.0}, w, seed=9)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.provenance == [(x.source_site, x.source_year) for x in w]


def test_missing_residual_rejected():
    m = _toy_model({"A": 1.0})
    with pytest.raises(ContractError):
        scenario.build_scenarios(m, {"SOIL": 7.0}, [WeatherSample(1, 1, 1, "S", 1)])


def test_missing_fixed_attribute_rejected():
    m = _toy_model({"A": 1.0, "B": 1.0})
    with pytest.raises(ContractError):
        scenario.build_scenarios(m, {}, [WeatherSample(1, 1, 1, "S", 1)])


def test_column_means_law_of_large_numbers():
    resid = {"A": 9.0, "B": 2.25}
    m = _toy_model(resid)
    d = _sites_dataset(GRID)
    w = scenario.sample_weather(d, {s for s, *_ in GRID}, 10_000, seed=5)
    s = scenario.build_scenarios(m, {"SOIL": 7.0}, w, seed=6)
    clean = m.predict_matrix(scenario.scenario_inputs(m, {"SOIL": 7.0}, w))
    for j, v in enumerate(s.varieties):
        tol = 3 * math.sqrt(resid[v] / 10_000)
        assert abs(s.values[:, j].mean() - clean[:, j].mean()) <= tol


def test_negative_yields_floored_and_counted():
    names = ("TEMP", "PREC", "RAD", "SOIL")
    m = HierarchicalModel(ForestModel(_leaf(1.0, 4).trees, ForestConfig(n_trees=1), names),
                          {"A": ForestModel(_leaf(1.0, 4).trees, ForestConfig(n_trees=1), names)}, {"A": 100.0})
    s = scenario.build_scenarios(m, {"SOIL": 0.0}, [WeatherSample(1, 1, 1, "S", 1)] * 200, seed=0)
    assert s.n_floored > 0 and s.values.min() == 0.0
    assert s.n_floored == int(np.sum(s.values == 0.0))


def test_no_flooring_in_normal_regime():
    m = _toy_model({"A": 1.0, "B": 1.0})  # predictions >= 40, 5 sd = 5
    w = [WeatherSample(1000.0, 1.0, 1.0, "S", 2010)] * 1000
    assert scenario.build_scenarios(m, {"SOIL": 7.0}, w, seed=3).n_floored == 0


def test_matrix_csv_round_trip(tmp_path):
    m = _toy_model({"A": 4.0, "B": 1.0})
    w = [WeatherSample(1000.0 + i, 1.0, 1.0, f"S{i}", 2010 + i) for i in range(12)]
    s = scenario.build_scenarios(m, {"SOIL": 7.0}, w, seed=2)
    s.to_csv(tmp_path / "s.csv", comment="hash")
    back = ScenarioMatrix.from_csv(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.values, s.values)
    assert back.provenance == s.provenance and back.seed == 2 and back.varieties == s.varieties


# -- statistics ----------------------------------------------------------

def test_stats_hand_matrix():
    s = ScenarioMatrix(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]), ["a", "b"], [("", 0)] * 3, 0)
    st_ = scenario.stats(s)
    assert st_.mu.tolist() == [3.0, 4.0]
    assert st_.sigma.tolist() == [[4.0, 4.0], [4.0, 4.0]]


def test_stats_constant_matrix():
    s = ScenarioMatrix(np.full((5, 3), 2.5), list("abc"), [("", 0)] * 5, 0)
    assert np.all(scenario.stats(s).sigma == 0.0)


def test_stats_needs_two_rows():
    with pytest.raises(ContractError):
        scenario.stats(ScenarioMatrix(np.ones((1, 2)), ["a", "b"], [("", 0)], 0))


def test_identical_columns_block():
    col = np.array([1.0, 4.0, 2.0, 8.0])
    s = ScenarioMatrix(np.column_stack([col, col]), ["a", "b"], [("", 0)] * 4, 0)
    sig = scenario.stats(s).sigma
    assert np.all(sig == np.var(col, ddof=1))


matrices = hnp.arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 6)),
                      elements=st.floats(0, 200, allow_nan=False, width=32))


@given(matrices)
def test_stats_properties(Y):
    s = ScenarioMatrix(Y, [f"v{j}" for j in range(Y.shape[1])], [("", 0)] * len(Y), 0)
    st_ = scenario.stats(s)
    assert np.array_equal(st_.sigma, st_.sigma.T)
    assert np.linalg.eigvalsh(st_.sigma).min() >= -1e-8 * max(1.0, np.abs(st_.sigma).max())
    np.testing.assert_array_equal(np.diag(st_.sigma), np.var(Y, axis=0, ddof=1))


@given(matrices, st.integers(0, 1000))
def test_stats_row_permutation_invariant(Y, seed):
    perm = np.random.default_rng(seed).permutation(len(Y))
    a = scenario.stats(ScenarioMatrix(Y, [f"v{j}" for j in range(Y.shape[1])], [("", 0)] * len(Y), 0))
    b = scenario.stats(ScenarioMatrix(Y[perm], [f"v{j}" for j in range(Y.shape[1])], [("", 0)] * len(Y), 0))
    np.testing.assert_allclose(a.mu, b.mu, rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(a.sigma, b.sigma, rtol=1e-9, atol=1e-6)


def test_provenance_points_into_pool():
    d = _sites_dataset(GRID)
    sites = scenario.similar_sites(d, SiteQuery(3.0, -3.0, "C2"), 3)
    pool = {(w.source_site, w.source_year) for w in scenario.weather_pool(d, sites)}
    m = _toy_model({"A": 1.0, "B": 1.0})
    s = scenario.build_scenarios(m, {"SOIL": 7.0}, scenario.sample_weather(d, sites, 300, 1), seed=1)
    assert set(s.provenance) <= pool


def test_site_attributes_are_medians():
    d = _sites_dataset(GRID)
    attrs = scenario.site_attributes(d, "S04")
    rows = d.X[d.site == "S04"]
    assert attrs["TEMP"] == float(np.median(rows[:, 0]))
    assert scenario.nearest_site(d, SiteQuery(4.1, -4.0, "C1")) == "S04"
