import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from seedplan import decision
from seedplan.decision import (
    Portfolio,
    PortfolioConstraints,
    compositions,
    count_weightings,
    empirical_quantile,
    solve_risk_capped,
    solve_risk_capped_heuristic,
    solve_robust_exact,
    solve_robust_greedy,
    solve_utility,
    solve_utility_heuristic,
    sweep,
)
from seedplan.errors import BudgetExceeded, ConfigError, ContractError, InfeasibleError
from seedplan.scenario import ScenarioMatrix, ScenarioStats

from instances import random_scenarios, random_stats

TWO = ScenarioStats(np.array([10.0, 9.0]), np.diag([4.0, 1.0]), ["A", "B"])


def _brute_mean_variance(s, c, objective):
    """Every feasible grid portfolio, scored by ``objective(mean, var)``; None = infeasible."""
    n, g = len(s.mu), c.grid
    best = None
    for k in range(1, c.cap(n) + 1):
        for support in itertools.combinations(range(n), k):
            for counts in compositions(g, k):
                w = np.zeros(n)
                w[list(support)] = counts / g
                val = objective(w @ s.mu, w @ s.sigma @ w)
                if val is not None and (best is None or val > best):
                    best = val
    return best


# -- types and helpers -------------------------------------------------

def test_constraints_validation():
    assert PortfolioConstraints().grid == 10
    with pytest.raises(ConfigError):
        PortfolioConstraints(increment=0.3)
    with pytest.raises(ConfigError):
        PortfolioConstraints(max_varieties=0)
    assert PortfolioConstraints(increment=0.25, max_varieties=5).cap(8) == 4


def test_portfolio_invariants():
    p = Portfolio.from_support([3, 1], [7, 3], 10)
    assert p.support == (1, 3)
    assert p.weights == {1: 0.3, 3: 0.7}
    assert p.is_feasible(PortfolioConstraints(), 4)
    with pytest.raises(ContractError):
        Portfolio(((0, 5), (1, 4)), 10)
    with pytest.raises(ContractError):
        Portfolio(((0, 10), (1, 0)), 10)


@given(st.integers(1, 12), st.integers(1, 6))
def test_compositions(total, parts):
    W = compositions(total, parts)
    assert len(W) == (math.comb(total - 1, parts - 1) if parts <= total else 0)
    if len(W):
        assert np.all(W.sum(axis=1) == total) and np.all(W > 0)
        rows = [tuple(r) for r in W.tolist()]
        assert rows == sorted(rows, reverse=True)


def test_count_weightings():
    assert count_weightings(2, PortfolioConstraints()) == 2 + 9


# -- quantile ----------------------------------------------------------

def test_quantile_examples():
    v = np.arange(1.0, 11.0)
    assert empirical_quantile(v, 0.2) == 2.0
    assert empirical_quantile(v, 0.0) == 1.0
    assert empirical_quantile(v, 1.0) == 10.0
    assert empirical_quantile(v, 0.7) == 7.0
    with pytest.raises(ContractError):
        empirical_quantile([], 0.5)
    with pytest.raises(ContractError):
        empirical_quantile(v, 1.5)


@given(hnp.arrays(np.float64, st.integers(1, 50), elements=st.floats(-1e6, 1e6, allow_nan=False)),
       st.floats(0, 1))
def test_quantile_matches_sort(values, alpha):
    k = max(1, math.ceil(round(alpha * len(values), 9)))
    assert empirical_quantile(values, alpha) == np.sort(values)[k - 1]


# -- mean-variance -----------------------------------------------------

def test_utility_oracle():
    s = solve_utility(TWO, 1.0)
    assert s.combination == [0.3, 0.7]
    assert s.objective == 8.45
    assert s.solver == "exact"


def test_utility_lambda_zero_is_argmax_mu():
    s = solve_utility(TWO, 0.0)
    assert s.selected == ["A"] and s.combination == [1.0]
    assert solve_utility_heuristic(TWO, 0.0).selected == ["A"]


def test_risk_cap_oracle():
    s = solve_risk_capped(TWO, 1.0)
    assert s.combination == [0.4, 0.6]
    assert s.expected_yield == 9.4
    assert s.variance == 1.0


def test_risk_cap_inactive():
    s = solve_risk_capped(TWO, 4.0)
    assert s.selected == ["A"] and s.combination == [1.0]


def test_risk_cap_infeasible_reports_minimum():
    with pytest.raises(InfeasibleError) as err:
        solve_risk_capped(TWO, 0.1)
    # smallest grid variance: 0.2/0.8 split -> 0.04*4 + 0.64*1 = 0.8
    assert err.value.min_variance == pytest.approx(0.8)


def test_utility_budget_exceeded():
    with pytest.raises(BudgetExceeded, match="heuristic"):
        solve_utility(random_stats(np.random.default_rng(0), n=10), 0.05, PortfolioConstraints(node_budget=100))


def test_utility_ties_pick_smallest_support():
    s = ScenarioStats(np.array([5.0, 5.0, 5.0]), np.zeros((3, 3)), list("abc"))
    assert solve_utility(s, 0.0).selected == ["a"]
    assert solve_risk_capped(s, 1.0).selected == ["a"]


@given(st.integers(0, 10_000), st.floats(0, 0.2))
def test_utility_matches_brute_force(seed, lam):
    s = random_stats(np.random.default_rng(seed), n=5, s=40)
    c = PortfolioConstraints(increment=0.2, max_varieties=3)
    sol = solve_utility(s, lam, c)
    brute = _brute_mean_variance(s, c, lambda m, v: m - lam * v)
    assert sol.objective == pytest.approx(brute, rel=1e-12, abs=1e-12)


@given(st.integers(0, 10_000), st.floats(5, 60))
def test_risk_cap_matches_brute_force(seed, beta):
    s = random_stats(np.random.default_rng(seed), n=5, s=40)
    c = PortfolioConstraints(increment=0.2, max_varieties=3)
    brute = _brute_mean_variance(s, c, lambda m, v: m if v <= beta else None)
    if brute is None:
        with pytest.raises(InfeasibleError):
            solve_risk_capped(s, beta, c)
        return
    sol = solve_risk_capped(s, beta, c)
    assert sol.objective == pytest.approx(brute, rel=1e-12)
    assert sol.variance <= beta * (1 + 1e-9)


@given(st.integers(0, 10_000), st.floats(0, 0.3))
def test_heuristic_bounded_by_exact(seed, lam):
    s = random_stats(np.random.default_rng(seed), n=7, s=50)
    exact = solve_utility(s, lam)
    heur = solve_utility_heuristic(s, lam)
    best_single = max(s.mu - lam * np.diag(s.sigma))
    assert heur.objective <= exact.objective + 1e-12
    assert heur.objective >= best_single - 1e-12
    assert heur.solver == "greedy"
    assert solve_utility_heuristic(s, lam).portfolio == heur.portfolio


@given(st.integers(0, 10_000), st.floats(10, 80))
def test_riskcap_heuristic_bounded_by_exact(seed, beta):
    s = random_stats(np.random.default_rng(seed), n=7, s=50)
    try:
        exact = solve_risk_capped(s, beta)
    except InfeasibleError:
        return
    try:
        heur = solve_risk_capped_heuristic(s, beta)
    except InfeasibleError:
        return
    assert heur.objective <= exact.objective + 1e-12
    assert heur.variance <= beta * (1 + 1e-9)


@given(st.integers(0, 10_000))
def test_solution_values_recompute(seed):
    s = random_stats(np.random.default_rng(seed), n=6, s=30)
    sol = solve_utility(s, 0.05)
    w = sol.portfolio.dense(6)
    assert abs(sol.expected_yield - w @ s.mu) <= 1e-9
    assert abs(sol.variance - w @ s.sigma @ w) <= 1e-9


# -- robust ------------------------------------------------------------

def test_robust_exact_oracle():
    s = solve_robust_exact(np.array([[10.0, 0.0], [0.0, 10.0]]), 0.5)
    assert s.combination == [0.5, 0.5]
    assert s.quantile_yield == 5.0


def test_robust_single_variety():
    Y = np.array([[3.0], [1.0], [2.0]])
    for solver in (solve_robust_greedy, solve_robust_exact):
        s = solver(Y, 0.5)
        assert s.combination == [1.0] and s.quantile_yield == 2.0


def test_greedy_stops_on_identical_columns():
    col = np.random.default_rng(1).normal(50, 5, size=40)
    s = solve_robust_greedy(np.column_stack([col, col]), 0.5)
    assert s.greedy_path == [0]
    assert s.selected == ["V1"]


@given(st.integers(0, 10_000), st.sampled_from([0.2, 0.5, 0.8]))
def test_greedy_bounds(seed, alpha):
    Y = random_scenarios(np.random.default_rng(seed), n=6, s=40)
    greedy = solve_robust_greedy(Y, alpha)
    exact = solve_robust_exact(Y, alpha)
    singles = max(empirical_quantile(Y.values[:, j], alpha) for j in range(6))
    assert singles <= greedy.quantile_yield <= exact.quantile_yield
    # each accepted greedy step strictly improves the list objective
    g = PortfolioConstraints().grid
    vals = []
    for k in range(1, len(greedy.greedy_path) + 1):
        prefix = greedy.greedy_path[:k]
        vals.append(max(
            empirical_quantile(Y.values[:, prefix] @ w / g, alpha) for w in compositions(g, k)
        ))
    assert all(b > a for a, b in zip(vals, vals[1:]))


@given(st.integers(0, 10_000), st.sampled_from([0.2, 0.5, 1.0]))
def test_robust_exact_permutation_symmetry(seed, alpha):
    rng = np.random.default_rng(seed)
    Y = random_scenarios(rng, n=5, s=20).values
    perm = rng.permutation(5)
    a = solve_robust_exact(Y, alpha)
    b = solve_robust_exact(Y[:, perm], alpha)
    assert a.quantile_yield == pytest.approx(b.quantile_yield, rel=1e-12)


@given(st.integers(0, 10_000), st.floats(0.1, 20))
def test_scale_equivariance(seed, scale):
    rng = np.random.default_rng(seed)
    Y = random_scenarios(rng, n=5, s=30).values
    for solver in (solve_robust_exact, solve_robust_greedy):
        a, b = solver(Y, 0.5), solver(Y * scale, 0.5)
        assert a.portfolio == b.portfolio
        assert b.quantile_yield == pytest.approx(a.quantile_yield * scale, rel=1e-9)
    s1 = ScenarioStats(Y.mean(0), np.cov(Y.T), list("abcde"))
    s2 = ScenarioStats(Y.mean(0) * scale, np.cov(Y.T) * scale**2, list("abcde"))
    assert solve_utility(s1, 0.0).portfolio == solve_utility(s2, 0.0).portfolio


def test_robust_budget():
    Y = random_scenarios(np.random.default_rng(0), n=8, s=10)
    with pytest.raises(BudgetExceeded, match="greedy"):
        solve_robust_exact(Y, 0.5, PortfolioConstraints(node_budget=50))


def test_robust_accepts_matrix_object():
    Y = random_scenarios(np.random.default_rng(2), n=4, s=25)
    s = solve_robust_greedy(Y, 0.5)
    assert s.selected[0].startswith("V")
    w = s.portfolio.dense(4)
    assert s.expected_yield == pytest.approx(float(Y.values.mean(axis=0) @ w), rel=1e-12)


# -- sweeps ------------------------------------------------------------

def test_sweep_rows_and_render():
    s = random_stats(np.random.default_rng(3), n=6)
    table = sweep("utility", [0.03, 0.06, 0.1], s)
    assert len(table.rows) == 3
    text = table.render()
    assert "Selected Varieties" in text and "Combination" in text and "Expected Yield" in text
    assert "Alpha-Quantile Yield" not in text
    Y = random_scenarios(np.random.default_rng(3), n=6)
    assert "Alpha-Quantile Yield" in sweep("robust", [0.5], Y).render()


def test_sweep_empty_and_errors():
    assert sweep("utility", [], TWO).rows == []
    table = sweep("riskcap", [0.1, 4.0], TWO)
    assert table.rows[0].error and table.rows[1].solution.selected == ["A"]
    with pytest.raises(ConfigError):
        sweep("nope", [1.0], TWO)


@given(st.integers(0, 10_000))
def test_exact_variance_non_increasing_in_lambda(seed):
    s = random_stats(np.random.default_rng(seed), n=6, s=40)
    sols = [solve_utility(s, lam) for lam in (0.0, 0.03, 0.06, 0.1)]
    for a, b in zip(sols, sols[1:]):
        assert b.variance <= a.variance + 1e-9
        assert b.expected_yield <= a.expected_yield + 1e-9
