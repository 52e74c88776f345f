"""Variety selection under uncertainty over a discrete grid of planting shares.

Portfolios are held as integer counts summing to ``G = 1 / increment`` so
grid and simplex constraints are exact. Three models are supported:

* utility: maximize ``p.mu - lam * p' Sigma p``
* risk-capped: maximize ``p.mu`` subject to ``p' Sigma p <= beta``
* robust: maximize the empirical alpha-quantile of ``Y @ p``

Objective comparisons are exact; equal objectives go to the
lexicographically smallest support (by variety position), then to the
lexicographically largest count vector.
"""

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .errors import BudgetExceeded, ConfigError, ContractError, InfeasibleError, SeedplanError
from .scenario import ScenarioMatrix, ScenarioStats, stats as scenario_stats

log = logging.getLogger(__name__)

DEFAULT_NODE_BUDGET = 50_000_000
_RISK_SLACK = 1e-12
_GREEDY_TOL = 1e-12


@dataclass(frozen=True)
class PortfolioConstraints:
    increment: float = 0.1
    max_varieties: int = 5
    node_budget: int = DEFAULT_NODE_BUDGET

    def __post_init__(self):
        if not self.increment > 0:
            raise ConfigError("increment must be positive")
        g = round(1.0 / self.increment)
        if g < 1 or abs(g * self.increment - 1.0) > 1e-9:
            raise ConfigError(f"1/increment must be a positive integer, got {1.0 / self.increment}")
        if self.max_varieties < 1:
            raise ConfigError("max_varieties must be >= 1")
        if self.node_budget < 1:
            raise ConfigError("node_budget must be >= 1")

    @property
    def grid(self) -> int:
        return round(1.0 / self.increment)

    def cap(self, n_varieties: int) -> int:
        """Largest usable support: bounded by the variety count and the grid."""
        return min(self.max_varieties, n_varieties, self.grid)


@dataclass(frozen=True)
class Portfolio:
    """Integer grid counts per variety position; ``weights`` are counts / grid."""

    counts: tuple  # ((position, count), ...) sorted by position, counts > 0
    grid: int

    def __post_init__(self):
        if any(c <= 0 for _, c in self.counts):
            raise ContractError("portfolio counts must be positive")
        if sum(c for _, c in self.counts) != self.grid:
            raise ContractError("portfolio counts must sum to the grid size")

    @classmethod
    def from_support(cls, support, counts, grid: int) -> "Portfolio":
        pairs = sorted(zip((int(s) for s in support), (int(c) for c in counts)))
        return cls(tuple(pairs), grid)

    @property
    def support(self) -> tuple:
        return tuple(p for p, _ in self.counts)

    @property
    def weights(self) -> dict:
        return {p: c / self.grid for p, c in self.counts}

    def dense(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        for p, c in self.counts:
            out[p] = c / self.grid
        return out

    def is_feasible(self, c: PortfolioConstraints, n_varieties: int) -> bool:
        return (
            self.grid == c.grid
            and 1 <= len(self.counts) <= c.max_varieties
            and all(0 <= p < n_varieties for p in self.support)
            and len(set(self.support)) == len(self.support)
            and all(cnt > 0 for _, cnt in self.counts)
            and sum(cnt for _, cnt in self.counts) == self.grid
        )


@dataclass
class Solution:
    portfolio: Portfolio
    objective: float
    expected_yield: float
    variance: float
    solver: str  # "exact" or "greedy"
    model: str  # "utility", "riskcap" or "robust"
    varieties: list
    quantile_yield: Optional[float] = None
    parameter: Optional[float] = None
    evaluated: int = 0
    greedy_path: Optional[list] = None  # variety positions in order of greedy acceptance

    @property
    def selected(self) -> list:
        return [self.varieties[p] for p in self.portfolio.support]

    @property
    def combination(self) -> list:
        return [w for _, w in sorted(self.portfolio.weights.items())]

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "parameter": self.parameter,
            "solver": self.solver,
            "selected": self.selected,
            "combination": self.combination,
            "counts": [c for _, c in self.portfolio.counts],
            "grid": self.portfolio.grid,
            "objective": self.objective,
            "expected_yield": self.expected_yield,
            "variance": self.variance,
            "quantile_yield": self.quantile_yield,
        }


# -- grid helpers -------------------------------------------------------

@lru_cache(maxsize=None)
def compositions(total: int, parts: int) -> np.ndarray:
    """All positive integer vectors of length ``parts`` summing to ``total``.

    Rows are in lexicographically descending order.
    """
    if parts < 1 or parts > total:
        return np.zeros((0, max(parts, 0)), dtype=np.int64)
    rows = []
    for cuts in itertools.combinations(range(1, total), parts - 1):
        edges = (0,) + cuts + (total,)
        rows.append([edges[i + 1] - edges[i] for i in range(parts)])
    out = np.array(rows, dtype=np.int64).reshape(-1, parts)
    order = np.lexsort(out.T[::-1])[::-1]
    out = out[order]
    out.setflags(write=False)
    return out


def count_weightings(n_varieties: int, c: PortfolioConstraints) -> int:
    g = c.grid
    return sum(math.comb(n_varieties, k) * math.comb(g - 1, k - 1) for k in range(1, c.cap(n_varieties) + 1))


def empirical_quantile(values, alpha: float) -> float:
    """k-th smallest value, ``k = max(1, ceil(alpha * n))``.

    ``alpha * n`` is rounded to 9 decimals before the ceiling so that, e.g.,
    0.7 * 10 is treated as 7 rather than 7.000000000000001.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ContractError("empirical_quantile needs a non-empty vector")
    k = quantile_rank(alpha, v.size)
    return float(np.partition(v, k - 1)[k - 1])


def quantile_rank(alpha: float, n: int) -> int:
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
    return max(1, math.ceil(round(alpha * n, 9)))


def _better(obj, key, best_obj, best_key) -> bool:
    if best_key is None or obj > best_obj:
        return True
    return obj == best_obj and key < best_key


def _key(support, counts) -> tuple:
    return (tuple(support), tuple(-int(c) for c in counts))


class _Budget:
    def __init__(self, limit: int, hint: str):
        self.limit = limit
        self.used = 0
        self.hint = hint

    def spend(self, n: int) -> None:
        self.used += n
        if self.used > self.limit:
            raise BudgetExceeded(
                f"exact search exceeded the node budget of {self.limit} weightings; {self.hint}"
            )


def _stats_arrays(s):
    mu = np.asarray(s.mu, dtype=float)
    sigma = np.asarray(s.sigma, dtype=float)
    if mu.ndim != 1 or sigma.shape != (len(mu), len(mu)):
        raise ContractError("mu and sigma dimensions disagree")
    varieties = list(getattr(s, "varieties", None) or [f"V{i + 1}" for i in range(len(mu))])
    if len(varieties) != len(mu):
        raise ContractError("variety list length disagrees with mu")
    return mu, sigma, varieties


def _mv_support(mu, sigma, support, g):
    """(mean, variance, counts) for every positive composition on ``support``.

    Mean and variance are returned scaled by ``g`` and ``g**2`` (sums over
    integer counts) so objectives can be formed with a single division.
    """
    W = compositions(g, len(support))
    idx = np.asarray(support)
    lin = W @ mu[idx]
    quad = np.einsum("ij,jk,ik->i", W, sigma[np.ix_(idx, idx)], W)
    return lin, quad, W


def _utility(lin, quad, g, lam):
    return (g * lin - lam * quad) / (g * g)


def _mv_solution(mu, sigma, varieties, support, counts, g, model, solver, objective, param, used):
    p = Portfolio.from_support(support, counts, g)
    idx = np.array(p.support)
    w = np.array([c for _, c in p.counts], dtype=float)
    mean = float(w @ mu[idx] / g)
    var = float(w @ sigma[np.ix_(idx, idx)] @ w / (g * g))
    return Solution(p, float(objective), mean, var, solver, model, varieties, parameter=param, evaluated=used)


def _supports_dfs(order, cap, visit):
    """Depth-first walk over supports drawn from ``order`` in position order.

    ``visit(support_positions)`` returns False to skip that support's
    extensions. Supports reach ``visit`` sorted by their index in ``order``.
    """
    n = len(order)

    def rec(prefix, start):
        for i in range(start, n):
            sup = prefix + (i,)
            if visit(sup) and len(sup) < cap:
                rec(sup, i + 1)

    rec((), 0)


def _exact_mean_variance(stats, c, model, param, score):
    mu, sigma, varieties = _stats_arrays(stats)
    n = len(mu)
    g = c.grid
    cap = c.cap(n)
    # visit varieties by descending mean so the mean bound prunes early
    order = sorted(range(n), key=lambda j: (-mu[j], j))
    mu_sorted = mu[order]
    budget = _Budget(c.node_budget, "use solve_utility_heuristic for large instances")
    best = {"obj": -math.inf, "key": None, "support": None, "counts": None}
    min_var = [math.inf]

    def visit(sup):
        # every portfolio below this node has mean <= mu of its first member
        if best["key"] is not None and mu_sorted[sup[0]] < best["obj"]:
            return False
        support = sorted(order[i] for i in sup)
        lin, quad, W = _mv_support(mu, sigma, support, g)
        budget.spend(len(W))
        min_var[0] = min(min_var[0], float(quad.min()) / (g * g))
        obj, ok = score(lin, quad, g)
        if not ok.any():
            return True
        cand = np.flatnonzero(ok)
        j = cand[np.argmax(obj[cand])]
        if _better(obj[j], _key(support, W[j]), best["obj"], best["key"]):
            best.update(obj=float(obj[j]), key=_key(support, W[j]), support=support, counts=W[j])
        return True

    _supports_dfs(order, cap, visit)
    if best["key"] is None:
        raise InfeasibleError(
            f"no grid portfolio has variance <= {param}; minimum achievable variance is {min_var[0]:.6g}",
            min_variance=min_var[0],
        )
    return _mv_solution(
        mu, sigma, varieties, best["support"], best["counts"], g, model, "exact",
        best["obj"], param, budget.used,
    )


def solve_utility(stats, lam: float, c: PortfolioConstraints = PortfolioConstraints()) -> Solution:
    """Exact maximizer of ``p.mu - lam * p' Sigma p`` over the grid."""
    if lam < 0:
        raise ContractError("lambda must be >= 0")

    def score(lin, quad, g):
        return _utility(lin, quad, g, lam), np.ones(len(lin), dtype=bool)

    return _exact_mean_variance(stats, c, "utility", lam, score)


def solve_risk_capped(stats, beta: float, c: PortfolioConstraints = PortfolioConstraints()) -> Solution:
    """Exact maximizer of ``p.mu`` subject to ``p' Sigma p <= beta``."""
    if not beta > 0:
        raise ContractError("beta must be > 0")
    limit = beta * (1 + _RISK_SLACK)

    def score(lin, quad, g):
        return lin / g, quad / (g * g) <= limit

    return _exact_mean_variance(stats, c, "riskcap", beta, score)


class _SubsetOptimizer:
    """Best grid weighting over every non-empty subset of a variety set."""

    def __init__(self, evaluate, g, cap):
        self.evaluate = evaluate  # support tuple -> (obj, counts) best positive weighting
        self.g = g
        self.cap = cap
        self.cache = {}

    def positive(self, support):
        support = tuple(sorted(support))
        if support not in self.cache:
            self.cache[support] = self.evaluate(support)
        return self.cache[support]

    def any_subset(self, members):
        members = sorted(members)
        best = (-math.inf, None, None)
        for k in range(1, min(len(members), self.cap) + 1):
            for sub in itertools.combinations(members, k):
                obj, counts = self.positive(sub)
                if counts is None:
                    continue
                if best[2] is None or _better(obj, _key(sub, counts), best[0], best[2]):
                    best = (obj, (sub, counts), _key(sub, counts))
        return best[0], best[1]


def _improves(new, old) -> bool:
    """Scores are (feasible, value) pairs; values must rise by more than roundoff."""
    if new[0] != old[0]:
        return new[0] > old[0]
    return new[1] > old[1] + _GREEDY_TOL * max(1.0, abs(old[1]))


def _local_search(n, cap, opt, start):
    """Grow, then swap, the variety set while some move strictly improves it."""
    current = {start}
    cur_obj, cur_sol = opt.any_subset(current)
    while True:
        moves = []
        if len(current) < cap:
            moves += [current | {j} for j in range(n) if j not in current]
        moves += [
            (current - {i}) | {j}
            for i in sorted(current) for j in range(n) if j not in current
        ]
        best_move = None
        for m in moves:
            obj, sol = opt.any_subset(m)
            if _improves(obj, cur_obj) and (best_move is None or obj > best_move[0]):
                best_move = (obj, sol, m)
        if best_move is None:
            return cur_obj, cur_sol
        cur_obj, cur_sol, current = best_move


def solve_utility_heuristic(stats, lam: float, c: PortfolioConstraints = PortfolioConstraints()) -> Solution:
    """Greedy support growth by utility, then best-improvement swaps.

    Every candidate support is scored by exact enumeration of its grid
    weightings (sub-supports included). Deterministic; no randomness.
    """
    if lam < 0:
        raise ContractError("lambda must be >= 0")
    mu, sigma, varieties = _stats_arrays(stats)
    n = len(mu)
    g = c.grid

    def evaluate(support):
        lin, quad, W = _mv_support(mu, sigma, list(support), g)
        u = _utility(lin, quad, g, lam)
        j = int(np.argmax(u))
        return (1, float(u[j])), W[j]

    opt = _SubsetOptimizer(evaluate, g, c.cap(n))
    start = int(np.argmax(mu - lam * np.diag(sigma)))
    (_, obj), (support, counts) = _local_search(n, c.cap(n), opt, start)
    return _mv_solution(mu, sigma, varieties, support, counts, g, "utility", "greedy", obj, lam, len(opt.cache))


def solve_risk_capped_heuristic(stats, beta: float, c: PortfolioConstraints = PortfolioConstraints()) -> Solution:
    """Local-search counterpart of :func:`solve_risk_capped` for large instances.

    Infeasible sets are ranked below feasible ones and among themselves by
    their smallest achievable variance, so the search first walks toward
    the feasible region and then maximizes expected yield inside it.
    """
    if not beta > 0:
        raise ContractError("beta must be > 0")
    mu, sigma, varieties = _stats_arrays(stats)
    n = len(mu)
    g = c.grid
    limit = beta * (1 + _RISK_SLACK)

    def evaluate(support):
        lin, quad, W = _mv_support(mu, sigma, list(support), g)
        mean, var = lin / g, quad / (g * g)
        ok = np.flatnonzero(var <= limit)
        if len(ok):
            j = ok[np.argmax(mean[ok])]
            return (1, float(mean[j])), W[j]
        j = int(np.argmin(var))
        return (0, -float(var[j])), W[j]

    opt = _SubsetOptimizer(evaluate, g, c.cap(n))
    diag = np.diag(sigma)
    feasible = np.flatnonzero(diag <= limit)
    start = int(feasible[np.argmax(mu[feasible])]) if len(feasible) else int(np.argmin(diag))
    (flag, obj), (support, counts) = _local_search(n, c.cap(n), opt, start)
    if not flag:
        raise InfeasibleError(
            f"no grid portfolio found with variance <= {beta}; smallest variance reached is {-obj:.6g}",
            min_variance=-obj,
        )
    return _mv_solution(mu, sigma, varieties, support, counts, g, "riskcap", "greedy", obj, beta, len(opt.cache))


# -- robust model -------------------------------------------------------

def _scenario_values(scenarios):
    if isinstance(scenarios, ScenarioMatrix):
        return scenarios.values, list(scenarios.varieties), scenarios
    Y = np.asarray(scenarios, dtype=float)
    if Y.ndim != 2 or Y.size == 0:
        raise ContractError("scenario matrix must be a non-empty 2-D array")
    varieties = [f"V{i + 1}" for i in range(Y.shape[1])]
    return Y, varieties, ScenarioMatrix(Y, varieties, [("", 0)] * len(Y), 0)


def _quantile_support(Y, support, g, k):
    """alpha-quantile of every positive grid mixture on ``support``."""
    W = compositions(g, len(support))
    # weights c/g are exact for a single variety (g/g == 1), so a lone column is reproduced bit for bit
    mixed = Y[:, list(support)] @ (W.T / g)  # (scenarios, weightings)
    q = np.partition(mixed, k - 1, axis=0)[k - 1]
    return q, W


def _robust_solution(matrix, Y, varieties, support, counts, g, solver, objective, alpha, used):
    s = scenario_stats(matrix) if len(Y) >= 2 else ScenarioStats(Y.mean(axis=0), np.zeros((Y.shape[1],) * 2), varieties)
    sol = _mv_solution(s.mu, s.sigma, varieties, support, counts, g, "robust", solver, objective, alpha, used)
    sol.quantile_yield = float(objective)
    return sol


def solve_robust_greedy(scenarios, alpha: float, c: PortfolioConstraints = PortfolioConstraints()) -> Solution:
    """Greedy variety-list construction for the alpha-quantile model.

    Start from the variety whose own yield column has the largest
    alpha-quantile. Then repeatedly score every remaining variety added to
    the list, each candidate list by its best positive grid weighting, and
    keep the best addition only if it strictly beats the incumbent. Finish
    with an exhaustive search over all weightings of the final list,
    sub-lists included.
    """
    Y, varieties, matrix = _scenario_values(scenarios)
    n = Y.shape[1]
    g = c.grid
    cap = c.cap(n)
    k = quantile_rank(alpha, len(Y))

    def evaluate(support):
        q, W = _quantile_support(Y, support, g, k)
        j = int(np.argmax(q))
        return float(q[j]), W[j]

    opt = _SubsetOptimizer(evaluate, g, cap)
    singles = [opt.positive((j,))[0] for j in range(n)]
    first = int(np.argmax(singles))
    selected = [first]
    incumbent = singles[first]
    while len(selected) < cap:
        scored = [
            (opt.positive(tuple(selected) + (j,))[0], j) for j in range(n) if j not in selected
        ]
        best_val, best_j = max(scored, key=lambda t: (t[0], -t[1]))
        if best_val > incumbent + _GREEDY_TOL * max(1.0, abs(incumbent)):
            selected.append(best_j)
            incumbent = best_val
        else:
            break
    obj, (support, counts) = opt.any_subset(selected)
    sol = _robust_solution(matrix, Y, varieties, support, counts, g, "greedy", obj, alpha, len(opt.cache))
    sol.greedy_path = list(selected)
    return sol


def solve_robust_exact(scenarios, alpha: float, c: PortfolioConstraints = PortfolioConstraints()) -> Solution:
    """Global alpha-quantile maximizer by complete enumeration."""
    Y, varieties, matrix = _scenario_values(scenarios)
    n = Y.shape[1]
    g = c.grid
    total = count_weightings(n, c)
    if total > c.node_budget:
        raise BudgetExceeded(
            f"exact robust search needs {total} weightings, over the budget of {c.node_budget}; "
            "use solve_robust_greedy"
        )
    k = quantile_rank(alpha, len(Y))
    best = (-math.inf, None, None, None)
    for size in range(1, c.cap(n) + 1):
        for support in itertools.combinations(range(n), size):
            q, W = _quantile_support(Y, support, g, k)
            j = int(np.argmax(q))
            key = _key(support, W[j])
            if _better(q[j], key, best[0], best[1]):
                best = (float(q[j]), key, support, W[j])
    obj, _, support, counts = best
    return _robust_solution(matrix, Y, varieties, support, counts, g, "exact", obj, alpha, total)


# -- sweeps -------------------------------------------------------------

SOLVERS = {
    "utility": solve_utility,
    "utility_heuristic": solve_utility_heuristic,
    "riskcap": solve_risk_capped,
    "riskcap_heuristic": solve_risk_capped_heuristic,
    "robust": solve_robust_greedy,
    "robust_exact": solve_robust_exact,
}
PARAMETER_SYMBOL = {"utility": "lambda", "riskcap": "beta", "robust": "alpha"}


@dataclass
class SweepRow:
    parameter: float
    solution: Optional[Solution] = None
    error: Optional[str] = None

    def to_dict(self) -> dict:
        d = {"parameter": self.parameter}
        if self.solution is not None:
            d.update(self.solution.to_dict())
        else:
            d["error"] = self.error
        return d


@dataclass
class SweepTable:
    solver: str
    rows: list = field(default_factory=list)

    @property
    def model(self) -> str:
        return self.solver.split("_")[0]

    def to_dict(self) -> dict:
        return {"solver": self.solver, "rows": [r.to_dict() for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def render(self) -> str:
        """Aligned text table: one column per parameter value."""
        header = [PARAMETER_SYMBOL.get(self.model, "parameter")]
        lines = {
            "selected": ["Selected Varieties"],
            "combination": ["Combination"],
            "quantile": ["Alpha-Quantile Yield"],
            "expected": ["Expected Yield"],
        }
        for r in self.rows:
            header.append(f"{r.parameter:g}")
            s = r.solution
            if s is None:
                for key in lines:
                    lines[key].append("-" if key != "selected" else f"error: {r.error}")
                continue
            lines["selected"].append(", ".join(s.selected))
            lines["combination"].append("(" + ", ".join(f"{w:.1f}" for w in s.combination) + ")")
            lines["quantile"].append("-" if s.quantile_yield is None else f"{s.quantile_yield:.2f}")
            lines["expected"].append(f"{s.expected_yield:.2f}")
        body = [header, lines["selected"], lines["combination"]]
        if self.model == "robust":
            body.append(lines["quantile"])
        body.append(lines["expected"])
        widths = [max(len(row[i]) for row in body) for i in range(len(header))]
        out = []
        for n, row in enumerate(body):
            out.append(" | ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
            if n == 0:
                out.append("-+-".join("-" * w for w in widths))
        return "\n".join(out) + "\n"


def sweep(solver: str, parameters: Sequence[float], data, c: PortfolioConstraints = PortfolioConstraints()) -> SweepTable:
    """Solve once per parameter value; a failing solve is recorded and skipped.

    ``data`` is a :class:`ScenarioStats` for the mean-variance solvers and a
    scenario matrix for the robust ones.
    """
    try:
        fn = SOLVERS[solver]
    except KeyError:
        raise ConfigError(f"unknown solver {solver!r}; choose from {sorted(SOLVERS)}") from None
    table = SweepTable(solver)
    for value in parameters:
        try:
            table.rows.append(SweepRow(value, fn(data, value, c)))
        except SeedplanError as exc:
            log.warning("%s at %s failed: %s", solver, value, exc)
            table.rows.append(SweepRow(value, error=str(exc)))
    return table
