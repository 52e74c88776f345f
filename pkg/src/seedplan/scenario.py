"""Empirical weather resampling and simulated yield scenarios."""

import csv
import json
import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dataset import WEATHER_RANDOM, Dataset
from .errors import ConfigError, ContractError, DataError
from .hierarchy import HierarchicalModel

log = logging.getLogger(__name__)

DEFAULT_NEIGHBORS = 20
DEFAULT_SAMPLES = 500


@dataclass(frozen=True)
class SiteQuery:
    latitude: float
    longitude: float
    climate_type: str

    def __post_init__(self):
        if not -90 <= self.latitude <= 90 or not -180 <= self.longitude <= 180:
            raise ContractError(f"coordinates out of range: {self.latitude}, {self.longitude}")


@dataclass(frozen=True)
class WeatherSample:
    temperature: float
    precipitation: float
    radiation: float
    source_site: str
    source_year: int

    @property
    def values(self) -> tuple:
        return (self.temperature, self.precipitation, self.radiation)


def site_table(d: Dataset) -> dict:
    """``{site_id: (latitude, longitude, climate)}`` from each site's first record."""
    table = {}
    for s, lat, lon, c in zip(d.site.tolist(), d.latitude.tolist(), d.longitude.tolist(), d.climate.tolist()):
        table.setdefault(s, (lat, lon, c))
    return table


def similar_sites(d: Dataset, q: SiteQuery, n_neighbors: int = DEFAULT_NEIGHBORS) -> set:
    """Union of the ``n_neighbors`` nearest sites and all sites sharing the climate type.

    Distance is Euclidean in raw (latitude, longitude) degrees; ties at the
    cutoff go to the smaller site id.
    """
    sites = site_table(d)
    if not sites:
        raise DataError("dataset has no sites")
    ranked = sorted(
        sites,
        key=lambda s: (math.hypot(sites[s][0] - q.latitude, sites[s][1] - q.longitude), s),
    )
    near = set(ranked[:max(n_neighbors, 0)])
    same_climate = {s for s, (_, _, c) in sites.items() if c == q.climate_type}
    if not same_climate:
        log.warning("no site shares climate type %r; using nearest neighbors only", q.climate_type)
    return near | same_climate


def weather_pool(d: Dataset, sites) -> list:
    """Distinct (site, year) weather rows of ``sites``, ordered by site then year."""
    cols = [d.attribute_names.index(w) for w in WEATHER_RANDOM]
    seen = {}
    wanted = set(sites)
    for i in range(len(d)):
        s = str(d.site[i])
        if s not in wanted:
            continue
        key = (s, int(d.year[i]))
        if key not in seen:
            seen[key] = tuple(float(d.X[i, c]) for c in cols)
    return [WeatherSample(*seen[k], k[0], k[1]) for k in sorted(seen)]


def sample_weather(d: Dataset, sites, n: int = DEFAULT_SAMPLES, seed: int = 0) -> list:
    """``n`` uniform draws, with replacement, from the pooled weather rows."""
    if n < 1:
        raise ContractError("n must be >= 1")
    pool = weather_pool(d, sites)
    if not pool:
        raise DataError(f"no historical weather rows for sites {sorted(sites)}")
    rng = np.random.default_rng(seed)
    return [pool[i] for i in rng.integers(0, len(pool), size=n)]


@dataclass
class ScenarioMatrix:
    values: np.ndarray  # (n_scenarios, n_varieties)
    varieties: list
    provenance: list  # (site, year) per row
    seed: int
    n_floored: int = 0

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.varieties):
            raise ContractError("scenario values do not match the variety list")
        if len(self.provenance) != self.values.shape[0]:
            raise ContractError("one provenance entry per scenario row is required")
        if not np.isfinite(self.values).all():
            raise ContractError("scenario matrix contains non-finite values")

    @property
    def n_scenarios(self) -> int:
        return self.values.shape[0]

    def to_csv(self, path, sidecar: bool = True, extra: Mapping = None, comment: str = None) -> None:
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.varieties)
            for row in self.values:
                w.writerow([repr(float(x)) for x in row])
        if sidecar:
            meta = {
                "seed": self.seed,
                "n_floored": self.n_floored,
                "provenance": [[s, y] for s, y in self.provenance],
            }
            if extra:
                meta.update(extra)
            with open(str(path) + ".json", "w") as fh:
                json.dump(meta, fh, indent=2, sort_keys=True)

    @classmethod
    def from_csv(cls, path) -> "ScenarioMatrix":
        try:
            with open(path, newline="") as fh:
                rows = list(csv.reader(line for line in fh if not line.startswith("#")))
        except FileNotFoundError:
            raise ConfigError(f"scenario file not found: {path}") from None
        if not rows:
            raise ConfigError(f"{path}: empty scenario file")
        varieties = rows[0]
        values = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float).reshape(-1, len(varieties))
        seed, floored = 0, 0
        provenance = [("", 0)] * len(values)
        try:
            with open(str(path) + ".json") as fh:
                meta = json.load(fh)
            seed, floored = int(meta["seed"]), int(meta["n_floored"])
            provenance = [(s, int(y)) for s, y in meta["provenance"]]
        except FileNotFoundError:
            log.info("%s has no provenance sidecar", path)
        return cls(values, varieties, provenance, seed, floored)


def scenario_inputs(model: HierarchicalModel, fixed, weather: Sequence[WeatherSample]) -> np.ndarray:
    """Attribute rows: ``fixed`` with TEMP/PREC/RAD replaced by each sample."""
    names = model.attribute_names
    if isinstance(fixed, Mapping):
        missing = [a for a in names if a not in WEATHER_RANDOM and a not in fixed]
        if missing:
            raise ContractError(f"fixed attributes missing: {missing}")
        base = np.array([np.nan if a in WEATHER_RANDOM else float(fixed[a]) for a in names])
    else:
        base = np.array(fixed, dtype=float)
        if base.shape != (len(names),):
            raise ContractError(f"fixed row must have {len(names)} attributes")
    weather_cols = [names.index(w) for w in WEATHER_RANDOM]
    fixed_cols = [i for i in range(len(names)) if i not in weather_cols]
    if not np.isfinite(base[fixed_cols]).all():
        raise ContractError("fixed attributes must be finite")
    X = np.tile(base, (len(weather), 1))
    X[:, weather_cols] = np.array([w.values for w in weather], dtype=float).reshape(-1, 3)
    return X


def build_scenarios(model: HierarchicalModel, fixed, weather: Sequence[WeatherSample], seed: int = 0) -> ScenarioMatrix:
    """Simulated yields ``Y[i, j] = F(x_i) * G_j(x_i) + z_ij``.

    ``z_ij ~ Normal(0, residual_mse[j])`` is the i-th draw of a stream keyed
    by (seed, j), so each cell depends only on (seed, i, j). Negative
    yields are floored at 0 and counted in ``n_floored``.
    """
    if not weather:
        raise ContractError("weather sample list is empty")
    varieties = model.varieties
    for v in varieties:
        if v not in model.residual_mse:
            raise ContractError(f"variety {v} has no residual variance")
    X = scenario_inputs(model, fixed, weather)
    Y = model.predict_matrix(X, varieties)
    for j, v in enumerate(varieties):
        sd = math.sqrt(model.residual_mse[v])
        Y[:, j] += sd * np.random.default_rng([seed, j]).standard_normal(len(X))
    negative = Y < 0
    n_floored = int(negative.sum())
    if n_floored:
        log.warning("floored %d negative simulated yields at 0", n_floored)
        Y[negative] = 0.0
    return ScenarioMatrix(Y, varieties, [(w.source_site, w.source_year) for w in weather], seed, n_floored)


@dataclass
class ScenarioStats:
    mu: np.ndarray
    sigma: np.ndarray
    varieties: list

    def to_csv(self, path) -> None:
        """Per-variety mean and variance (the data behind a mean-variance plot)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["VARIETY", "MEAN", "VARIANCE"])
            for v, m, s in zip(self.varieties, self.mu, np.diag(self.sigma)):
                w.writerow([v, repr(float(m)), repr(float(s))])


def stats(s: ScenarioMatrix) -> ScenarioStats:
    """Column means and sample covariance (divisor n - 1) of the scenarios.

    The covariance is symmetrized and its diagonal set to the per-column
    sample variances; if roundoff leaves an eigenvalue below -1e-8 the
    matrix is instead rebuilt with negative eigenvalues clipped to 0.
    """
    if s.n_scenarios < 2:
        raise ContractError("stats needs at least 2 scenarios")
    Y = s.values
    mu = Y.mean(axis=0)
    centered = Y - mu
    sigma = centered.T @ centered / (len(Y) - 1)
    sigma = 0.5 * (sigma + sigma.T)
    w, V = np.linalg.eigh(sigma)
    if w.min() < -1e-8:
        sigma = (V * np.maximum(w, 0.0)) @ V.T
        sigma = 0.5 * (sigma + sigma.T)
    else:
        np.fill_diagonal(sigma, np.var(Y, axis=0, ddof=1))
    return ScenarioStats(mu, sigma, list(s.varieties))


def site_attributes(d: Dataset, site_id: str) -> dict:
    """Median of each attribute over a site's records, as a fixed-attribute map."""
    mask = d.site == site_id
    if not mask.any():
        raise DataError(f"site {site_id!r} not in dataset")
    med = np.nanmedian(d.X[mask], axis=0)
    return dict(zip(d.attribute_names, med.tolist()))


def nearest_site(d: Dataset, q: SiteQuery) -> str:
    sites = site_table(d)
    if not sites:
        raise DataError("dataset has no sites")
    return min(sites, key=lambda s: (math.hypot(sites[s][0] - q.latitude, sites[s][1] - q.longitude), s))
