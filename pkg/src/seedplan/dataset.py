"""Trial-data schema, CSV ingestion, filtering, splitting and synthetic data.

A :class:`Dataset` is stored column-wise: metadata vectors plus an
``(n_records, n_attributes)`` attribute matrix whose columns follow
``attribute_names``.
"""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError

log = logging.getLogger(__name__)

SOIL_CONTINUOUS = (
    "CONUS_PH", "CONUS_AWC", "CONUS_CLAY", "CONUS_SILT", "CONUS_SAND",
    "ISRIC_SAND", "ISRIC_SILT", "ISRIC_CLAY", "ISRIC_PH", "ISRIC_CEC",
)
# SOIL_CUBE is a categorical soil type; it enters the model one-hot encoded.
SOIL_TYPES = tuple(f"SOIL_{k}" for k in range(1, 7))
SOIL_ATTRIBUTES = SOIL_CONTINUOUS + SOIL_TYPES
REGION_ATTRIBUTES = ("LAT", "LONG", "AREA", "RM_25", "TOT_IRR_DE", "RM_BAND")
WEATHER_RANDOM = ("TEMP", "PREC", "RAD")
WEATHER_MEDIANS = ("TEMP_MED", "PREC_MED", "RAD_MED")
WEATHER_ATTRIBUTES = WEATHER_RANDOM + WEATHER_MEDIANS
DEFAULT_SCHEMA = SOIL_ATTRIBUTES + REGION_ATTRIBUTES + WEATHER_ATTRIBUTES

META_COLUMNS = (
    "YEAR", "SITE", "LAT", "LONG", "CLIMATE", "VARIETY",
    "VARIETY_YIELD", "CHECK_YIELD",
)
MISSING_TOKENS = {"", "NA"}
DROP_IF_MISSING = "CONUS_PH"
IMPUTE_IF_MISSING = "RM_BAND"


@dataclass(frozen=True)
class AttributeVector:
    names: tuple
    values: np.ndarray

    def __post_init__(self):
        if len(self.names) != len(self.values):
            raise ContractError("attribute names and values differ in length")

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.values.tolist()))


@dataclass(frozen=True)
class TrialRecord:
    year: int
    site_id: str
    latitude: float
    longitude: float
    climate_type: str
    variety_id: str
    attributes: AttributeVector
    variety_yield: float
    check_yield: float

    @property
    def ratio(self) -> float:
        return self.variety_yield / self.check_yield


@dataclass(frozen=True, eq=False)
class Dataset:
    attribute_names: tuple
    year: np.ndarray
    site: np.ndarray
    latitude: np.ndarray
    longitude: np.ndarray
    climate: np.ndarray
    variety: np.ndarray
    X: np.ndarray
    variety_yield: np.ndarray
    check_yield: np.ndarray

    def __post_init__(self):
        n = len(self.year)
        for f in fields(self):
            if f.name == "attribute_names":
                continue
            arr = getattr(self, f.name)
            if len(arr) != n:
                raise ContractError(f"column {f.name} has {len(arr)} rows, expected {n}")
        if self.X.shape != (n, len(self.attribute_names)):
            raise ContractError("attribute matrix shape disagrees with attribute names")
        if n and np.any(self.check_yield <= 0):
            raise ContractError("check_yield must be positive")
        if n and np.any(self.variety_yield < 0):
            raise ContractError("variety_yield must be non-negative")

    @classmethod
    def empty(cls, attribute_names=DEFAULT_SCHEMA) -> "Dataset":
        return cls(
            tuple(attribute_names),
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=str),
            np.zeros(0),
            np.zeros(0),
            np.zeros(0, dtype=str),
            np.zeros(0, dtype=str),
            np.zeros((0, len(attribute_names))),
            np.zeros(0),
            np.zeros(0),
        )

    def __len__(self) -> int:
        return len(self.year)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.attribute_names != other.attribute_names or len(self) != len(other):
            return False
        return all(
            np.array_equal(getattr(self, f.name), getattr(other, f.name), equal_nan=f.name == "X")
            for f in fields(self)
            if f.name != "attribute_names"
        )

    @property
    def varieties(self) -> list:
        return sorted(set(self.variety.tolist()))

    @property
    def variety_index(self) -> dict:
        """Mapping variety id -> contiguous index 1..N (sorted by id)."""
        return {v: i + 1 for i, v in enumerate(self.varieties)}

    @property
    def ratio(self) -> np.ndarray:
        return self.variety_yield / self.check_yield

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.attribute_names.index(name)]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.attribute_names,
            self.year[idx],
            self.site[idx],
            self.latitude[idx],
            self.longitude[idx],
            self.climate[idx],
            self.variety[idx],
            self.X[idx],
            self.variety_yield[idx],
            self.check_yield[idx],
        )

    def for_variety(self, variety_id: str) -> "Dataset":
        return self.subset(np.flatnonzero(self.variety == variety_id))

    def with_attributes(self, X: np.ndarray) -> "Dataset":
        return Dataset(
            self.attribute_names, self.year, self.site, self.latitude,
            self.longitude, self.climate, self.variety, X,
            self.variety_yield, self.check_yield,
        )

    def variety_counts(self) -> dict:
        ids, counts = np.unique(self.variety, return_counts=True)
        return dict(zip(ids.tolist(), counts.tolist()))

    def records(self) -> Iterator[TrialRecord]:
        for i in range(len(self)):
            yield TrialRecord(
                int(self.year[i]), str(self.site[i]), float(self.latitude[i]),
                float(self.longitude[i]), str(self.climate[i]), str(self.variety[i]),
                AttributeVector(self.attribute_names, self.X[i].copy()),
                float(self.variety_yield[i]), float(self.check_yield[i]),
            )

    @classmethod
    def from_records(cls, records: Sequence[TrialRecord], attribute_names=None) -> "Dataset":
        records = list(records)
        if attribute_names is None:
            if not records:
                raise ContractError("attribute_names required for an empty record list")
            attribute_names = records[0].attributes.names
        p = len(attribute_names)
        return cls(
            tuple(attribute_names),
            np.array([r.year for r in records], dtype=np.int64),
            np.array([r.site_id for r in records], dtype=str),
            np.array([r.latitude for r in records], dtype=float),
            np.array([r.longitude for r in records], dtype=float),
            np.array([r.climate_type for r in records], dtype=str),
            np.array([r.variety_id for r in records], dtype=str),
            np.array([r.attributes.values for r in records], dtype=float).reshape(-1, p),
            np.array([r.variety_yield for r in records], dtype=float),
            np.array([r.check_yield for r in records], dtype=float),
        )

    def missing_mask(self) -> np.ndarray:
        return ~np.isfinite(self.X)


# -- CSV ingestion ------------------------------------------------------

@dataclass
class IngestReport:
    rows_read: int = 0
    dropped_missing_conus_ph: int = 0
    dropped_missing_other: int = 0
    dropped_invalid_yield: int = 0
    parse_errors: list = field(default_factory=list)  # (line number, message)

    @property
    def rows_kept(self) -> int:
        return (
            self.rows_read - self.dropped_missing_conus_ph - self.dropped_missing_other
            - self.dropped_invalid_yield - len(self.parse_errors)
        )


def _yearly_column(base: str, year: int) -> str:
    return f"{base}_{year % 100:02d}"


def _check_header(header: Sequence[str], schema: Sequence[str]) -> None:
    cols = set(header)
    for name in META_COLUMNS:
        if name not in cols:
            raise ConfigError(f"CSV header is missing required column {name}")
    for name in schema:
        if name in cols:
            continue
        if name in WEATHER_RANDOM and any(c.startswith(name + "_") and c[len(name) + 1:].isdigit() for c in cols):
            continue
        if name in SOIL_TYPES and "SOIL_CUBE" in cols:
            continue
        raise ConfigError(f"CSV header is missing schema column {name}")


class _Missing(Exception):
    pass


def _attribute_value(row: dict, name: str, year: int) -> str:
    if name in row:
        return row[name]
    if name in WEATHER_RANDOM:
        col = _yearly_column(name, year)
        if col not in row:
            raise ValueError(f"no {col} column for year {year}")
        return row[col]
    if name in SOIL_TYPES:
        cube = row["SOIL_CUBE"].strip()
        if cube in MISSING_TOKENS:
            return ""
        return "1" if int(float(cube)) == int(name.split("_")[1]) else "0"
    raise KeyError(name)


def read_csv(path, schema: Sequence[str] = DEFAULT_SCHEMA):
    """Parse a trial CSV into ``(Dataset, IngestReport)``.

    Rows missing CONUS_PH are dropped, a missing RM_BAND is kept as NaN for
    later imputation, and any other missing required cell drops the row.
    Yearly weather columns (TEMP_08, ...) are collapsed onto the trial's own
    year when the schema asks for TEMP/PREC/RAD and no such column exists.
    """
    schema = tuple(schema)
    report = IngestReport()
    cols = {k: [] for k in ("year", "site", "lat", "lon", "climate", "variety", "X", "y", "cy")}
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"data file not found: {path}") from None
    with fh:
        # leading '#' lines carry run metadata, not data
        skipped = 0
        while True:
            pos = fh.tell()
            if not fh.readline().startswith("#"):
                fh.seek(pos)
                break
            skipped += 1
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ConfigError(f"{path}: missing header row")
        _check_header(reader.fieldnames, schema)
        for row in reader:
            report.rows_read += 1
            line = reader.line_num + skipped
            try:
                year = int(float(row["YEAR"]))
                raw = [_attribute_value(row, name, year).strip() for name in schema]
                meta = [row[c].strip() for c in ("LAT", "LONG", "VARIETY_YIELD", "CHECK_YIELD")]
                ids = [row[c].strip() for c in ("SITE", "CLIMATE", "VARIETY")]
                if any(v in MISSING_TOKENS for v in meta + ids):
                    raise _Missing
                values = []
                for name, v in zip(schema, raw):
                    if v in MISSING_TOKENS:
                        if name == DROP_IF_MISSING:
                            report.dropped_missing_conus_ph += 1
                            break
                        if name == IMPUTE_IF_MISSING:
                            values.append(math.nan)
                            continue
                        raise _Missing
                    values.append(float(v))
                else:
                    lat, lon, y, cy = (float(v) for v in meta)
                    if not all(math.isfinite(v) for v in (lat, lon, y, cy)) or not all(
                        math.isfinite(v) or (n == IMPUTE_IF_MISSING) for n, v in zip(schema, values)
                    ):
                        raise ValueError("non-finite value")
                    if cy <= 0 or y < 0:
                        report.dropped_invalid_yield += 1
                        continue
                    cols["year"].append(year)
                    cols["site"].append(ids[0])
                    cols["climate"].append(ids[1])
                    cols["variety"].append(ids[2])
                    cols["lat"].append(lat)
                    cols["lon"].append(lon)
                    cols["y"].append(y)
                    cols["cy"].append(cy)
                    cols["X"].append(values)
            except _Missing:
                report.dropped_missing_other += 1
            except (ValueError, TypeError) as exc:
                report.parse_errors.append((line, str(exc)))
                log.warning("%s line %d: %s; row skipped", path, line, exc)

    for label, count in (
        ("missing CONUS_PH", report.dropped_missing_conus_ph),
        ("missing required values", report.dropped_missing_other),
        ("non-positive check yield or negative yield", report.dropped_invalid_yield),
        ("parse errors", len(report.parse_errors)),
    ):
        if count:
            log.info("%s: dropped %d rows with %s", path, count, label)

    d = Dataset(
        schema,
        np.array(cols["year"], dtype=np.int64),
        np.array(cols["site"], dtype=str),
        np.array(cols["lat"], dtype=float),
        np.array(cols["lon"], dtype=float),
        np.array(cols["climate"], dtype=str),
        np.array(cols["variety"], dtype=str),
        np.array(cols["X"], dtype=float).reshape(-1, len(schema)),
        np.array(cols["y"], dtype=float),
        np.array(cols["cy"], dtype=float),
    )
    return d, report


def ingest_csv(path, schema: Sequence[str] = DEFAULT_SCHEMA) -> Dataset:
    return read_csv(path, schema)[0]


def canonical_columns(attribute_names: Sequence[str]) -> list:
    """Column order of the canonical export: metadata, then attributes."""
    return list(META_COLUMNS) + [a for a in attribute_names if a not in META_COLUMNS]


def _fmt(v: float) -> str:
    return "NA" if math.isnan(v) else repr(float(v))


def write_csv(d: Dataset, path, comment: str = None) -> None:
    """Write the canonical one-row-per-record CSV (weather already pivoted)."""
    header = canonical_columns(d.attribute_names)
    attr_pos = {a: i for i, a in enumerate(d.attribute_names)}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(d)):
            meta = {
                "YEAR": str(int(d.year[i])),
                "SITE": str(d.site[i]),
                "LAT": _fmt(d.latitude[i]),
                "LONG": _fmt(d.longitude[i]),
                "CLIMATE": str(d.climate[i]),
                "VARIETY": str(d.variety[i]),
                "VARIETY_YIELD": _fmt(d.variety_yield[i]),
                "CHECK_YIELD": _fmt(d.check_yield[i]),
            }
            row = [meta[c] if c in meta else _fmt(d.X[i, attr_pos[c]]) for c in header]
            w.writerow(row)


# -- filtering and splitting -------------------------------------------

def filter_top_varieties(d: Dataset, count: int) -> Dataset:
    """Keep the ``count`` varieties with the most records (ties: smaller id)."""
    if count < 1:
        raise ContractError("count must be >= 1")
    counts = d.variety_counts()
    if count > len(counts):
        log.warning(
            "requested %d varieties but only %d present; dataset unchanged",
            count, len(counts),
        )
        return d
    ranked = sorted(counts, key=lambda v: (-counts[v], v))
    keep = set(ranked[:count])
    return d.subset(np.flatnonzero([v in keep for v in d.variety.tolist()]))


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.6
    validation_fraction: float = 0.2
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_fraction, self.validation_fraction, self.test_fraction)
        if any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be positive and sum to 1, got {fr}")

    @property
    def fractions(self) -> tuple:
        return (self.train_fraction, self.validation_fraction, self.test_fraction)


def partition_sizes(n: int, fractions: Sequence[float]) -> tuple:
    """Largest-remainder apportionment of ``n`` items to ``fractions``.

    Leftover items go to the largest fractional quotas, earlier partitions
    first on ties.
    """
    quotas = [n * f for f in fractions]
    sizes = [math.floor(q + 1e-9) for q in quotas]
    rest = n - sum(sizes)
    order = sorted(range(len(fractions)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[:rest]:
        sizes[i] += 1
    return tuple(sizes)


def split(d: Dataset, spec: SplitSpec = SplitSpec()):
    """Variety-stratified (train, validation, test) split.

    Each variety's records are shuffled with a stream seeded by
    (spec.seed, variety position) and cut by :func:`partition_sizes`.
    Varieties with fewer than 3 records go entirely to training.
    """
    parts = ([], [], [])
    for pos, v in enumerate(d.varieties):
        idx = np.flatnonzero(d.variety == v)
        if len(idx) < 3:
            log.warning("variety %s has %d records; all assigned to training", v, len(idx))
            parts[0].extend(idx.tolist())
            continue
        rng = np.random.default_rng([spec.seed, pos])
        idx = rng.permutation(idx)
        n_tr, n_va, _ = partition_sizes(len(idx), spec.fractions)
        parts[0].extend(idx[:n_tr].tolist())
        parts[1].extend(idx[n_tr:n_tr + n_va].tolist())
        parts[2].extend(idx[n_tr + n_va:].tolist())
    return tuple(d.subset(np.array(sorted(p), dtype=np.int64)) for p in parts)


# -- synthetic data ------------------------------------------------------

@dataclass(frozen=True)
class GeneratorConfig:
    """Settings for :func:`generate_synthetic`; every field is required in JSON.

    ``samples_per_variety`` and ``variety_groups`` have one entry per
    variety. Coefficients in ``check_coefficients`` multiply standardized
    attributes; weather terms (TEMP, PREC) use a peaked quadratic response,
    every other term is linear.
    """

    n_sites: int
    first_year: int
    last_year: int
    n_climate_types: int
    samples_per_variety: tuple
    variety_groups: tuple
    check_intercept: float
    check_coefficients: dict
    ratio_group_offset: float
    ratio_variety_offset: float
    ratio_slope: float
    ratio_attributes_per_group: int
    check_noise: float
    variety_noise_min: float
    variety_noise_max: float

    def __post_init__(self):
        if self.n_sites < 1:
            raise ConfigError("n_sites must be >= 1")
        if len(self.samples_per_variety) < 1:
            raise ConfigError("at least one variety is required")
        if len(self.variety_groups) != len(self.samples_per_variety):
            raise ConfigError("variety_groups must have one entry per variety")
        if self.last_year < self.first_year:
            raise ConfigError("last_year precedes first_year")
        if self.n_climate_types < 1:
            raise ConfigError("n_climate_types must be >= 1")
        if any(c < 1 for c in self.samples_per_variety):
            raise ConfigError("every variety needs at least one sample")
        unknown = set(self.check_coefficients) - set(DEFAULT_SCHEMA)
        if unknown:
            raise ConfigError(f"unknown check-yield attributes: {sorted(unknown)}")
        if not 0 <= self.variety_noise_min <= self.variety_noise_max:
            raise ConfigError("variety noise bounds must satisfy 0 <= min <= max")

    @property
    def n_varieties(self) -> int:
        return len(self.samples_per_variety)

    @classmethod
    def standard(cls, **overrides) -> "GeneratorConfig":
        """A balanced 10-variety benchmark with weather-dominated check yield."""
        base = dict(
            n_sites=60,
            first_year=2008,
            last_year=2014,
            n_climate_types=4,
            samples_per_variety=(400,) * 10,
            variety_groups=(0, 0, 1, 1, 2, 2, 3, 3, 4, 4),
            check_intercept=50.0,
            check_coefficients={
                "TEMP": 6.0, "PREC": 5.0, "RAD": 4.0,
                "LAT": -2.5, "LONG": -2.0, "CONUS_PH": 1.0, "ISRIC_SAND": -0.8,
            },
            ratio_group_offset=0.2,
            ratio_variety_offset=0.02,
            ratio_slope=0.12,
            ratio_attributes_per_group=2,
            check_noise=1.5,
            variety_noise_min=1.0,
            variety_noise_max=3.0,
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["samples_per_variety"] = list(self.samples_per_variety)
        d["variety_groups"] = list(self.variety_groups)
        d["check_coefficients"] = dict(self.check_coefficients)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        names = {f.name for f in fields(cls)}
        missing = names - set(d)
        unknown = set(d) - names
        if missing:
            raise ConfigError(f"generator config is missing fields: {sorted(missing)}")
        if unknown:
            raise ConfigError(f"generator config has unknown fields: {sorted(unknown)}")
        d = dict(d)
        d["samples_per_variety"] = tuple(int(c) for c in d["samples_per_variety"])
        d["variety_groups"] = tuple(int(g) for g in d["variety_groups"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "GeneratorConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# location and scale used to standardize each attribute
_ATTRIBUTE_SCALE = {
    "CONUS_PH": (6.5, 0.6), "CONUS_AWC": (20.0, 4.0), "CONUS_CLAY": (25.0, 8.0),
    "CONUS_SILT": (45.0, 10.0), "CONUS_SAND": (30.0, 12.0), "ISRIC_SAND": (30.0, 12.0),
    "ISRIC_SILT": (45.0, 10.0), "ISRIC_CLAY": (25.0, 8.0), "ISRIC_PH": (6.4, 0.6),
    "ISRIC_CEC": (18.0, 5.0),
    "LAT": (41.5, 3.5), "LONG": (-91.0, 5.0), "AREA": (0.5, 0.2), "RM_25": (0.4, 0.2),
    "TOT_IRR_DE": (0.1, 0.05), "RM_BAND": (3.0, 0.8),
    "TEMP": (3000.0, 150.0), "PREC": (500.0, 90.0), "RAD": (2400.0, 120.0),
    "TEMP_MED": (3000.0, 120.0), "PREC_MED": (500.0, 70.0), "RAD_MED": (2400.0, 90.0),
}
for _t in SOIL_TYPES:
    _ATTRIBUTE_SCALE[_t] = (1 / 6, math.sqrt(5) / 6)
_PEAKED = ("TEMP", "PREC")
_PEAK_AT = 0.3


@dataclass
class GroundTruth:
    """Latent functions behind a synthetic dataset."""

    attribute_names: tuple
    check_intercept: float
    check_coefficients: dict
    variety_ids: tuple
    variety_groups: dict
    ratio_base: dict
    ratio_slopes: dict  # variety -> {attribute: slope}
    variety_noise: dict
    check_noise: float

    def standardize(self, X: np.ndarray, name: str) -> np.ndarray:
        loc, scale = _ATTRIBUTE_SCALE[name]
        return (np.asarray(X)[..., self.attribute_names.index(name)] - loc) / scale

    def check_term(self, X: np.ndarray, name: str) -> np.ndarray:
        z = self.standardize(X, name)
        if name in _PEAKED:
            z = z - 0.25 * (z - _PEAK_AT) ** 2
        return self.check_coefficients[name] * z

    def check_yield(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.full(X.shape[:-1], self.check_intercept, dtype=float)
        for name in self.check_coefficients:
            out = out + self.check_term(X, name)
        return out

    def ratio(self, variety_id: str, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.full(X.shape[:-1], self.ratio_base[variety_id], dtype=float)
        for name, slope in self.ratio_slopes[variety_id].items():
            out = out + slope * np.tanh(self.standardize(X, name))
        return out

    def variety_yield(self, variety_id: str, X) -> np.ndarray:
        return self.check_yield(X) * self.ratio(variety_id, X)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attribute_names"] = list(self.attribute_names)
        d["variety_ids"] = list(self.variety_ids)
        return d


def _trial_attributes(config: GeneratorConfig, rng: np.random.Generator):
    """Site-level and site-year-level attribute tables."""
    years = np.arange(config.first_year, config.last_year + 1)
    n_s = config.n_sites
    site = {}
    lat_loc, lat_sc = _ATTRIBUTE_SCALE["LAT"]
    lon_loc, lon_sc = _ATTRIBUTE_SCALE["LONG"]
    site["LAT"] = lat_loc + lat_sc * rng.uniform(-1.7, 1.7, n_s)
    site["LONG"] = lon_loc + lon_sc * rng.uniform(-1.7, 1.7, n_s)
    for name in SOIL_CONTINUOUS + ("AREA", "RM_25", "TOT_IRR_DE"):
        loc, sc = _ATTRIBUTE_SCALE[name]
        site[name] = loc + sc * rng.standard_normal(n_s)
    cube = rng.integers(1, 7, n_s)
    for k, name in enumerate(SOIL_TYPES, start=1):
        site[name] = (cube == k).astype(float)
    for name in WEATHER_MEDIANS:
        loc, sc = _ATTRIBUTE_SCALE[name]
        site[name] = loc + sc * rng.standard_normal(n_s)
    # climate type: bands of a latitude-temperature index
    index = (site["LAT"] - lat_loc) / lat_sc - (site["TEMP_MED"] - 3000.0) / 120.0
    edges = np.quantile(index, np.linspace(0, 1, config.n_climate_types + 1)[1:-1])
    site["CLIMATE"] = np.searchsorted(edges, index)

    # yearly weather: site median plus a regional year shock and local noise
    n_y = len(years)
    weather = {}
    for name in WEATHER_RANDOM:
        loc, sc = _ATTRIBUTE_SCALE[name]
        med = site[name + "_MED"]
        year_shock = rng.standard_normal(n_y)
        local = rng.standard_normal((n_s, n_y))
        med_sd = _ATTRIBUTE_SCALE[name + "_MED"][1]
        anomaly_sd = math.sqrt(max(sc**2 - med_sd**2, 1e-12))
        weather[name] = med[:, None] + anomaly_sd * (0.6 * year_shock[None, :] + 0.8 * local)
    return years, site, weather


def generate_synthetic(config: GeneratorConfig, seed: int = 0):
    """Draw a synthetic trial dataset and the latent truth that produced it.

    Returns ``(Dataset, GroundTruth)``. Check yield is a fixed function of
    the attributes plus trial-level noise; variety yield is
    ``check_yield * ratio(variety, attributes)`` plus variety-specific noise.
    """
    rng = np.random.default_rng(seed)
    names = DEFAULT_SCHEMA
    years, site, weather = _trial_attributes(config, rng)
    n_s, n_y = config.n_sites, len(years)
    n_v = config.n_varieties
    variety_ids = tuple(f"V{i + 1:03d}" for i in range(n_v))

    groups = sorted(set(config.variety_groups))
    candidates = [a for a in names if a not in SOIL_TYPES and a not in _PEAKED]
    group_offset = {g: config.ratio_group_offset * rng.standard_normal() for g in groups}
    group_attrs = {
        g: tuple(rng.choice(candidates, size=config.ratio_attributes_per_group, replace=False).tolist())
        for g in groups
    }
    group_slopes = {
        g: tuple(config.ratio_slope * rng.choice([-1.0, 1.0]) * rng.uniform(0.6, 1.0)
                 for _ in group_attrs[g])
        for g in groups
    }
    ratio_base, ratio_slopes, noise, maturity = {}, {}, {}, {}
    for v, g in zip(variety_ids, config.variety_groups):
        ratio_base[v] = 1.0 + group_offset[g] + config.ratio_variety_offset * rng.standard_normal()
        ratio_slopes[v] = dict(zip(group_attrs[g], group_slopes[g]))
        noise[v] = float(rng.uniform(config.variety_noise_min, config.variety_noise_max))
        maturity[v] = float(rng.choice(np.arange(2.0, 4.01, 0.5)))

    truth = GroundTruth(
        attribute_names=names,
        check_intercept=config.check_intercept,
        check_coefficients=dict(config.check_coefficients),
        variety_ids=variety_ids,
        variety_groups=dict(zip(variety_ids, config.variety_groups)),
        ratio_base=ratio_base,
        ratio_slopes=ratio_slopes,
        variety_noise=noise,
        check_noise=config.check_noise,
    )

    # trial table: one row per (site, year)
    n_trials = n_s * n_y
    trial_site = np.repeat(np.arange(n_s), n_y)
    trial_year = np.tile(np.arange(n_y), n_s)
    T = np.empty((n_trials, len(names)))
    for j, name in enumerate(names):
        if name in WEATHER_RANDOM:
            T[:, j] = weather[name][trial_site, trial_year]
        elif name == "RM_BAND":
            T[:, j] = 0.0
        else:
            T[:, j] = site[name][trial_site]
    trial_cy = truth.check_yield(T) + config.check_noise * rng.standard_normal(n_trials)

    rows = []
    for v, count in zip(variety_ids, config.samples_per_variety):
        replace = count > n_trials
        rows.append(rng.choice(n_trials, size=count, replace=replace))
    trial_of = np.concatenate(rows)
    variety_of = np.repeat(np.array(variety_ids), config.samples_per_variety)

    X = T[trial_of].copy()
    rm = names.index("RM_BAND")
    X[:, rm] = np.array([maturity[v] for v in variety_of])
    cy = trial_cy[trial_of]
    floor = 0.05 * config.check_intercept
    if np.any(cy < floor):
        log.warning("clipping %d synthetic check yields at %.3g", int(np.sum(cy < floor)), floor)
        cy = np.maximum(cy, floor)
    ratio = np.empty(len(cy))
    for v in variety_ids:
        mask = variety_of == v
        ratio[mask] = truth.ratio(v, X[mask])
    sd = np.array([noise[v] for v in variety_of])
    y = np.maximum(cy * ratio + sd * rng.standard_normal(len(cy)), 0.0)

    d = Dataset(
        names,
        years[trial_year[trial_of]].astype(np.int64),
        np.array([f"S{s + 1:03d}" for s in trial_site[trial_of]], dtype=str),
        X[:, names.index("LAT")].copy(),
        X[:, names.index("LONG")].copy(),
        np.array([f"C{c + 1}" for c in site["CLIMATE"][trial_site[trial_of]]], dtype=str),
        variety_of.astype(str),
        X,
        y,
        cy,
    )
    return d, truth
