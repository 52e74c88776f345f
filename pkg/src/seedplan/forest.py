"""Random-forest regression built on CART variance-reduction trees."""

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import _cart
from .errors import ConfigError, ContractError

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 200
    max_depth: Optional[int] = None
    min_samples_leaf: int = 5
    # None resolves to ceil(p / 3) at fit time
    features_per_split: Optional[int] = None
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise ConfigError("min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError("max_depth must be >= 0 or None")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ConfigError("features_per_split must be >= 1")

    def resolved(self, n_features: int) -> "ForestConfig":
        mtry = self.features_per_split
        if mtry is None:
            mtry = max(1, math.ceil(n_features / 3))
        if mtry > n_features:
            raise ConfigError(
                f"features_per_split={mtry} exceeds attribute count {n_features}"
            )
        return replace(self, features_per_split=mtry)

    @classmethod
    def from_dict(cls, d: dict) -> "ForestConfig":
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown forest config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _cart.predict_tree(
            self.feature, self.threshold, self.left, self.right, self.value, X
        )

    def split_features(self) -> set:
        return {int(f) for f in self.feature if f != _cart.LEAF}


@dataclass
class ForestModel:
    trees: list
    config: ForestConfig
    attribute_names: tuple
    oob_mse: float = float("nan")
    _packed: Optional[tuple] = field(default=None, repr=False, compare=False)

    @property
    def n_features(self) -> int:
        return len(self.attribute_names)

    def _pack(self):
        if self._packed is None:
            sizes = [t.n_nodes for t in self.trees]
            offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
            offsets[1:] = np.cumsum(sizes)
            self._packed = (
                offsets,
                np.concatenate([t.feature for t in self.trees]),
                np.concatenate([t.threshold for t in self.trees]),
                np.concatenate([t.left for t in self.trees]),
                np.concatenate([t.right for t in self.trees]),
                np.concatenate([t.value for t in self.trees]),
            )
        return self._packed

    def predict(self, X):
        """Mean of per-tree leaf predictions.

        A 1-D row returns a float; a 2-D matrix returns one value per row.
        """
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ContractError(
                f"expected rows of {self.n_features} attributes, got shape {X.shape}"
            )
        out = _cart.predict_packed(*self._pack(), np.ascontiguousarray(X))
        return float(out[0]) if single else out

    def split_features(self) -> set:
        used = set()
        for t in self.trees:
            used |= t.split_features()
        return used

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": "seedplan.forest",
            "version": FORMAT_VERSION,
            "config": asdict(self.config),
            "attribute_names": list(self.attribute_names),
            "oob_mse": None if math.isnan(self.oob_mse) else self.oob_mse,
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "value": t.value.tolist(),
                }
                for t in self.trees
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        if d.get("format") != "seedplan.forest" or d.get("version") != FORMAT_VERSION:
            raise ConfigError("not a seedplan forest document of a supported version")
        trees = [
            Tree(
                np.asarray(t["feature"], dtype=np.int64),
                np.asarray(t["threshold"], dtype=np.float64),
                np.asarray(t["left"], dtype=np.int64),
                np.asarray(t["right"], dtype=np.int64),
                np.asarray(t["value"], dtype=np.float64),
            )
            for t in d["trees"]
        ]
        oob = d.get("oob_mse")
        return cls(
            trees=trees,
            config=ForestConfig(**d["config"]),
            attribute_names=tuple(d["attribute_names"]),
            oob_mse=float("nan") if oob is None else float(oob),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "ForestModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _tree_streams(seed: int, index: int):
    ss = np.random.SeedSequence([seed, index])
    rng = np.random.default_rng(ss)
    kernel_seed = int(ss.generate_state(1, dtype=np.uint32)[0])
    return rng, kernel_seed


def fit(
    X,
    y,
    config: ForestConfig = ForestConfig(),
    attribute_names: Optional[Sequence[str]] = None,
) -> ForestModel:
    """Grow ``config.n_trees`` CART trees on bootstrap resamples of (X, y).

    Each tree draws its resample and its per-node attribute subsets from a
    stream seeded by (config.seed, tree index), so the result does not depend
    on the order in which trees are grown.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ContractError(f"shape mismatch: X {X.shape}, y {y.shape}")
    n, p = X.shape
    if n == 0:
        raise ContractError("cannot fit a forest on an empty training set")
    if p == 0:
        raise ContractError("cannot fit a forest without attributes")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ContractError("training data contains non-finite values")
    if attribute_names is None:
        attribute_names = [f"x{i}" for i in range(p)]
    if len(attribute_names) != p:
        raise ContractError("attribute_names length does not match X columns")
    config = config.resolved(p)
    max_depth = -1 if config.max_depth is None else config.max_depth

    trees = []
    oob_sum = np.zeros(n)
    oob_count = np.zeros(n, dtype=np.int64)
    for t in range(config.n_trees):
        rng, kernel_seed = _tree_streams(config.seed, t)
        if config.bootstrap:
            idx = rng.integers(0, n, size=n).astype(np.int64)
        else:
            idx = np.arange(n, dtype=np.int64)
        tree = Tree(
            *_cart.grow_tree(
                X, y, idx, max_depth, config.min_samples_leaf,
                config.features_per_split, kernel_seed,
            )
        )
        trees.append(tree)
        if config.bootstrap:
            oob = np.ones(n, dtype=bool)
            oob[idx] = False
            if oob.any():
                oob_sum[oob] += tree.predict(X[oob])
                oob_count[oob] += 1

    oob_mse = float("nan")
    has_oob = oob_count > 0
    if config.bootstrap and has_oob.any():
        resid = oob_sum[has_oob] / oob_count[has_oob] - y[has_oob]
        oob_mse = float(np.mean(resid**2))
    return ForestModel(trees, config, tuple(attribute_names), oob_mse)


def predict(m: ForestModel, x):
    return m.predict(x)


def mse(m: ForestModel, X, y) -> float:
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        raise ContractError("mse needs a non-empty evaluation set")
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != y.shape[0]:
        raise ContractError(f"shape mismatch: X {X.shape}, y {y.shape}")
    return float(np.mean((m.predict(X) - y) ** 2))


def permutation_importance(m: ForestModel, X, y, seed: int = 0) -> np.ndarray:
    """Percentage increase in MSE when each attribute column is shuffled.

    Column ``i`` is shuffled with a generator seeded by (seed, i).
    """
    X = np.array(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != y.shape[0]:
        raise ContractError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if X.shape[0] < 2:
        raise ContractError("permutation importance needs at least 2 rows")
    base = mse(m, X, y)
    out = np.empty(X.shape[1])
    for i in range(X.shape[1]):
        rng = np.random.default_rng([seed, i])
        saved = X[:, i].copy()
        X[:, i] = rng.permutation(saved)
        permuted = mse(m, X, y)
        X[:, i] = saved
        if base > 0:
            out[i] = 100.0 * (permuted - base) / base
        else:
            out[i] = 0.0 if permuted == base else math.inf
    return out
