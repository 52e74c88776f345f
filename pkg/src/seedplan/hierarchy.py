"""Two-layer yield model: check yield times variety ratio, plus residual noise.

``F`` maps attributes to check yield over all records. Each variety ``v``
gets its own ``G_v`` mapping attributes to ``R = Y / CY``; varieties with
few records borrow records from varieties in the same cluster.
"""

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import forest
from .clustering import ClusterAssignment
from .dataset import IMPUTE_IF_MISSING, Dataset
from .errors import ConfigError, ContractError
from .forest import ForestConfig, ForestModel

log = logging.getLogger(__name__)

MODEL_FORMAT = "seedplan.hierarchy"
MODEL_VERSION = 1


@dataclass(frozen=True)
class AugmentationPolicy:
    """Top up varieties with fewer than ``min_samples`` records.

    ``min_samples = 0`` disables augmentation.
    """

    min_samples: int = 200
    target_samples: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.min_samples < 0 or self.min_samples > self.target_samples:
            raise ConfigError("augmentation needs 0 <= min_samples <= target_samples")

    @property
    def enabled(self) -> bool:
        return self.min_samples > 0


@dataclass
class HierarchicalModel:
    check_model: ForestModel
    ratio_models: dict
    residual_mse: dict
    residual_source: dict = field(default_factory=dict)  # "validation" or "training"
    augmentation_log: dict = field(default_factory=dict)

    @property
    def attribute_names(self) -> tuple:
        return self.check_model.attribute_names

    @property
    def varieties(self) -> list:
        return sorted(self.ratio_models)

    def _ratio_model(self, v: str) -> ForestModel:
        try:
            return self.ratio_models[v]
        except KeyError:
            raise ContractError(f"unknown variety {v!r}") from None

    def predict_yield(self, v: str, x):
        """Return ``(cy_hat, r_hat, y_hat)`` with ``y_hat = cy_hat * r_hat``.

        ``x`` may be one attribute row or a matrix of rows.
        """
        g = self._ratio_model(v)
        cy = self.check_model.predict(x)
        r = g.predict(x)
        return cy, r, cy * r

    def predict_matrix(self, X, varieties=None) -> np.ndarray:
        """Noise-free yield predictions, shape (rows, varieties)."""
        varieties = self.varieties if varieties is None else list(varieties)
        X = np.asarray(X, dtype=float)
        cy = self.check_model.predict(X)
        out = np.empty((len(X), len(varieties)))
        for j, v in enumerate(varieties):
            out[:, j] = cy * self._ratio_model(v).predict(X)
        return out

    # -- persistence ----------------------------------------------------
    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        self.check_model.save(os.path.join(directory, "check.json"))
        entries = []
        for i, v in enumerate(self.varieties, start=1):
            fname = f"ratio_{i:04d}.json"
            self.ratio_models[v].save(os.path.join(directory, fname))
            entries.append({
                "variety": v,
                "index": i,
                "file": fname,
                "residual_mse": self.residual_mse[v],
                "residual_source": self.residual_source.get(v, "validation"),
                "augmentation": self.augmentation_log.get(v, {}),
            })
        manifest = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "attribute_names": list(self.attribute_names),
            "check_model": "check.json",
            "varieties": entries,
        }
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, directory) -> "HierarchicalModel":
        path = os.path.join(directory, "manifest.json")
        try:
            with open(path) as fh:
                manifest = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"no model manifest at {path}") from None
        if manifest.get("format") != MODEL_FORMAT or manifest.get("version") != MODEL_VERSION:
            raise ConfigError(f"{path} is not a supported model manifest")
        check = ForestModel.load(os.path.join(directory, manifest["check_model"]))
        ratio, resid, source, aug = {}, {}, {}, {}
        for e in manifest["varieties"]:
            v = e["variety"]
            ratio[v] = ForestModel.load(os.path.join(directory, e["file"]))
            resid[v] = float(e["residual_mse"])
            source[v] = e["residual_source"]
            aug[v] = e["augmentation"]
        return cls(check, ratio, resid, source, aug)


def _cluster_lookup(clusters: ClusterAssignment) -> dict:
    return clusters.assignment if clusters is not None else {}


def augment_indices(
    train: Dataset, v: str, clusters: ClusterAssignment, policy: AugmentationPolicy, position: int
):
    """Record indices used to fit ``G_v`` and a log entry describing them.

    Own records always come first. Donors are drawn uniformly from the
    pooled records of the other varieties sharing ``v``'s cluster, without
    replacement until the pool is used up and with replacement after that.
    """
    own = np.flatnonzero(train.variety == v)
    entry = {"own": int(len(own)), "donated": 0, "donors": {}}
    if not policy.enabled or len(own) >= policy.min_samples:
        return own, entry
    labels = _cluster_lookup(clusters)
    if v not in labels:
        log.warning("variety %s has no cluster label; not augmented", v)
        return own, entry
    siblings = {u for u, lab in labels.items() if lab == labels[v] and u != v}
    pool = np.flatnonzero(np.isin(train.variety, sorted(siblings)))
    if len(pool) == 0:
        log.warning("variety %s has %d records and no cluster siblings; not augmented", v, len(own))
        return own, entry
    need = policy.target_samples - len(own)
    rng = np.random.default_rng([policy.seed, position])
    if need <= len(pool):
        drawn = rng.choice(pool, size=need, replace=False)
    else:
        drawn = np.concatenate([rng.permutation(pool), rng.choice(pool, size=need - len(pool))])
    donor_ids, counts = np.unique(train.variety[drawn], return_counts=True)
    entry["donated"] = int(need)
    entry["donors"] = {str(u): int(c) for u, c in zip(donor_ids, counts)}
    return np.concatenate([own, drawn]), entry


def train(
    train: Dataset,
    valid: Optional[Dataset],
    clusters: Optional[ClusterAssignment],
    policy: AugmentationPolicy = AugmentationPolicy(),
    fc: ForestConfig = ForestConfig(),
) -> HierarchicalModel:
    if len(train) == 0:
        raise ContractError("training set is empty")
    names = train.attribute_names
    check = forest.fit(train.X, train.check_yield, fc, names)
    ratio_target = train.ratio

    ratio_models, aug_log = {}, {}
    for pos, v in enumerate(train.varieties):
        idx, entry = augment_indices(train, v, clusters, policy, pos)
        ratio_models[v] = forest.fit(train.X[idx], ratio_target[idx], fc, names)
        aug_log[v] = entry

    model = HierarchicalModel(check, ratio_models, {}, {}, aug_log)
    for v in train.varieties:
        held = valid.for_variety(v) if valid is not None else None
        if held is not None and len(held):
            source, data = "validation", held
        else:
            log.warning("variety %s has no validation records; residual from training data", v)
            source, data = "training", train.for_variety(v)
        _, _, y_hat = model.predict_yield(v, data.X)
        model.residual_mse[v] = float(np.mean((y_hat - data.variety_yield) ** 2))
        model.residual_source[v] = source
    return model


def predict_yield(m: HierarchicalModel, v: str, x):
    return m.predict_yield(v, x)


@dataclass
class OneLayerModel:
    """Per-variety forests mapping attributes straight to variety yield."""

    models: dict

    def predict(self, v: str, X):
        try:
            return self.models[v].predict(X)
        except KeyError:
            raise ContractError(f"unknown variety {v!r}") from None


def train_one_layer(train: Dataset, fc: ForestConfig = ForestConfig()) -> OneLayerModel:
    if len(train) == 0:
        raise ContractError("training set is empty")
    models = {}
    for v in train.varieties:
        part = train.for_variety(v)
        models[v] = forest.fit(part.X, part.variety_yield, fc, train.attribute_names)
    return OneLayerModel(models)


@dataclass
class EvaluationReport:
    n_records: int
    mse_baseline: float
    mse_check: float
    mse_two_layer: float
    median_abs_err: float
    mean_abs_err: float
    per_variety_mse: dict
    mse_one_layer: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def save_per_variety_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["VARIETY", "N", "MSE"])
            for v, (n, mse) in sorted(self.per_variety_mse.items()):
                w.writerow([v, n, repr(mse)])


def evaluate(
    m: HierarchicalModel, test: Dataset, one_layer: Optional[OneLayerModel] = None
) -> EvaluationReport:
    """MSE of the baseline, check-only, optional one-layer and two-layer predictors.

    The baseline predicts the mean yield of ``test`` itself, so its MSE is the
    population variance of the test yields.
    """
    if len(test) == 0:
        raise ContractError("evaluation set is empty")
    y = test.variety_yield
    cy = m.check_model.predict(test.X)
    y_hat = np.empty(len(test))
    y_one = np.empty(len(test)) if one_layer is not None else None
    per_variety = {}
    for v in test.varieties:
        mask = test.variety == v
        r = m._ratio_model(v).predict(test.X[mask])
        y_hat[mask] = cy[mask] * r
        if one_layer is not None:
            y_one[mask] = one_layer.predict(v, test.X[mask])
        per_variety[v] = (int(mask.sum()), float(np.mean((y_hat[mask] - y[mask]) ** 2)))
    abs_err = np.abs(y_hat - y)
    return EvaluationReport(
        n_records=len(test),
        mse_baseline=float(np.mean((y - y.mean()) ** 2)),
        mse_check=float(np.mean((cy - y) ** 2)),
        mse_two_layer=float(np.mean((y_hat - y) ** 2)),
        median_abs_err=float(np.median(abs_err)),
        mean_abs_err=float(np.mean(abs_err)),
        per_variety_mse=per_variety,
        mse_one_layer=None if y_one is None else float(np.mean((y_one - y) ** 2)),
    )


def impute_rm_band(d: Dataset, fc: ForestConfig = ForestConfig()) -> Dataset:
    """Fill missing RM_BAND values with a forest fit on the other attributes."""
    if IMPUTE_IF_MISSING not in d.attribute_names:
        return d
    j = d.attribute_names.index(IMPUTE_IF_MISSING)
    missing = ~np.isfinite(d.X[:, j])
    if not missing.any():
        return d
    others = [i for i in range(d.X.shape[1]) if i != j]
    known = ~missing
    if not known.any():
        raise ContractError("RM_BAND is missing on every record; nothing to impute from")
    names = [d.attribute_names[i] for i in others]
    model = forest.fit(d.X[known][:, others], d.X[known, j], fc, names)
    X = d.X.copy()
    X[missing, j] = model.predict(d.X[missing][:, others])
    log.info("imputed RM_BAND for %d records", int(missing.sum()))
    return d.with_attributes(X)
