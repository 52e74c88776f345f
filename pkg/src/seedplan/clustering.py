"""Variety-by-attribute correlation matrix and k-means categorization."""

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import Dataset
from .errors import ContractError

log = logging.getLogger(__name__)

MAX_ITER = 300


@dataclass
class CorrelationMatrix:
    varieties: list
    attributes: list
    values: np.ndarray
    undefined: np.ndarray  # True where a zero variance made the entry undefined

    def row(self, variety: str) -> np.ndarray:
        return self.values[self.varieties.index(variety)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["VARIETY"] + list(self.attributes))
            for v, row in zip(self.varieties, self.values):
                w.writerow([v] + [repr(float(x)) for x in row])


def correlation_matrix(d: Dataset) -> CorrelationMatrix:
    """Pearson correlation of each variety's yield with every attribute.

    Attributes are z-scored over the whole dataset first. Entries whose
    yield or attribute has zero variance within the variety are set to 0
    and flagged. Varieties with fewer than 2 records are left out.
    """
    X = d.X
    mean = np.nanmean(X, axis=0) if len(d) else np.zeros(X.shape[1])
    sd = np.nanstd(X, axis=0) if len(d) else np.ones(X.shape[1])
    sd = np.where(sd > 0, sd, 1.0)
    Z = (X - mean) / sd

    varieties, rows, flags = [], [], []
    for v in d.varieties:
        mask = d.variety == v
        if mask.sum() < 2:
            log.warning("variety %s has fewer than 2 records; excluded from correlations", v)
            continue
        y = d.variety_yield[mask]
        Zv = Z[mask]
        yc = y - y.mean()
        Zc = Zv - Zv.mean(axis=0)
        sy = np.sqrt(np.sum(yc**2))
        sz = np.sqrt(np.sum(Zc**2, axis=0))
        undefined = (sz <= 1e-12 * np.sqrt(len(y))) | (sy <= 1e-12 * np.abs(y).max(initial=1.0))
        undefined |= ~np.isfinite(sz)
        with np.errstate(invalid="ignore", divide="ignore"):
            r = (Zc.T @ yc) / (sz * sy)
        r = np.where(undefined, 0.0, np.clip(r, -1.0, 1.0))
        varieties.append(v)
        rows.append(r)
        flags.append(undefined)
    p = X.shape[1]
    return CorrelationMatrix(
        varieties,
        list(d.attribute_names),
        np.array(rows).reshape(-1, p),
        np.array(flags, dtype=bool).reshape(-1, p),
    )


@dataclass
class ClusterAssignment:
    k: int
    labels: np.ndarray  # per input row, values in 1..k
    centroids: np.ndarray
    wgss: float
    ids: Optional[list] = None
    history: list = field(default_factory=list)  # wgss after each assignment step
    empty_cluster_events: int = 0

    @property
    def assignment(self) -> dict:
        keys = self.ids if self.ids is not None else list(range(len(self.labels)))
        return {key: int(lab) for key, lab in zip(keys, self.labels)}

    def members(self, label: int) -> list:
        keys = self.ids if self.ids is not None else list(range(len(self.labels)))
        return [key for key, lab in zip(keys, self.labels) if lab == label]

    def to_dict(self) -> dict:
        return {"k": self.k, "assignments": self.assignment, "wgss": self.wgss}

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterAssignment":
        ids = list(d["assignments"])
        labels = np.array([d["assignments"][i] for i in ids], dtype=np.int64)
        return cls(int(d["k"]), labels, np.zeros((0, 0)), float(d["wgss"]), ids)

    @classmethod
    def load(cls, path) -> "ClusterAssignment":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def from_groups(cls, groups: dict) -> "ClusterAssignment":
        """Build an assignment from a {id: group} mapping (labels renumbered 1..k)."""
        ids = sorted(groups)
        order = {}
        for i in ids:
            order.setdefault(groups[i], len(order) + 1)
        labels = np.array([order[groups[i]] for i in ids], dtype=np.int64)
        return cls(len(order), labels, np.zeros((0, 0)), float("nan"), ids)


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)


def _wgss(points, labels, centroids) -> float:
    return float(np.sum((points - centroids[labels]) ** 2))


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            # all remaining mass sits on chosen points; fall back to uniform
            free = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(free))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((points - points[nxt]) ** 2, axis=1))
    return points[chosen].copy()


def lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int = MAX_ITER):
    """Run Lloyd iterations from ``centroids``.

    Returns ``(labels0, centroids, wgss, history, empty_events)`` with
    0-based labels. ``history`` holds the objective after every assignment
    step. An emptied cluster is re-seeded at the point farthest from its
    current centroid.
    """
    points = np.asarray(points, dtype=float)
    centroids = np.array(centroids, dtype=float)
    k = len(centroids)
    history = []
    empty_events = 0
    labels = None
    for _ in range(max_iter):
        new_labels = np.argmin(_sq_dists(points, centroids), axis=1)
        history.append(_wgss(points, new_labels, centroids))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            mask = labels == c
            if mask.any():
                centroids[c] = points[mask].mean(axis=0)
        counts = np.bincount(labels, minlength=k)
        for c in np.flatnonzero(counts == 0):
            empty_events += 1
            dist = np.sum((points - centroids[labels]) ** 2, axis=1)
            far = int(np.argmax(dist))
            centroids[c] = points[far]
            labels[far] = c
    labels = np.argmin(_sq_dists(points, centroids), axis=1)
    for c in range(k):
        mask = labels == c
        if mask.any():
            centroids[c] = points[mask].mean(axis=0)
    return labels, centroids, _wgss(points, labels, centroids), history, empty_events


def _canonical(labels0: np.ndarray, centroids: np.ndarray):
    """Relabel clusters 1..k in order of first appearance over the rows."""
    k = len(centroids)
    order = []
    for lab in labels0.tolist():
        if lab not in order:
            order.append(lab)
    order += [c for c in range(k) if c not in order]
    remap = np.empty(k, dtype=np.int64)
    for new, old in enumerate(order):
        remap[old] = new
    return remap[labels0] + 1, centroids[order]


def _finish(k, labels0, centroids, wgss, history, empty, ids):
    labels, centroids = _canonical(labels0, centroids)
    return ClusterAssignment(k, labels, centroids, wgss, ids, history, empty)


def kmeans(
    points,
    k: int,
    seed: int = 0,
    restarts: int = 20,
    ids: Optional[Sequence] = None,
    init: Optional[np.ndarray] = None,
) -> ClusterAssignment:
    """Best-of-``restarts`` Lloyd k-means with k-means++ seeding.

    Restart ``r`` draws its seeds from a generator keyed by (seed, r); the
    winner is the lowest wgss, earlier restart on ties. ``init`` adds one
    extra warm start that competes with the random restarts.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if k < 1 or k > n:
        raise ContractError(f"k must be in 1..{n}, got {k}")
    if restarts < 1 and init is None:
        raise ContractError("restarts must be >= 1")
    best = None
    starts = []
    if init is not None:
        starts.append(np.asarray(init, dtype=float))
    for r in range(restarts):
        starts.append(None)
    for r, start in enumerate(starts):
        if start is None:
            rng = np.random.default_rng([seed, k, r])
            start = _kmeans_pp(points, k, rng)
        result = lloyd(points, start)
        if best is None or result[2] < best[2]:
            best = result
    labels0, centroids, wgss, history, empty = best
    return _finish(k, labels0, centroids, wgss, history, empty, list(ids) if ids is not None else None)


def elbow_curve(points, k_range: Sequence[int], seed: int = 0, restarts: int = 20) -> list:
    """``[(k, wgss)]`` for each k, monotone non-increasing in k.

    Each k beyond the smallest is also warm-started from the previous
    solution's centroids plus the farthest points from them, so its wgss
    can never exceed the previous one.
    """
    k_values = sorted(set(int(k) for k in k_range))
    if not k_values:
        raise ContractError("k_range must be non-empty")
    points = np.asarray(points, dtype=float)
    out = []
    prev = None
    for k in k_values:
        init = None
        if prev is not None:
            init = prev.centroids
            while len(init) < k:
                d2 = _sq_dists(points, init).min(axis=1)
                init = np.vstack([init, points[int(np.argmax(d2))]])
        res = kmeans(points, k, seed=seed, restarts=restarts, init=init)
        out.append((k, res.wgss))
        prev = res
    return out
