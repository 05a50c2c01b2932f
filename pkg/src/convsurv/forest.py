"""Random survival forest with log-rank splitting and Nelson-Aalen leaves.

Trees are grown on bootstrap resamples of conversation-level covariates. At
each node ``mtry`` covariates are drawn at random and the split maximizing
the two-sample log-rank statistic is kept. Forest predictions average the
leaf cumulative hazards.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import ConversationRecord, outcome_arrays
from .errors import ConvSurvWarning, InvalidInput, SchemaMismatch
from .features import FeatureSchema
from .nonparam import CumulativeHazardCurve, SurvivalCurve, logrank_statistic, nelson_aalen

TREE_GRID = (200, 500, 1000)
DEPTH_GRID = (4, 6, 8, None)


def _event_tables(times: np.ndarray, events: np.ndarray, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    grid = np.arange(1, horizon + 1)
    at_risk = (times[:, None] >= grid[None, :]).astype(float)
    died = ((times[:, None] == grid[None, :]) & events[:, None]).astype(float)
    return at_risk, died


def best_logrank_split(
    X: np.ndarray,
    times,
    events,
    candidates: Sequence[int] | None = None,
    min_leaf_events: int = 5,
    horizon: int | None = None,
) -> tuple[int, float, float] | None:
    """Best ``(covariate, threshold, statistic)`` over candidate covariates.

    Thresholds are midpoints between consecutive distinct values; the left
    child takes ``x <= threshold``. Splits leaving fewer than
    ``min_leaf_events`` events on either side are not considered.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    times = np.asarray(times, dtype=int)
    events = np.asarray(events, dtype=bool)
    if candidates is None:
        candidates = range(X.shape[1])
    H = int(times.max()) if horizon is None else horizon
    at_risk, died = _event_tables(times, events, H)
    n_t = at_risk.sum(axis=0)
    d_t = died.sum(axis=0)
    total_events = int(events.sum())
    best = None
    for j in candidates:
        x = X[:, j]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        distinct = xs[1:] > xs[:-1]
        if not distinct.any():
            continue
        left_n = np.cumsum(at_risk[order], axis=0)[:-1]
        left_d = np.cumsum(died[order], axis=0)[:-1]
        left_events = np.cumsum(events[order])[:-1]
        ok = distinct & (left_events >= min_leaf_events) & (total_events - left_events >= min_leaf_events)
        if not ok.any():
            continue
        k = np.nonzero(ok)[0]
        stat = logrank_statistic(left_n[k], left_d[k], n_t, d_t)
        i = int(np.argmax(stat))
        if best is None or stat[i] > best[2]:
            pos = k[i]
            best = (int(j), float(0.5 * (xs[pos] + xs[pos + 1])), float(stat[i]))
    return best


@dataclass(eq=False)
class SurvivalTree:
    """Flattened binary tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf: np.ndarray  # row into ``chf`` for leaves, -1 otherwise
    chf: np.ndarray  # (n_leaves, H + 1)
    leaf_events: np.ndarray
    min_leaf_events: int

    @property
    def depth(self) -> int:
        depth = np.zeros(self.feature.size, dtype=int)
        for node in range(self.feature.size):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[node] + 1
                depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf row reached by each covariate vector."""
        node = np.zeros(X.shape[0], dtype=int)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                break
            idx = np.nonzero(inner)[0]
            go_left = X[idx, f[idx]] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
        return self.leaf[node]

    def to_json(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "leaf": self.leaf.tolist(),
            "chf": self.chf.tolist(),
            "leaf_events": self.leaf_events.tolist(),
            "min_leaf_events": self.min_leaf_events,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SurvivalTree":
        return cls(
            feature=np.array(obj["feature"], dtype=int),
            threshold=np.array(obj["threshold"], dtype=float),
            left=np.array(obj["left"], dtype=int),
            right=np.array(obj["right"], dtype=int),
            leaf=np.array(obj["leaf"], dtype=int),
            chf=np.array(obj["chf"], dtype=float),
            leaf_events=np.array(obj["leaf_events"], dtype=int),
            min_leaf_events=int(obj["min_leaf_events"]),
        )


def grow_tree(
    X: np.ndarray,
    times: np.ndarray,
    events: np.ndarray,
    horizon: int,
    rng: np.random.Generator,
    mtry: int,
    max_depth: int | None,
    min_leaf_events: int,
) -> SurvivalTree:
    p = X.shape[1]
    feature, threshold, left, right, leaf = [], [], [], [], []
    chfs, leaf_events = [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        leaf.append(-1)
        return len(feature) - 1

    stack = [(new_node(), np.arange(X.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        n_events = int(events[idx].sum())
        split = None
        if (max_depth is None or depth < max_depth) and n_events >= 2 * min_leaf_events:
            cand = np.sort(rng.choice(p, size=mtry, replace=False))
            split = best_logrank_split(X[idx], times[idx], events[idx], cand, min_leaf_events, horizon)
        if split is None:
            leaf[node] = len(chfs)
            chfs.append(nelson_aalen((times[idx], events[idx]), horizon).chf)
            leaf_events.append(n_events)
            continue
        j, thr, _ = split
        mask = X[idx, j] <= thr
        lnode, rnode = new_node(), new_node()
        feature[node], threshold[node], left[node], right[node] = j, thr, lnode, rnode
        # right pushed first so the left subtree is numbered first
        stack.append((rnode, idx[~mask], depth + 1))
        stack.append((lnode, idx[mask], depth + 1))
    return SurvivalTree(
        feature=np.array(feature, dtype=int),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=int),
        right=np.array(right, dtype=int),
        leaf=np.array(leaf, dtype=int),
        chf=np.array(chfs, dtype=float),
        leaf_events=np.array(leaf_events, dtype=int),
        min_leaf_events=min_leaf_events,
    )


@dataclass(eq=False)
class ForestFit:
    trees: list[SurvivalTree]
    n_trees: int
    max_depth: int | None
    mtry: int
    min_leaf_events: int
    seed: int
    horizon: int
    n_features: int
    schema: FeatureSchema | None = None
    inbag: np.ndarray | None = None  # (n_trees, n_train) bootstrap counts; not serialized
    kind = "rsf"

    @property
    def n_covariates(self) -> int:
        return self.n_features

    def predict_chf_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise SchemaMismatch(f"expected {self.n_features} covariates, got {X.shape[1]}")
        total = np.zeros((X.shape[0], self.horizon + 1))
        for tree in self.trees:
            total += tree.chf[tree.apply(X)]
        return total / len(self.trees)

    def oob_chf(self, X_train: np.ndarray) -> np.ndarray:
        """Out-of-bag cumulative hazards for the training rows (NaN if never out of bag)."""
        if self.inbag is None:
            raise InvalidInput("forest was not fitted in this session; in-bag counts unavailable")
        X_train = np.atleast_2d(np.asarray(X_train, dtype=float))
        total = np.zeros((X_train.shape[0], self.horizon + 1))
        count = np.zeros(X_train.shape[0])
        for tree, bag in zip(self.trees, self.inbag):
            out = bag == 0
            if out.any():
                total[out] += tree.chf[tree.apply(X_train[out])]
                count[out] += 1
        with np.errstate(invalid="ignore", divide="ignore"):
            return total / count[:, None]

    def _z(self, conv: ConversationRecord, upto: int | None) -> np.ndarray:
        if self.schema is None:
            raise SchemaMismatch("fit carries no feature schema")
        return self.schema.summary_vector(conv, upto)

    def predict_survival(self, conv: ConversationRecord, upto: int | None = None) -> SurvivalCurve:
        return rsf_predict_chf(self, self._z(conv, upto)).survival()

    def predict_log_survival(self, conv: ConversationRecord, upto: int | None = None) -> np.ndarray:
        return -self.predict_chf_matrix(self._z(conv, upto)[None, :])[0]

    def risk_score(self, conv: ConversationRecord) -> float:
        """Ensemble mortality: predicted cumulative hazard summed over the grid."""
        return float(self.predict_chf_matrix(self._z(conv, None)[None, :])[0].sum())

    def to_json(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "mtry": self.mtry,
            "min_leaf_events": self.min_leaf_events,
            "seed": self.seed,
            "horizon": self.horizon,
            "n_features": self.n_features,
            "trees": [t.to_json() for t in self.trees],
            "schema": None if self.schema is None else self.schema.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ForestFit":
        return cls(
            trees=[SurvivalTree.from_json(t) for t in obj["trees"]],
            n_trees=int(obj["n_trees"]),
            max_depth=obj["max_depth"],
            mtry=int(obj["mtry"]),
            min_leaf_events=int(obj["min_leaf_events"]),
            seed=int(obj["seed"]),
            horizon=int(obj["horizon"]),
            n_features=int(obj["n_features"]),
            schema=None if obj.get("schema") is None else FeatureSchema.from_json(obj["schema"]),
        )


def default_mtry(p: int) -> int:
    return max(1, int(math.isqrt(p)))


def fit_rsf_matrix(
    X: np.ndarray,
    times,
    events,
    n_trees: int = 500,
    max_depth: int | None = 8,
    mtry: int | None = None,
    min_leaf_events: int = 5,
    seed: int = 0,
    horizon: int | None = None,
    schema: FeatureSchema | None = None,
) -> ForestFit:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    times = np.asarray(times, dtype=int)
    events = np.asarray(events, dtype=bool)
    n, p = X.shape
    if not events.any():
        raise InvalidInput("random survival forest needs at least one event")
    if n_trees < 1:
        raise InvalidInput("n_trees must be at least 1")
    if mtry is None:
        mtry = default_mtry(p)
    if not 1 <= mtry <= p:
        raise InvalidInput(f"mtry must lie in [1, {p}], got {mtry}")
    off_grid = []
    if n_trees not in TREE_GRID:
        off_grid.append(f"n_trees={n_trees}")
    if max_depth not in DEPTH_GRID:
        off_grid.append(f"max_depth={max_depth}")
    if mtry not in {default_mtry(p), max(1, p // 3), max(1, p // 2)}:
        off_grid.append(f"mtry={mtry}")
    if off_grid:
        warnings.warn(f"RSF parameters outside the default search grid: {', '.join(off_grid)}", ConvSurvWarning, stacklevel=2)
    H = int(times.max()) if horizon is None else int(horizon)

    trees = []
    inbag = np.zeros((n_trees, n), dtype=np.int32)
    # one child seed per tree: results do not depend on execution order
    for b, child in enumerate(np.random.SeedSequence(seed).spawn(n_trees)):
        rng = np.random.default_rng(child)
        boot = rng.integers(0, n, size=n)
        inbag[b] = np.bincount(boot, minlength=n)
        trees.append(grow_tree(X[boot], times[boot], events[boot], H, rng, mtry, max_depth, min_leaf_events))
    return ForestFit(trees, n_trees, max_depth, mtry, min_leaf_events, seed, H, p, schema, inbag)


def fit_rsf(
    dataset: Sequence[ConversationRecord],
    n_trees: int = 500,
    max_depth: int | None = 8,
    mtry: int | None = None,
    min_leaf_events: int = 5,
    seed: int = 0,
    use_interactions: bool = False,
    schema: FeatureSchema | None = None,
) -> ForestFit:
    """Fit a forest on the conversation-level summary covariates."""
    if schema is None:
        schema = FeatureSchema.fit(dataset, level="summary", interactions="nonref" if use_interactions else None)
    X = schema.summary_matrix(dataset)
    times, events = outcome_arrays(dataset)
    return fit_rsf_matrix(X, times, events, n_trees, max_depth, mtry, min_leaf_events, seed, schema.horizon, schema)


def rsf_predict_chf(forest: ForestFit, covariates) -> CumulativeHazardCurve:
    """Pointwise mean of the leaf cumulative hazards reached across trees."""
    return CumulativeHazardCurve(None, forest.predict_chf_matrix(np.asarray(covariates, dtype=float)[None, :])[0])
