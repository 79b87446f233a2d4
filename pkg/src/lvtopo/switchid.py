"""Switch-bar state identification.

Each admissible combination of switch positions on a bar is one class. A
snapshot row (the selected meters' voltages at one timestep) is classified
by a random forest grown here from scratch; Gaussian naive Bayes is the
cheap baseline.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lvtopo.errors import DataError
from lvtopo.model import SwitchBar

MODEL_FORMAT_VERSION = 1


def encode_state(bar: SwitchBar, ss) -> int:
    return bar.encode(ss)


def decode_state(bar: SwitchBar, label: int) -> tuple[int, ...]:
    return bar.decode(label)


# ---------------------------------------------------------------------------
# Decision trees
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForestConfig:
    tree_count: int = 100
    max_depth: int | None = 16
    min_leaf: int = 2
    features_per_split: int | str = "sqrt"
    rng_seed: int = 0

    def n_split_features(self, n_features: int) -> int:
        if self.features_per_split == "sqrt":
            return max(1, int(math.isqrt(n_features)))
        k = int(self.features_per_split)
        if not 1 <= k <= n_features:
            raise DataError(f"features_per_split={k} not in 1..{n_features}")
        return k


@dataclass
class Tree:
    """Flat binary tree. ``feature[i] == -1`` marks a leaf; a row goes left
    when ``x[feature] <= threshold``. ``value[i]`` holds class counts."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            r = rows[inner]
            nd = node[inner]
            go_left = X[r, f[inner]] <= self.threshold[nd]
            node[inner] = np.where(go_left, self.left[nd], self.right[nd])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.value[self.apply(X)], axis=1)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Tree:
        return cls(
            feature=np.array(d["feature"], dtype=np.int64),
            threshold=np.array(d["threshold"], dtype=float),
            left=np.array(d["left"], dtype=np.int64),
            right=np.array(d["right"], dtype=np.int64),
            value=np.array(d["value"], dtype=float),
        )


def _best_split(X, onehot, idx, feats, min_leaf):
    """Lowest weighted Gini over ``feats``; returns (gain, feature, threshold) or None."""
    n = idx.size
    Xs = X[np.ix_(idx, feats)]
    order = np.argsort(Xs, axis=0, kind="stable")
    xs = np.take_along_axis(Xs, order, axis=0)
    Y = onehot[idx][order]                      # (n, f, J)
    left = np.cumsum(Y, axis=0)[:-1]           # split after position i
    total = left[-1] + Y[-1] if n > 1 else Y[0]
    right = total[None] - left
    nl = np.arange(1, n, dtype=float)[:, None]
    nr = n - nl
    # n * weighted Gini = n - score, so the best split maximises score
    score = (left * left).sum(axis=2) / nl + (right * right).sum(axis=2) / nr
    ok = xs[:-1] < xs[1:]
    ok &= (nl >= min_leaf) & (nr >= min_leaf)
    if not ok.any():
        return None
    score = np.where(ok, score, -np.inf)
    flat = int(np.argmax(score))               # first maximum: row-major (position, feature)
    pos, fi = divmod(flat, len(feats))
    parent = 1.0 - float((total[0] * total[0]).sum()) / (n * n)
    lo, hi = xs[pos, fi], xs[pos + 1, fi]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return parent - (1.0 - score[pos, fi] / n), int(feats[fi]), float(thr)


def grow_tree(X, y, n_classes, cfg: ForestConfig, rng: np.random.Generator,
              importance: np.ndarray | None = None) -> Tree:
    n, p = X.shape
    k = cfg.n_split_features(p)
    onehot = np.eye(n_classes)[y]
    max_depth = math.inf if cfg.max_depth is None else cfg.max_depth
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(onehot[idx].sum(axis=0))
        return len(feature) - 1

    root = new_node(np.arange(n))
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        counts = value[node]
        if depth >= max_depth or idx.size < 2 * cfg.min_leaf or np.count_nonzero(counts) <= 1:
            continue
        feats = rng.choice(p, size=k, replace=False)
        split = _best_split(X, onehot, idx, np.sort(feats), cfg.min_leaf)
        if split is None:
            continue
        gain, f, thr = split
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node] = f
        threshold[node] = thr
        if importance is not None:
            importance[f] += gain * idx.size / n
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=float),
    )


# ---------------------------------------------------------------------------
# Forest
# ---------------------------------------------------------------------------


@dataclass
class TrainedForest:
    trees: list[Tree]
    class_catalog: list[int]
    feature_importance: np.ndarray
    feature_means: np.ndarray
    oob_score: float | None = None
    config: ForestConfig = field(default_factory=ForestConfig)

    @property
    def n_features(self) -> int:
        return self.feature_means.size

    def _prepare(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DataError(f"row width {X.shape[1]} != training width {self.n_features}")
        return np.where(np.isnan(X), self.feature_means, X)

    def votes(self, X) -> np.ndarray:
        X = self._prepare(X)
        counts = np.zeros((X.shape[0], len(self.class_catalog)))
        rows = np.arange(X.shape[0])
        for tree in self.trees:
            np.add.at(counts, (rows, tree.predict(X)), 1)
        return counts

    def predict_proba(self, X) -> np.ndarray:
        return self.votes(X) / len(self.trees)

    def predict(self, X) -> np.ndarray:
        # argmax returns the first maximum: ties go to the lowest class index
        idx = np.argmax(self.votes(X), axis=1)
        return np.asarray(self.class_catalog)[idx]

    def save(self, path) -> None:
        doc = {
            "format": "lvtopo-forest",
            "version": MODEL_FORMAT_VERSION,
            "class_catalog": list(map(int, self.class_catalog)),
            "feature_means": self.feature_means.tolist(),
            "feature_importance": self.feature_importance.tolist(),
            "oob_score": self.oob_score,
            "config": {
                "tree_count": self.config.tree_count,
                "max_depth": self.config.max_depth,
                "min_leaf": self.config.min_leaf,
                "features_per_split": self.config.features_per_split,
                "rng_seed": self.config.rng_seed,
            },
            "trees": [t.to_dict() for t in self.trees],
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path) -> TrainedForest:
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != "lvtopo-forest" or doc.get("version") != MODEL_FORMAT_VERSION:
            raise DataError(f"{path}: not a version-{MODEL_FORMAT_VERSION} forest file")
        return cls(
            trees=[Tree.from_dict(t) for t in doc["trees"]],
            class_catalog=doc["class_catalog"],
            feature_importance=np.array(doc["feature_importance"]),
            feature_means=np.array(doc["feature_means"]),
            oob_score=doc["oob_score"],
            config=ForestConfig(**doc["config"]),
        )


def _canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row order determined by content hashes, independent of input order."""
    keys = []
    for i in range(X.shape[0]):
        h = hashlib.blake2b(X[i].tobytes() + int(y[i]).to_bytes(8, "little", signed=True),
                            digest_size=16).digest()
        keys.append(h)
    return np.array(sorted(range(len(keys)), key=keys.__getitem__))


def _impute_means(X: np.ndarray) -> np.ndarray:
    obs = ~np.isnan(X)
    cnt = obs.sum(axis=0)
    sums = np.where(obs, X, 0.0).sum(axis=0)
    return np.where(cnt > 0, sums / np.maximum(cnt, 1), 0.0)


def train_forest(V_train, labels, cfg: ForestConfig | None = None) -> TrainedForest:
    """Grow ``cfg.tree_count`` trees on bootstrap resamples.

    NaN cells are replaced by the training mean of their feature, here and
    at prediction time.
    """
    cfg = cfg or ForestConfig()
    X = np.asarray(V_train, dtype=float)
    y_raw = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] != y_raw.shape[0]:
        raise DataError("V_train must be 2-D with one label per row")
    catalog = sorted(set(int(v) for v in y_raw.tolist()))
    if len(catalog) < 2:
        raise DataError("need at least two distinct classes to train a classifier")
    means = _impute_means(X)
    X = np.where(np.isnan(X), means, X)
    y = np.searchsorted(catalog, y_raw.astype(int))
    order = _canonical_order(X, y)
    X, y = X[order], y[order]
    n = X.shape[0]
    J = len(catalog)
    importance = np.zeros(X.shape[1])
    trees = []
    oob_votes = np.zeros((n, J))
    for b in range(cfg.tree_count):
        rng = np.random.default_rng(cfg.rng_seed ^ b)
        boot = rng.integers(0, n, size=n)
        tree = grow_tree(X[boot], y[boot], J, cfg, rng, importance)
        trees.append(tree)
        oob = np.setdiff1d(np.arange(n), boot)
        if oob.size:
            np.add.at(oob_votes, (oob, tree.predict(X[oob])), 1)
    seen = oob_votes.sum(axis=1) > 0
    oob_score = float(np.mean(np.argmax(oob_votes[seen], axis=1) == y[seen])) if seen.any() else None
    total = importance.sum()
    importance = importance / total if total > 0 else importance
    return TrainedForest(trees=trees, class_catalog=catalog, feature_importance=importance,
                         feature_means=means, oob_score=oob_score, config=cfg)


def predict_forest(forest: TrainedForest, row) -> tuple[int, np.ndarray]:
    """Majority label for one row and the per-class vote shares."""
    row = np.asarray(row, dtype=float)
    if row.ndim != 1:
        raise DataError("predict_forest takes a single row")
    dist = forest.predict_proba(row[None])[0]
    return int(forest.class_catalog[int(np.argmax(dist))]), dist


# ---------------------------------------------------------------------------
# Gaussian naive Bayes baseline
# ---------------------------------------------------------------------------

VAR_FLOOR = 1e-9


@dataclass
class GNBModel:
    class_catalog: list[int]
    log_prior: np.ndarray
    mean: np.ndarray      # (J, p)
    var: np.ndarray       # (J, p)
    feature_means: np.ndarray

    def log_posterior(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.mean.shape[1]:
            raise DataError(f"row width {X.shape[1]} != training width {self.mean.shape[1]}")
        X = np.where(np.isnan(X), self.feature_means, X)
        diff = X[:, None, :] - self.mean[None]
        ll = -0.5 * np.sum(np.log(2 * np.pi * self.var)[None] + diff * diff / self.var[None], axis=2)
        return ll + self.log_prior[None]

    def predict(self, X) -> np.ndarray:
        return np.asarray(self.class_catalog)[np.argmax(self.log_posterior(X), axis=1)]


def train_gnb(V_train, labels) -> GNBModel:
    X = np.asarray(V_train, dtype=float)
    y = np.asarray(labels).astype(int)
    catalog = sorted(set(y.tolist()))
    if len(catalog) < 2:
        raise DataError("need at least two distinct classes to train a classifier")
    means = _impute_means(X)
    X = np.where(np.isnan(X), means, X)
    mu = np.array([X[y == c].mean(axis=0) for c in catalog])
    var = np.array([X[y == c].var(axis=0) for c in catalog])
    var = np.maximum(var, VAR_FLOOR)
    prior = np.array([np.mean(y == c) for c in catalog])
    return GNBModel(class_catalog=catalog, log_prior=np.log(prior), mean=mu, var=var,
                    feature_means=means)


def predict_gnb(model: GNBModel, row) -> int:
    return int(model.predict(np.asarray(row, dtype=float)[None])[0])
