"""Random forest of Gini decision trees.

Trees are grown breadth-first on bootstrap samples.  Each node scans a
random ordering of the features, skips those constant within the node,
and scores the first ``features_per_split`` remaining ones.  The ordering
comes from hashing a per-node key, so a node's randomness depends only on
(seed, tree index, path from the root) and never on construction order.

Two growers produce identical trees on 0/1 feature matrices: a level-wise
grower that handles every tree at once with sparse count products, and a
per-node grower for arbitrary real-valued features.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse

from .seeding import derive_seed, splitmix64
from .tables import FeatureTable

SCHEMA = "mgmtpred.forest/1"
_GAIN_TOL = 1e-12
_NO_PRIORITY = np.iinfo(np.uint64).max
_SIDE = (np.uint64(0x632BE59BD9B4E019), np.uint64(0x8CB92BA72F3D8DD7))
_FEATURE_SALT = np.uint64(0xD6E8FEB86659FD93)


@dataclass(frozen=True)
class ForestParams:
    """Forest hyperparameters.

    ``max_depth`` counts edges from the root to the deepest leaf; 0 means
    unlimited.  ``min_samples_split`` counts bootstrap draws in the node.
    ``max_features`` of None means floor(sqrt(d)), at least 1.
    """

    n_trees: int = 100
    max_depth: int = 4
    min_samples_split: int = 2
    seed: int = 0
    max_features: int | None = None

    def __post_init__(self):
        if int(self.n_trees) < 1:
            raise ValueError("n_trees must be >= 1")
        if int(self.max_depth) < 0:
            raise ValueError("max_depth must be >= 0 (0 = unlimited)")
        if int(self.min_samples_split) < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.max_features is not None and int(self.max_features) < 1:
            raise ValueError("max_features must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit nonnegative integer")

    def features_per_split(self, n_features: int) -> int:
        k = max(1, math.isqrt(n_features)) if self.max_features is None else int(self.max_features)
        return min(k, n_features)

    @property
    def depth_limit(self) -> float:
        return math.inf if self.max_depth == 0 else self.max_depth


@dataclass(frozen=True)
class Tree:
    """Flattened binary tree in breadth-first order; node 0 is the root.

    Internal node k sends x to ``left[k]`` when x[feature[k]] <= threshold[k],
    else to ``right[k]``.  Leaves have feature -1.  ``value[k]`` holds the
    (class 0, class 1) bootstrap counts reaching node k.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        for name, dtype in (("feature", np.int64), ("threshold", np.float64), ("left", np.int64),
                            ("right", np.int64), ("value", np.int64)):
            arr = np.array(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "value", self.value.reshape(-1, 2))

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def depths(self) -> np.ndarray:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for k in range(self.n_nodes):
            if self.feature[k] >= 0:
                depth[self.left[k]] = depth[self.right[k]] = depth[k] + 1
        return depth

    @property
    def leaf_class(self) -> np.ndarray:
        # ties go to class 0
        return (self.value[:, 1] > self.value[:, 0]).astype(np.int64)

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return self.leaf_class[node]
            go_left = X[rows, np.where(inner, f, 0)] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[Tree, ...]
    params: ForestParams
    feature_names: tuple[str, ...]

    def __post_init__(self):
        if len(self.trees) < 1:
            raise ValueError("a forest needs at least one tree")
        object.__setattr__(self, "trees", tuple(self.trees))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def _matrix(self, X) -> np.ndarray:
        if isinstance(X, FeatureTable):
            absent = [n for n in self.feature_names if n not in X.feature_names]
            if absent:
                raise KeyError(f"missing feature(s) for prediction: {absent[:5]}")
            return X.select_features(self.feature_names).values
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise ValueError(f"expected a matrix with {len(self.feature_names)} columns")
        return X

    def votes(self, X) -> np.ndarray:
        """(n_trees, n_samples) matrix of 0/1 tree votes."""
        X = self._matrix(X)
        return np.vstack([t.predict(X) for t in self.trees])

    def predict_proba(self, X) -> np.ndarray:
        """Fraction of trees voting 1, per sample."""
        return self.votes(X).mean(axis=0)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "params": asdict(self.params),
            "feature_names": list(self.feature_names),
            "trees": [t.to_dict() for t in self.trees],
        }

    def to_json(self) -> str:
        # Python's float repr round-trips, so thresholds survive exactly
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: Mapping) -> "ForestModel":
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported forest schema {d.get('schema')!r}")
        trees = tuple(Tree(**t) for t in d["trees"])
        return cls(trees, ForestParams(**d["params"]), tuple(d["feature_names"]))

    @classmethod
    def from_json(cls, text: str) -> "ForestModel":
        return cls.from_dict(json.loads(text))


def predict_forest(model: ForestModel, x) -> tuple[int, float]:
    """(class, probability) for one subject given as a name->value mapping or aligned vector."""
    if isinstance(x, Mapping):
        absent = [n for n in model.feature_names if n not in x]
        if absent:
            raise KeyError(f"missing feature(s): {absent[:5]}")
        x = [x[n] for n in model.feature_names]
    proba = float(model.predict_proba(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])
    return int(proba >= 0.5), proba


# --- growing -------------------------------------------------------------------------


def _split_score(l0, l1, r0, r1):
    """Sum over children of (c0^2 + c1^2) / n_child.

    Maximizing this minimizes the size-weighted child Gini impurity.
    Inputs are integer counts; every grower evaluates this same expression.
    """
    nl = l0 + l1
    nr = r0 + r1
    with np.errstate(divide="ignore", invalid="ignore"):
        return (l0 * l0 + l1 * l1) / nl + (r0 * r0 + r1 * r1) / nr


def _parent_score(n0, n1):
    return (n0 * n0 + n1 * n1) / (n0 + n1)


def _feature_keys(d: int) -> np.ndarray:
    return splitmix64(np.arange(d, dtype=np.uint64) ^ _FEATURE_SALT)


def _child_keys(keys: np.ndarray, side: int) -> np.ndarray:
    return splitmix64(keys ^ _SIDE[side])


def _candidate_mask(keys: np.ndarray, nonconstant: np.ndarray, k: int) -> np.ndarray:
    """First ``k`` non-constant features of each node's hashed feature ordering."""
    feat_keys = _feature_keys(nonconstant.shape[1])
    priority = splitmix64(keys[:, None] ^ feat_keys[None, :])
    priority = np.where(nonconstant, priority, _NO_PRIORITY)
    order = np.argsort(priority, axis=1, kind="stable")[:, :k]
    mask = np.zeros(nonconstant.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask & nonconstant


def _bootstrap_counts(n: int, params: ForestParams) -> tuple[np.ndarray, np.ndarray]:
    """(n_trees, n) draw counts and the root key of every tree."""
    counts = np.empty((params.n_trees, n), dtype=np.int64)
    roots = np.empty(params.n_trees, dtype=np.uint64)
    for t in range(params.n_trees):
        s = derive_seed(params.seed, "tree", t)
        counts[t] = np.bincount(np.random.default_rng(s).integers(0, n, size=n), minlength=n)
        roots[t] = s
    return counts, splitmix64(roots)


def _grow_binary(X: np.ndarray, y: np.ndarray, params: ForestParams) -> list[Tree]:
    """Level-wise growth of all trees at once for X with entries in {0, 1}."""
    n, d = X.shape
    T = params.n_trees
    k = params.features_per_split(d)
    weights, keys = _bootstrap_counts(n, params)
    Xy = X * y[:, None]
    ycol = y.astype(np.float64)

    # current level: node i belongs to tree node_tree[i] at position node_pos[i]
    node_tree = np.arange(T)
    node_pos = np.zeros(T, dtype=np.int64)
    assign = np.where(weights > 0, np.arange(T)[:, None], -1)
    tree_size = np.ones(T, dtype=np.int64)
    depth = 0
    out = []  # per level: (tree, pos, feature, left, right, n0, n1)

    while node_tree.size:
        M = node_tree.size
        t_idx, s_idx = np.nonzero(assign >= 0)
        S = sparse.csr_matrix(
            (weights[t_idx, s_idx].astype(np.float64), (assign[t_idx, s_idx], s_idx)), shape=(M, n)
        )
        tot = np.rint(np.asarray(S.sum(axis=1)).ravel()).astype(np.int64)
        n1 = np.rint(S @ ycol).astype(np.int64)
        n0 = tot - n1
        r = np.rint(S @ X).astype(np.int64)
        r1 = np.rint(S @ Xy).astype(np.int64)
        r0 = r - r1
        l0 = n0[:, None] - r0
        l1 = n1[:, None] - r1
        nonconstant = (r > 0) & (r < tot[:, None])
        cand = _candidate_mask(keys, nonconstant, k)
        score = np.where(cand, _split_score(l0, l1, r0, r1), -np.inf)
        best = np.argmax(score, axis=1)
        best_score = score[np.arange(M), best]
        split = (
            (depth < params.depth_limit)
            & (tot >= params.min_samples_split)
            & cand.any(axis=1)
            & (best_score - _parent_score(n0, n1) > _GAIN_TOL * tot)
        )
        # children positions: consecutive per tree, in level order
        rank = np.zeros(M, dtype=np.int64)
        if split.any():
            # nodes of one tree are contiguous within a level
            starts = np.searchsorted(node_tree, node_tree, side="left")
            csum = np.cumsum(split) - split
            rank = csum - csum[starts]
        left = np.where(split, tree_size[node_tree] + 2 * rank, -1)
        right = np.where(split, left + 1, -1)
        feat = np.where(split, best, -1)
        out.append((node_tree, node_pos, feat, left, right, n0, n1))
        np.add.at(tree_size, node_tree, 2 * split)

        # next level
        child = np.full(M, -1, dtype=np.int64)
        child[split] = np.arange(2 * int(split.sum()), step=2)
        a = assign[t_idx, s_idx]
        goes_right = X[s_idx, np.maximum(feat[a], 0)] > 0.5
        new = np.where(split[a], child[a] + goes_right, -1)
        assign = np.full_like(assign, -1)
        assign[t_idx, s_idx] = new
        parents = np.flatnonzero(split)
        node_tree = np.repeat(node_tree[parents], 2)
        node_pos = np.column_stack([left[parents], right[parents]]).ravel()
        keys = np.column_stack([_child_keys(keys[parents], 0), _child_keys(keys[parents], 1)]).ravel()
        depth += 1

    cols = [np.concatenate(c) for c in zip(*out)]
    tree_of, pos, feat, left, right, n0, n1 = cols
    order = np.lexsort((pos, tree_of))
    bounds = np.searchsorted(tree_of[order], np.arange(T + 1))
    trees = []
    for t in range(T):
        sel = order[bounds[t]:bounds[t + 1]]
        f = feat[sel]
        trees.append(Tree(f, np.where(f >= 0, 0.5, 0.0), left[sel], right[sel], np.column_stack([n0[sel], n1[sel]])))
    return trees


def _best_threshold_split(values: np.ndarray, w: np.ndarray, y: np.ndarray):
    """Best (score, threshold) over midpoints of a node's sorted distinct values."""
    uniq, inv = np.unique(values, return_inverse=True)
    c1 = np.bincount(inv, weights=w * y).astype(np.int64)
    c0 = np.bincount(inv, weights=w * (1 - y)).astype(np.int64)
    l0, l1 = np.cumsum(c0)[:-1], np.cumsum(c1)[:-1]
    r0, r1 = c0.sum() - l0, c1.sum() - l1
    score = _split_score(l0, l1, r0, r1)
    j = int(np.argmax(score))
    lo, hi = uniq[j], uniq[j + 1]
    thr = lo / 2.0 + hi / 2.0
    return float(score[j]), float(lo if thr >= hi else thr)


def _grow_general(X: np.ndarray, y: np.ndarray, params: ForestParams) -> list[Tree]:
    """Breadth-first growth of one tree at a time for arbitrary real features."""
    n, d = X.shape
    k = params.features_per_split(d)
    weights, roots = _bootstrap_counts(n, params)
    trees = []
    for t in range(params.n_trees):
        idx0 = np.flatnonzero(weights[t])
        nodes = []  # [feature, threshold, left, right, n0, n1]
        queue = [(idx0, roots[t : t + 1], 0)]
        head = 0
        while head < len(queue):
            idx, key, depth = queue[head]
            head += 1
            w = weights[t, idx]
            yy = y[idx]
            n1 = int(np.sum(w * yy))
            n0 = int(np.sum(w)) - n1
            sub = X[idx]
            nonconstant = (sub.min(axis=0) < sub.max(axis=0))[None, :]
            cand = np.flatnonzero(_candidate_mask(key, nonconstant, k)[0])
            best = (-np.inf, -1, 0.0)
            for f in cand:  # ascending, so ties keep the lowest index
                score, thr = _best_threshold_split(sub[:, f], w, yy)
                if score > best[0]:
                    best = (score, int(f), thr)
            score, f, thr = best
            tot = n0 + n1
            do_split = (
                depth < params.depth_limit
                and tot >= params.min_samples_split
                and cand.size > 0
                and score - _parent_score(np.int64(n0), np.int64(n1)) > _GAIN_TOL * tot
            )
            if do_split:
                go_left = sub[:, f] <= thr
                left = len(queue)
                queue.append((idx[go_left], _child_keys(key, 0), depth + 1))
                queue.append((idx[~go_left], _child_keys(key, 1), depth + 1))
                nodes.append((f, thr, left, left + 1, n0, n1))
            else:
                nodes.append((-1, 0.0, -1, -1, n0, n1))
        f, thr, left, right, n0, n1 = zip(*nodes)
        trees.append(Tree(f, thr, left, right, np.column_stack([n0, n1])))
    return trees


def _is_binary(X: np.ndarray) -> bool:
    return bool(np.all((X == 0.0) | (X == 1.0)))


def fit_forest(X, y, params: ForestParams = ForestParams(), feature_names: Sequence[str] | None = None,
               method: str = "auto") -> ForestModel:
    """Fit a forest on a FeatureTable (or matrix plus ``feature_names``).

    ``method`` is "auto", "binary" (level-wise grower, 0/1 features only)
    or "general".
    """
    if isinstance(X, FeatureTable):
        feature_names = X.feature_names
        X = X.values
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2:
        raise ValueError("X must be 2D")
    if feature_names is None:
        feature_names = tuple(f"x{j}" for j in range(X.shape[1]))
    if len(feature_names) != X.shape[1]:
        raise ValueError("feature_names length does not match X")
    if X.shape[1] == 0:
        raise ValueError("no features to train on; consider a larger p_min")
    if X.shape[0] < 2 or y.shape != (X.shape[0],):
        raise ValueError("need at least two subjects and one label per subject")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    if np.unique(y).size < 2:
        raise ValueError("both classes must be present to train")
    y = y.astype(np.int64)
    if method == "auto":
        method = "binary" if _is_binary(X) else "general"
    if method == "binary":
        if not _is_binary(X):
            raise ValueError("binary grower requires 0/1 features")
        trees = _grow_binary(X, y, params)
    elif method == "general":
        trees = _grow_general(X, y, params)
    else:
        raise ValueError(f"unknown method {method!r}")
    return ForestModel(tuple(trees), params, tuple(feature_names))


# --- hyperparameter search -----------------------------------------------------------

DEFAULT_GRID = {"max_depth": (2, 3, 4, 6, 8, 0), "min_samples_split": (2, 4, 8, 16)}


@dataclass(frozen=True)
class GridResult:
    best: ForestParams
    scores: tuple[tuple[int, int, float], ...]  # (max_depth, min_samples_split, auc)


def _grid_order(point):
    depth, mss = point
    return (math.inf if depth == 0 else depth, mss)


def grid_search(X: FeatureTable, y, grid: Mapping = DEFAULT_GRID, base: ForestParams = ForestParams(),
                h: int = 5, repeats: int = 1, seed: int = 0, workers: int = 1) -> GridResult:
    """Pick the grid point with the highest cross-validated AUC.

    Ties go to the smaller max_depth (0 counts as unlimited, i.e. largest),
    then to the smaller min_samples_split.
    """
    from .evaluation import repeated_cv

    points = sorted(itertools.product(grid["max_depth"], grid["min_samples_split"]), key=_grid_order)
    if not points:
        raise ValueError("empty grid")
    scores = []
    best, best_auc = None, -math.inf
    for depth, mss in points:
        params = ForestParams(base.n_trees, depth, mss, base.seed, base.max_features)
        report = repeated_cv(X, y, params, h, repeats, seed, workers=workers)
        scores.append((depth, mss, report.auc))
        if report.auc > best_auc:
            best, best_auc = params, report.auc
    return GridResult(best, tuple(scores))
