"""Random forest of Gini classification trees, written from scratch.

Trees are stored as flat node arrays so prediction over many rows is a
handful of vectorized steps. Every node keeps its class counts (m1, m2); a
leaf predicts ``m2 / (m1 + m2)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ..core import ClassLabel, ConfigError, ContractError, as_label_array

LEAF = -1
MIN_DECREASE = 1e-12
# costs closer than this are ties; the Gini sums carry rounding noise around 1e-16
TIE_TOL = 1e-12


def gini(m1: int, m2: int) -> float:
    """Gini impurity ``1 - p1^2 - p2^2`` of a node holding m1/m2 samples."""
    n = m1 + m2
    if n < 1 or m1 < 0 or m2 < 0:
        raise ContractError("gini needs a nonempty node")
    p1, p2 = m1 / n, m2 / n
    return 1.0 - p1 * p1 - p2 * p2


def bootstrap_size(n_obs: int) -> int:
    """``ceil(0.632 * n_obs)`` in exact integer arithmetic."""
    return (632 * n_obs + 999) // 1000


def default_k(feature_dim: int) -> int:
    return max(1, math.isqrt(feature_dim))


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    min_node_size: int = 5
    k: Optional[int] = None  # None -> floor(sqrt(feature_dim))
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        if self.min_node_size < 1:
            raise ConfigError("min_node_size must be >= 1")
        if self.k is not None and self.k < 1:
            raise ConfigError("k must be >= 1")

    def k_for(self, feature_dim: int) -> int:
        k = default_k(feature_dim) if self.k is None else self.k
        if k > feature_dim:
            raise ConfigError(f"k={k} exceeds feature_dim={feature_dim}")
        return k


@dataclass(frozen=True)
class TreeNode:
    """Read-only view of one node of a fitted :class:`Tree`."""

    index: int
    split_feature: int
    split_value: float
    left: int
    right: int
    m1: int
    m2: int

    @property
    def is_leaf(self) -> bool:
        return self.split_feature == LEAF


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    m1: np.ndarray
    m2: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def node(self, i: int) -> TreeNode:
        return TreeNode(i, int(self.feature[i]), float(self.threshold[i]), int(self.left[i]),
                        int(self.right[i]), int(self.m1[i]), int(self.m2[i]))

    def nodes(self) -> List[TreeNode]:
        return [self.node(i) for i in range(self.n_nodes)]

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] != LEAF
        while active.any():
            r, nd = rows[active], node[active]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] != LEAF
        return node

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        leaf = self.leaf_index(X)
        return self.m2[leaf] / (self.m1[leaf] + self.m2[leaf])

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "m1": self.m1.tolist(), "m2": self.m2.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=float),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            m1=np.asarray(d["m1"], dtype=np.int64),
            m2=np.asarray(d["m2"], dtype=np.int64),
        )

    @classmethod
    def leaf(cls, m1: int, m2: int) -> "Tree":
        return cls(np.array([LEAF]), np.array([0.0]), np.array([LEAF]), np.array([LEAF]),
                   np.array([m1]), np.array([m2]))


def best_split_on_feature(x: np.ndarray, is_pos: np.ndarray):
    """Best threshold on one feature by weighted Gini of the children.

    Candidates are midpoints between consecutive distinct sorted values.
    Returns ``(weighted_child_impurity, threshold)`` or ``None`` if the
    feature is constant. Ties resolve to the lowest threshold.
    """
    order = np.argsort(x, kind="stable")
    xs, ps = x[order], is_pos[order]
    n = xs.size
    boundary = np.flatnonzero(xs[1:] > xs[:-1])  # last index of each left part
    if boundary.size == 0:
        return None
    cum_pos = np.cumsum(ps)
    n_left = boundary + 1.0
    l2 = cum_pos[boundary].astype(float)
    l1 = n_left - l2
    n_right = n - n_left
    r2 = cum_pos[-1] - l2
    r1 = n_right - r2
    # n * weighted gini = nL - (l1^2 + l2^2)/nL + nR - (r1^2 + r2^2)/nR
    cost = (n_left - (l1 * l1 + l2 * l2) / n_left + n_right - (r1 * r1 + r2 * r2) / n_right) / n
    b = int(np.flatnonzero(cost <= cost.min() + TIE_TOL)[0])
    lo, hi = xs[boundary[b]], xs[boundary[b] + 1]
    thr = 0.5 * (lo + hi)
    if not lo <= thr < hi:  # midpoint rounded onto the upper value
        thr = lo
    return float(cost[b]), float(thr)


def fit_tree(X: np.ndarray, labels, min_node_size: int = 5, k: Optional[int] = None,
             rng: Optional[np.random.Generator] = None) -> Tree:
    """Grow one unpruned classification tree.

    A node becomes a leaf when it holds at most ``min_node_size`` samples, is
    pure, or no split among its ``k`` randomly drawn features lowers the
    impurity.
    """
    X = np.asarray(X, dtype=float)
    y = as_label_array(labels)
    n, d = X.shape
    if n < 1 or y.size != n:
        raise ContractError("fit_tree needs >= 1 sample and one label per row")
    k = default_k(d) if k is None else k
    if not 1 <= k <= d:
        raise ConfigError(f"k={k} must lie in [1, {d}]")
    rng = rng if rng is not None else np.random.default_rng(0)
    is_pos = (y == ClassLabel.CLASS2).astype(np.int64)

    feature, threshold, left, right, m1s, m2s = [], [], [], [], [], []

    def new_node(idx):
        m2 = int(is_pos[idx].sum())
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        m1s.append(idx.size - m2)
        m2s.append(m2)
        return len(feature) - 1

    stack = [(new_node(np.arange(n)), np.arange(n))]
    while stack:
        node, idx = stack.pop()
        m1, m2 = m1s[node], m2s[node]
        if idx.size <= min_node_size or m1 == 0 or m2 == 0:
            continue
        parent = gini(m1, m2)
        feats = np.sort(rng.choice(d, size=k, replace=False))
        best = None
        for f in feats:
            res = best_split_on_feature(X[idx, f], is_pos[idx])
            if res is not None and (best is None or res[0] < best[0] - TIE_TOL):
                best = (res[0], int(f), res[1])
        if best is None or parent - best[0] <= MIN_DECREASE:
            continue
        _, f, thr = best
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree is numbered depth-first first
        stack.append((right[node], ri))
        stack.append((left[node], li))

    return Tree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=float),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(m1s, dtype=np.int64), np.array(m2s, dtype=np.int64))


def tree_predict(tree: Tree, x) -> float:
    return float(tree.predict_proba(np.atleast_2d(x))[0])


@dataclass
class Forest:
    trees: List[Tree]
    config: ForestConfig = field(default_factory=ForestConfig)
    feature_dim: int = 0

    def predict_proba(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        per_tree = np.stack([t.predict_proba(X) for t in self.trees])
        # sorting before the sum makes the mean independent of tree order
        return np.sort(per_tree, axis=0).sum(axis=0) / len(self.trees)

    def to_dict(self) -> dict:
        return {"n_trees": self.config.n_trees, "min_node_size": self.config.min_node_size,
                "k": self.config.k, "seed": self.config.seed, "feature_dim": self.feature_dim,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "Forest":
        cfg = ForestConfig(n_trees=d["n_trees"], min_node_size=d["min_node_size"], k=d["k"], seed=d["seed"])
        return cls([Tree.from_dict(t) for t in d["trees"]], cfg, d["feature_dim"])


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(tree_index,)))


def fit_forest(X, labels, config: ForestConfig = ForestConfig(), n_jobs: int = 1) -> Forest:
    """Bagged ensemble; each tree sees ``ceil(0.632 n)`` rows drawn with replacement.

    Tree ``b`` draws from its own stream derived from ``(seed, b)``, so the
    result does not depend on ``n_jobs``.
    """
    X = np.asarray(X, dtype=float)
    y = as_label_array(labels)
    n, d = X.shape
    if n < 2:
        raise ContractError("fit_forest needs >= 2 samples")
    k = config.k_for(d)
    size = bootstrap_size(n)

    def grow(b: int) -> Tree:
        rng = tree_rng(config.seed, b)
        rows = rng.integers(0, n, size=size)
        return fit_tree(X[rows], y[rows], config.min_node_size, k, rng)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(grow, range(config.n_trees)))
    else:
        trees = [grow(b) for b in range(config.n_trees)]
    return Forest(trees, config, d)


def forest_predict(forest: Forest, x) -> float:
    return float(forest.predict_proba(np.atleast_2d(x))[0])
