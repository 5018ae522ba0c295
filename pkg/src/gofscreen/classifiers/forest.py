"""Bagged Gini trees.

Each tree sees a bootstrap sample of size ``n`` drawn with replacement;
bootstrap multiplicities enter as row weights, so a leaf's probability is the
in-bag class-1 fraction (counting repeats). At every node ``floor(sqrt(p))``
candidate features are sampled without replacement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..rng import as_generator
from .tree import TreeModel, _as_matrix, check_training_data, grow_prepared


@njit(cache=True)
def _forest_proba(X, feature, threshold, left, right, value, offsets):
    n = X.shape[0]
    n_trees = offsets.size - 1
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while left[base + node] >= 0:
                k = base + node
                if X[i, feature[k]] <= threshold[k]:
                    node = left[k]
                else:
                    node = right[k]
            acc += value[base + node]
        out[i] = acc / n_trees
    return out


def default_max_features(p: int) -> int:
    return max(1, int(math.isqrt(p)))


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple[TreeModel, ...]
    in_bag: np.ndarray  # (n_trees, n_train) bootstrap multiplicities
    max_features: int
    columns: tuple[str, ...] | None = None

    def __post_init__(self):
        feats = np.concatenate([t.feature for t in self.trees])
        thr = np.concatenate([t.threshold for t in self.trees])
        left = np.concatenate([t.left for t in self.trees])
        right = np.concatenate([t.right for t in self.trees])
        value = np.concatenate([t.value for t in self.trees])
        offsets = np.r_[0, np.cumsum([t.node_count for t in self.trees])].astype(np.int64)
        object.__setattr__(self, "_packed", (feats, thr, left, right, value, offsets))

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    def predict_proba(self, X) -> np.ndarray:
        X = _as_matrix(X, self.n_features)
        return _forest_proba(X, *self._packed)

    def per_tree_proba(self, X) -> np.ndarray:
        return np.vstack([t.predict_proba(X) for t in self.trees])


def fit_random_forest(X, y, n_trees: int = 500, rng=None, *, max_features: int | None = None,
                      min_samples_leaf: int = 1, min_samples_split: int = 2, columns=None) -> ForestModel:
    X, y = check_training_data(X, y)
    n, p = X.shape
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    rng = as_generator(rng)
    mf = default_max_features(p) if max_features is None else int(max_features)
    Xt = np.ascontiguousarray(X.T)
    trees = []
    in_bag = np.zeros((n_trees, n), dtype=np.int32)
    for t in range(n_trees):
        idx = rng.integers(0, n, size=n)
        counts = np.bincount(idx, minlength=n)
        seed = int(rng.integers(0, 2**31 - 1))
        in_bag[t] = counts
        trees.append(
            grow_prepared(Xt, y, counts.astype(np.float64), max_features=mf, max_depth=None,
                      min_samples_split=min_samples_split, min_samples_leaf=min_samples_leaf,
                      shuffle_features=True, seed=seed)
        )
    return ForestModel(tuple(trees), in_bag, mf, None if columns is None else tuple(columns))
