"""Greedy Gini trees for binary labels.

Split search follows the usual exact scheme: for each candidate feature, sort
the node's rows, and consider thresholds at midpoints between consecutive
distinct values. Rows carry weights (bootstrap multiplicities in a forest);
rows with zero weight are not part of the tree at all. A row goes left when
``x[feature] <= threshold``.

When features are sub-sampled, candidates are drawn without replacement
until ``max_features`` non-constant features have been evaluated or none
remain. Equal-gain candidates resolve to the lowest feature index, then the
lowest threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

# same tolerances as the common reference implementations
FEATURE_THRESHOLD = 1e-7
IMPURITY_EPS = np.finfo(np.float64).eps


@njit(cache=True)
def _build(Xt, y, w, max_features, max_depth, min_samples_split, min_samples_leaf, shuffle, seed):
    np.random.seed(seed)
    p = Xt.shape[0]
    samples = np.flatnonzero(w > 0.0)
    ns = samples.size
    cap = 2 * ns + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    n_node = np.zeros(cap, dtype=np.int64)
    w_node = np.zeros(cap)
    depth = np.zeros(cap, dtype=np.int64)

    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_node = np.empty(cap, dtype=np.int64)
    top = 0
    st_start[0] = 0
    st_end[0] = ns
    st_node[0] = 0
    top = 1
    node_count = 1
    feats = np.arange(p)
    scratch = np.empty(ns)
    tmp = np.empty(ns, dtype=np.int64)

    while top > 0:
        top -= 1
        start = st_start[top]
        end = st_end[top]
        node = st_node[top]
        cnt = end - start
        w_tot = 0.0
        w_pos = 0.0
        for i in range(start, end):
            j = samples[i]
            w_tot += w[j]
            if y[j] == 1:
                w_pos += w[j]
        frac = w_pos / w_tot
        value[node] = frac
        n_node[node] = cnt
        w_node[node] = w_tot
        gini = 1.0 - frac * frac - (1.0 - frac) * (1.0 - frac)
        d = depth[node]
        if (max_depth >= 0 and d >= max_depth) or cnt < min_samples_split or cnt < 2 * min_samples_leaf or gini <= IMPURITY_EPS:
            continue

        best_score = -np.inf
        best_f = -1
        best_t = 0.0
        n_eval = 0
        remaining = p
        while remaining > 0 and n_eval < max_features:
            if shuffle:
                k = np.random.randint(0, remaining)
                t = feats[k]
                feats[k] = feats[remaining - 1]
                feats[remaining - 1] = t
                f = feats[remaining - 1]
            else:
                f = p - remaining
            remaining -= 1
            for i in range(cnt):
                scratch[i] = Xt[f, samples[start + i]]
            vals = scratch[:cnt]
            order = np.argsort(vals)
            if vals[order[cnt - 1]] <= vals[order[0]] + FEATURE_THRESHOLD:
                continue
            n_eval += 1
            wl = 0.0
            wlp = 0.0
            for i in range(1, cnt):
                j = samples[start + order[i - 1]]
                wl += w[j]
                if y[j] == 1:
                    wlp += w[j]
                v_prev = vals[order[i - 1]]
                v_cur = vals[order[i]]
                if v_cur <= v_prev + FEATURE_THRESHOLD:
                    continue
                if i < min_samples_leaf or cnt - i < min_samples_leaf:
                    continue
                wr = w_tot - wl
                wrp = w_pos - wlp
                score = (wlp * wlp + (wl - wlp) * (wl - wlp)) / wl + (wrp * wrp + (wr - wrp) * (wr - wrp)) / wr
                thr = 0.5 * (v_prev + v_cur)
                if thr == v_cur or not np.isfinite(thr):
                    thr = v_prev
                if score > best_score or (score == best_score and (f < best_f or (f == best_f and thr < best_t))):
                    best_score = score
                    best_f = f
                    best_t = thr
        if best_f < 0:
            continue

        # partition samples[start:end] so that rows with x <= thr come first
        nl = 0
        nr = 0
        for i in range(start, end):
            j = samples[i]
            if Xt[best_f, j] <= best_t:
                samples[start + nl] = j
                nl += 1
            else:
                tmp[nr] = j
                nr += 1
        for i in range(nr):
            samples[start + nl + i] = tmp[i]

        feature[node] = best_f
        threshold[node] = best_t
        lnode = node_count
        rnode = node_count + 1
        node_count += 2
        left[node] = lnode
        right[node] = rnode
        depth[lnode] = d + 1
        depth[rnode] = d + 1
        # push right first so the left subtree is numbered first
        st_start[top] = start + nl
        st_end[top] = end
        st_node[top] = rnode
        top += 1
        st_start[top] = start
        st_end[top] = start + nl
        st_node[top] = lnode
        top += 1

    return (
        feature[:node_count].copy(),
        threshold[:node_count].copy(),
        left[:node_count].copy(),
        right[:node_count].copy(),
        value[:node_count].copy(),
        n_node[:node_count].copy(),
        w_node[:node_count].copy(),
        depth[:node_count].copy(),
    )


@njit(cache=True)
def _apply(X, feature, threshold, left, right):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while left[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@dataclass(frozen=True, eq=False)
class TreeModel:
    """Array-encoded binary tree; ``left[k] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # weighted fraction of class 1 at the node
    n_node_samples: np.ndarray
    weighted_n_node_samples: np.ndarray
    node_depth: np.ndarray
    n_features: int
    max_depth_setting: int | None = None
    columns: tuple[str, ...] | None = None

    @property
    def node_count(self) -> int:
        return self.feature.shape[0]

    @property
    def depth(self) -> int:
        return int(self.node_depth.max())

    @property
    def n_leaves(self) -> int:
        return int((self.left < 0).sum())

    def is_leaf(self, node: int) -> bool:
        return self.left[node] < 0

    def apply(self, X) -> np.ndarray:
        X = _as_matrix(X, self.n_features)
        return _apply(X, self.feature, self.threshold, self.left, self.right)

    def predict_proba(self, X) -> np.ndarray:
        return self.value[self.apply(X)]


class SchemaMismatchError(ValueError):
    pass


def _as_matrix(X, n_features: int) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != n_features:
        raise SchemaMismatchError(f"expected a matrix with {n_features} columns, got shape {X.shape}")
    return X


def check_training_data(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be (n, p) and y must have n entries")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    return X, y.astype(np.int8)


def grow_tree(X, y, weights=None, *, max_features=None, max_depth=None, min_samples_split=2,
              min_samples_leaf=1, shuffle_features=False, seed=0, columns=None) -> TreeModel:
    X, y = check_training_data(X, y)
    return grow_prepared(np.ascontiguousarray(X.T), y, weights, max_features=max_features, max_depth=max_depth,
                         min_samples_split=min_samples_split, min_samples_leaf=min_samples_leaf,
                         shuffle_features=shuffle_features, seed=seed, columns=columns)


def grow_prepared(Xt, y, weights=None, *, max_features=None, max_depth=None, min_samples_split=2,
                  min_samples_leaf=1, shuffle_features=False, seed=0, columns=None) -> TreeModel:
    """As :func:`grow_tree` but takes the validated, transposed ``(p, n)`` matrix."""
    p, n = Xt.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n,) or np.any(w < 0):
        raise ValueError("weights must be non-negative, one per row")
    if not np.any(w > 0):
        raise ValueError("at least one row needs positive weight")
    mf = p if max_features is None else int(max_features)
    if not 1 <= mf <= p:
        raise ValueError(f"max_features must lie in [1, {p}]")
    md = -1 if max_depth is None else int(max_depth)
    arrays = _build(Xt, y, w, mf, md, int(min_samples_split), int(min_samples_leaf),
                    bool(shuffle_features), int(seed))
    return TreeModel(*arrays, n_features=p, max_depth_setting=max_depth,
                     columns=None if columns is None else tuple(columns))


def fit_decision_tree(X, y, max_depth: int | None = 4, *, min_samples_split=2, min_samples_leaf=1,
                      columns=None) -> TreeModel:
    """Deterministic tree: every feature is a candidate at every node, scanned in index order."""
    return grow_tree(X, y, max_depth=max_depth, min_samples_split=min_samples_split,
                     min_samples_leaf=min_samples_leaf, columns=columns)


# ---------------------------------------------------------------------------
# rule lists


@dataclass(frozen=True)
class Condition:
    feature: int
    op: str  # "<=" or ">"
    threshold: float

    def holds(self, X: np.ndarray) -> np.ndarray:
        col = X[:, self.feature]
        return col <= self.threshold if self.op == "<=" else col > self.threshold


@dataclass(frozen=True)
class Rule:
    conditions: tuple[Condition, ...]
    probability: float
    n_samples: int

    @property
    def predicted_class(self) -> int:
        return int(self.probability > 0.5)

    def matches(self, X: np.ndarray) -> np.ndarray:
        ok = np.ones(X.shape[0], dtype=bool)
        for c in self.conditions:
            ok &= c.holds(X)
        return ok

    def describe(self, columns=None) -> str:
        def name(f):
            return columns[f] if columns is not None else f"x[{f}]"

        if not self.conditions:
            lhs = "always"
        else:
            lhs = "if " + " and ".join(f"{name(c.feature)} {c.op} {c.threshold:.4g}" for c in self.conditions)
        return f"{lhs}: predict Y={self.predicted_class} (P(Y=1)={self.probability:.3f}, n={self.n_samples})"


def extract_rule_list(tree: TreeModel) -> list[Rule]:
    """One rule per leaf, left-to-right; the rules partition the feature space."""
    rules: list[Rule] = []

    def walk(node, conds):
        if tree.is_leaf(node):
            rules.append(Rule(tuple(conds), float(tree.value[node]), int(tree.n_node_samples[node])))
            return
        f, t = int(tree.feature[node]), float(tree.threshold[node])
        walk(int(tree.left[node]), conds + [Condition(f, "<=", t)])
        walk(int(tree.right[node]), conds + [Condition(f, ">", t)])

    walk(0, [])
    return rules


def rules_predict_proba(rules: list[Rule], X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    out = np.full(X.shape[0], np.nan)
    for r in rules:
        hit = r.matches(X)
        if np.any(hit & ~np.isnan(out)):
            raise ValueError("rules overlap")
        out[hit] = r.probability
    if np.any(np.isnan(out)):
        raise ValueError("rules do not cover every row")
    return out


def format_rule_list(tree: TreeModel) -> str:
    cols = tree.columns
    return "\n".join(f"{i + 1}. {r.describe(cols)}" for i, r in enumerate(extract_rule_list(tree)))
