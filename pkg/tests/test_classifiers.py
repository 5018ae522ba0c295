import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gofscreen.classifiers import (
    LogisticModel,
    SchemaMismatchError,
    SingleClassError,
    extract_rule_list,
    fit_decision_tree,
    fit_logistic,
    fit_random_forest,
    load_model,
    predict_proba,
    rules_predict_proba,
    save_model,
)
from gofscreen.classifiers.tree import grow_tree
from gofscreen.metrics import auroc


def _blobs(rng, n=200, p=4, shift=1.0):
    y = (np.arange(n) % 2).astype(int)
    X = rng.normal(size=(n, p))
    X[:, 0] += shift * y
    return X, y


# ---------------------------------------------------------------------------
# slow reference tree, used as an oracle


def _ref_tree(X, y, w, max_depth=None):
    """Plain-Python exact Gini tree over all features, same tie rules."""
    nodes = []

    def build(idx, depth):
        k = len(nodes)
        nodes.append(None)
        wt = w[idx].sum()
        wp = w[idx][y[idx] == 1].sum()
        frac = wp / wt
        gini = 1 - frac**2 - (1 - frac) ** 2
        if (max_depth is not None and depth >= max_depth) or len(idx) < 2 or gini <= np.finfo(float).eps:
            nodes[k] = ("leaf", frac)
            return k
        best = None
        for f in range(X.shape[1]):
            vals = np.unique(X[idx, f])
            for a, b in zip(vals[:-1], vals[1:]):
                if b <= a + 1e-7:
                    continue
                t = (a + b) / 2
                L = idx[X[idx, f] <= t]
                R = idx[X[idx, f] > t]
                wl, wr = w[L].sum(), w[R].sum()
                lp, rp = w[L][y[L] == 1].sum(), w[R][y[R] == 1].sum()
                score = (lp**2 + (wl - lp) ** 2) / wl + (rp**2 + (wr - rp) ** 2) / wr
                if best is None or score > best[0]:
                    best = (score, f, t)
        if best is None:
            nodes[k] = ("leaf", frac)
            return k
        _, f, t = best
        left = build(idx[X[idx, f] <= t], depth + 1)
        right = build(idx[X[idx, f] > t], depth + 1)
        nodes[k] = ("split", f, t, left, right)
        return k

    build(np.flatnonzero(w > 0), 0)

    def predict(x):
        k = 0
        while nodes[k][0] == "split":
            _, f, t, l, r = nodes[k]
            k = l if x[f] <= t else r
        return nodes[k][1]

    return predict


class TestDecisionTree:
    def test_pure_input_is_single_leaf(self, rng):
        X = rng.normal(size=(30, 3))
        tree = fit_decision_tree(X, np.ones(30, dtype=int))
        assert tree.node_count == 1
        assert tree.depth == 0
        assert np.all(tree.predict_proba(X) == 1.0)

    def test_xor_needs_depth_two(self):
        X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]] * 10, dtype=float)
        y = np.array([0, 1, 1, 0] * 10)
        deep = fit_decision_tree(X, y, max_depth=2)
        assert np.mean((deep.predict_proba(X) > 0.5) == y) == 1.0
        # exhaustive oracle: every single split of either feature
        best_stump = 0.0
        for f in range(2):
            for left_class, right_class in itertools.product((0, 1), repeat=2):
                pred = np.where(X[:, f] <= 0.5, left_class, right_class)
                best_stump = max(best_stump, np.mean(pred == y))
        assert best_stump <= 0.75
        shallow = fit_decision_tree(X, y, max_depth=1)
        assert np.mean((shallow.predict_proba(X) > 0.5) == y) <= 0.75

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_reference_builder(self, seed):
        rng = np.random.default_rng(seed)
        X, y = _blobs(rng, n=60, p=3, shift=0.8)
        tree = fit_decision_tree(X, y, max_depth=4)
        ref = _ref_tree(X, y, np.ones(len(y)), max_depth=4)
        Xq = rng.normal(size=(500, 3))
        assert np.array_equal(tree.predict_proba(Xq), np.array([ref(x) for x in Xq]))

    def test_matches_sklearn_on_continuous_data(self, rng):
        sk = pytest.importorskip("sklearn.tree")
        X, y = _blobs(rng, n=400, p=5, shift=1.0)
        ours = fit_decision_tree(X, y, max_depth=4)
        theirs = sk.DecisionTreeClassifier(max_depth=4, random_state=0).fit(X, y)
        Xq = rng.normal(size=(2000, 5))
        np.testing.assert_allclose(ours.predict_proba(Xq), theirs.predict_proba(Xq)[:, 1], atol=1e-12)

    def test_equal_gain_prefers_lowest_feature(self, rng):
        x = rng.normal(size=50)
        X = np.column_stack([x, x, x])
        y = (x > 0).astype(int)
        tree = fit_decision_tree(X, y, max_depth=1)
        assert tree.feature[0] == 0

    def test_depth_limit(self, rng):
        X, y = _blobs(rng, n=300, p=4, shift=0.3)
        assert fit_decision_tree(X, y, max_depth=4).depth <= 4

    def test_deterministic(self, rng):
        X, y = _blobs(rng)
        a, b = fit_decision_tree(X, y), fit_decision_tree(X, y)
        assert all(np.array_equal(getattr(a, k), getattr(b, k)) for k in ("feature", "threshold", "value"))


class TestRuleList:
    def test_depth_zero_tree_has_one_unconditional_rule(self):
        tree = fit_decision_tree(np.zeros((5, 2)), np.zeros(5, dtype=int))
        rules = extract_rule_list(tree)
        assert len(rules) == 1 and rules[0].conditions == ()
        assert "always" in rules[0].describe()

    def test_one_rule_per_leaf_and_same_predictions(self, rng):
        X, y = _blobs(rng, n=500, p=4, shift=0.7)
        tree = fit_decision_tree(X, y, max_depth=4, columns=["a", "b", "c", "d"])
        rules = extract_rule_list(tree)
        assert len(rules) == tree.n_leaves
        Xq = rng.normal(size=(10_000, 4)) * 2
        np.testing.assert_array_equal(rules_predict_proba(rules, Xq), tree.predict_proba(Xq))

    def test_rules_partition_the_space(self, rng):
        X, y = _blobs(rng, n=200, p=3)
        rules = extract_rule_list(fit_decision_tree(X, y))
        Xq = rng.normal(size=(3000, 3)) * 3
        hits = np.sum([r.matches(Xq) for r in rules], axis=0)
        assert np.all(hits == 1)


class TestRandomForest:
    def test_mean_over_trees(self, rng):
        X, y = _blobs(rng, n=120, p=6)
        forest = fit_random_forest(X, y, n_trees=25, rng=1)
        Xq = rng.normal(size=(300, 6))
        per_tree = forest.per_tree_proba(Xq)
        acc = np.zeros(len(Xq))
        for row in per_tree:
            acc += row
        np.testing.assert_array_equal(forest.predict_proba(Xq), acc / forest.n_trees)
        p = forest.predict_proba(Xq)
        assert np.all((p >= 0) & (p <= 1))

    def test_matches_slow_reference_on_50_rows(self, rng):
        X, y = _blobs(rng, n=50, p=3, shift=0.5)
        # all features evaluated at every node, so the reference needs only the bootstrap weights
        forest = fit_random_forest(X, y, n_trees=10, rng=3, max_features=3)
        Xq = rng.normal(size=(200, 3))
        expected = np.zeros(len(Xq))
        for t in range(forest.n_trees):
            ref = _ref_tree(X, y, forest.in_bag[t].astype(float))
            expected += np.array([ref(x) for x in Xq])
        np.testing.assert_array_equal(forest.predict_proba(Xq), expected / forest.n_trees)

    def test_in_bag_counts_are_a_bootstrap(self, rng):
        X, y = _blobs(rng, n=80)
        forest = fit_random_forest(X, y, n_trees=7, rng=0)
        assert forest.in_bag.shape == (7, 80)
        assert np.all(forest.in_bag.sum(axis=1) == 80)

    def test_purity_case(self, rng):
        X = rng.normal(size=(40, 2))
        y = (np.arange(40) % 2).astype(int)
        forest = fit_random_forest(X, y, n_trees=1, rng=5)
        tree = forest.trees[0]
        leaves = tree.apply(X)
        inbag = forest.in_bag[0] > 0
        for i in np.flatnonzero(inbag):
            # the point is alone in its leaf (distinct continuous values)
            if np.sum(inbag & (leaves == leaves[i])) == 1:
                assert forest.predict_proba(X[i : i + 1])[0] == float(y[i])

    def test_seeded_determinism(self, rng):
        X, y = _blobs(rng)
        a = fit_random_forest(X, y, n_trees=15, rng=np.random.default_rng(9))
        b = fit_random_forest(X, y, n_trees=15, rng=np.random.default_rng(9))
        Xq = rng.normal(size=(100, 4))
        assert np.array_equal(a.predict_proba(Xq), b.predict_proba(Xq))
        assert np.array_equal(a.in_bag, b.in_bag)

    def test_default_max_features(self, rng):
        X, y = _blobs(rng, p=17)
        assert fit_random_forest(X, y, n_trees=2, rng=0).max_features == 4

    def test_close_to_sklearn_accuracy(self, rng):
        sk = pytest.importorskip("sklearn.ensemble")
        X, y = _blobs(rng, n=600, p=10, shift=1.0)
        Xq, yq = _blobs(np.random.default_rng(99), n=2000, p=10, shift=1.0)
        ours = auroc(fit_random_forest(X, y, n_trees=200, rng=0).predict_proba(Xq), yq)
        theirs = auroc(sk.RandomForestClassifier(200, random_state=0).fit(X, y).predict_proba(Xq)[:, 1], yq)
        assert abs(ours - theirs) < 0.02

    def test_wrong_width_rejected(self, rng):
        X, y = _blobs(rng)
        forest = fit_random_forest(X, y, n_trees=2, rng=0)
        with pytest.raises(SchemaMismatchError):
            forest.predict_proba(np.zeros((3, 5)))


class TestLogistic:
    def test_matches_sklearn(self, rng):
        sk_lm = pytest.importorskip("sklearn.linear_model")
        sk_pp = pytest.importorskip("sklearn.preprocessing")
        X, y = _blobs(rng, n=500, p=5, shift=0.8)
        X[:, 2] *= 30.0
        model = fit_logistic(X, y)
        sc = sk_pp.StandardScaler().fit(X)
        ref = sk_lm.LogisticRegression(C=1e6, max_iter=5000, tol=1e-10).fit(sc.transform(X), y)
        np.testing.assert_allclose(model.coef, ref.coef_[0], atol=1e-5)
        np.testing.assert_allclose(model.intercept, ref.intercept_[0], atol=1e-5)
        assert model.converged

    def test_zero_weights_give_one_half(self):
        m = LogisticModel(np.zeros(3), 0.0, np.zeros(3), np.ones(3), 1e6, True, 0)
        assert np.all(predict_proba(m, np.random.default_rng(0).normal(size=(10, 3))) == 0.5)

    def test_monotone_in_positive_weight_feature(self, rng):
        X, y = _blobs(rng, p=3)
        m = fit_logistic(X, y)
        assert m.coef[0] > 0
        grid = np.zeros((50, 3))
        grid[:, 0] = np.linspace(-3, 3, 50)
        assert np.all(np.diff(m.predict_proba(grid)) > 0)

    def test_separated_data_reaches_grid_optimum(self):
        x = np.linspace(-1, 1, 40)
        y = (x > 0).astype(int)
        m = fit_logistic(x[:, None], y)
        assert np.all(m.predict_proba(x[y == 1][:, None]) >= 0.99)
        z = (x - x.mean()) / x.std()
        l2 = 1 / (1e6 * len(x))

        def loss(w, b):
            t = w * z + b
            return np.mean(np.logaddexp(0, t) - y * t) + 0.5 * l2 * w * w

        achieved = loss(m.coef[0], m.intercept)
        ws, bs = np.linspace(0, 200, 801), np.linspace(-20, 20, 161)
        grid_best = min(loss(w, b) for w in ws for b in bs)
        assert achieved <= grid_best + 1e-9

    def test_shuffled_labels_give_chance_auroc(self, rng):
        X, y = _blobs(rng, n=400, p=4, shift=1.0)
        vals = []
        for _ in range(10):
            ys = rng.permutation(y)
            m = fit_logistic(X, ys)
            vals.append(auroc(m.predict_proba(X), ys))
            assert np.linalg.norm(m.coef) < 0.5
        assert 0.45 <= np.mean(vals) <= 0.60

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(0.01, 100.0), min_size=3, max_size=3))
    def test_column_rescaling_invariance(self, scales):
        rng = np.random.default_rng(1)
        X, y = _blobs(rng, n=150, p=3)
        Xq = rng.normal(size=(50, 3))
        a = fit_logistic(X, y).predict_proba(Xq)
        s = np.asarray(scales)
        b = fit_logistic(X * s, y).predict_proba(Xq * s)
        np.testing.assert_allclose(a, b, atol=1e-8)

    def test_constant_column_gets_unit_scale(self, rng):
        X, y = _blobs(rng, p=2)
        X = np.column_stack([X, np.full(len(y), 7.0)])
        m = fit_logistic(X, y)
        assert m.scale[2] == 1.0 and np.isfinite(m.coef).all()

    def test_single_class_rejected(self, rng):
        with pytest.raises(SingleClassError):
            fit_logistic(rng.normal(size=(10, 2)), np.zeros(10, dtype=int))

    def test_schema_mismatch(self, rng):
        X, y = _blobs(rng, p=3)
        with pytest.raises(SchemaMismatchError):
            fit_logistic(X, y).predict_proba(np.zeros((2, 4)))


class TestSerialization:
    @pytest.mark.parametrize("kind", ["logistic", "tree", "forest"])
    def test_round_trip(self, kind, rng, tmp_path):
        X, y = _blobs(rng, p=4)
        model = {
            "logistic": lambda: fit_logistic(X, y, columns=list("abcd")),
            "tree": lambda: fit_decision_tree(X, y, columns=list("abcd")),
            "forest": lambda: fit_random_forest(X, y, n_trees=5, rng=0),
        }[kind]()
        path = tmp_path / "m.json"
        save_model(model, path)
        back = load_model(path)
        Xq = rng.normal(size=(100, 4))
        assert np.array_equal(model.predict_proba(Xq), back.predict_proba(Xq))

    def test_unknown_kind(self, tmp_path):
        from gofscreen.classifiers import model_from_dict

        with pytest.raises(ValueError):
            model_from_dict({"kind": "svm", "version": 1})


def test_weighted_tree_equals_replicated_rows(rng):
    X, y = _blobs(rng, n=40, p=2)
    w = rng.integers(0, 3, size=40)
    a = grow_tree(X, y, w.astype(float))
    rep = np.repeat(np.arange(40), w)
    b = grow_tree(X[rep], y[rep])
    Xq = rng.normal(size=(500, 2))
    # same leaf fractions, though replicated rows change min-split counts only for ties
    np.testing.assert_allclose(a.predict_proba(Xq), b.predict_proba(Xq))
