from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bitscreen import forest as F


def test_gini_examples():
    assert F.gini([10, 0]) == 0.0
    assert F.gini([5, 5]) == 0.5
    assert F.gini([1, 1, 1, 1]) == 0.75
    with pytest.raises(F.ForestError):
        F.gini([0, 0])


@given(st.lists(st.integers(0, 50), min_size=2, max_size=8).filter(lambda c: sum(c) > 0))
def test_gini_range(counts):
    g = F.gini(counts)
    assert 0 <= g <= 1 - 1 / len(counts) + 1e-12


def test_split_separable():
    X = np.array([[0.0], [1.0]])
    assert F.best_split(X, np.array([0, 1]), 2) == (0, 0.5)


def test_split_constant_feature():
    X = np.full((6, 1), 3.0)
    assert F.best_split(X, np.array([0, 1, 0, 1, 0, 1]), 2) is None


def exhaustive_split(X, y, k):
    n = len(y)
    parent = F.gini(np.bincount(y, minlength=k))
    cands = []
    for f in range(X.shape[1]):
        vals = sorted(set(X[:, f]))
        for a, b in zip(vals, vals[1:]):
            thr = a + (b - a) / 2
            mask = X[:, f] <= thr
            gl = F.gini(np.bincount(y[mask], minlength=k))
            gr = F.gini(np.bincount(y[~mask], minlength=k))
            dec = parent - (mask.sum() * gl + (~mask).sum() * gr) / n
            cands.append((dec, f, thr))
    if not cands:
        return None
    best = max(c[0] for c in cands)
    if best <= F.TIE_TOL:
        return None
    tied = [(f, thr) for dec, f, thr in cands if dec >= best - F.TIE_TOL]
    return min(tied)


@pytest.mark.parametrize("seed", range(8))
def test_split_matches_exhaustive_scan(seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 12, size=(50, 6)).astype(float)
    y = rng.integers(0, 3, 50)
    assert F.best_split(X, y, 3) == exhaustive_split(X, y, 3)


def test_split_respects_feature_subset():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 5))
    y = (X[:, 0] > 0).astype(int)
    f, _ = F.best_split(X, y, 2, features=[2, 4])
    assert f in (2, 4)


def separable(n=60, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 2))
    y = (X[:, 0] + X[:, 1] > 0).astype(int)
    return X, y


def test_fit_separable_perfect():
    X, y = separable()
    forest = F.fit(X, y, n_trees=10, m=2, seed=1)
    assert np.mean(forest.predict(X) == y) == 1.0


def test_fit_deterministic():
    X, y = separable()
    a = F.fit(X, y, n_trees=5, seed=7).to_bytes()
    b = F.fit(X, y, n_trees=5, seed=7).to_bytes()
    assert a == b
    assert F.fit(X, y, n_trees=5, seed=8).to_bytes() != a


def test_parallel_equals_serial():
    X, y = separable(80)
    a = F.fit(X, y, n_trees=6, seed=3, n_jobs=1).to_bytes()
    b = F.fit(X, y, n_trees=6, seed=3, n_jobs=3).to_bytes()
    assert a == b


def test_depth_zero_single_tree_is_majority():
    X = np.arange(10, dtype=float)[:, None]
    y = np.array([1] * 7 + [0] * 3)
    forest = F.fit(X, y, n_trees=1, max_depth=0, bootstrap=False)
    assert set(forest.predict(X)) == {1}
    assert forest.trees[0].n_nodes == 1


def test_single_class_rejected():
    with pytest.raises(F.ForestError):
        F.fit(np.zeros((5, 2)), np.zeros(5, dtype=int))


def leaf_tree(cls, k=2):
    value = np.zeros((1, k))
    value[0, cls] = 1
    return F.DecisionTree(np.array([-1]), np.zeros(1), np.array([-1]), np.array([-1]), value)


def test_predict_unanimous_and_tie():
    x = np.zeros(278)
    forest = F.Forest([leaf_tree(1)] * 4, 2, 278, 17, 0)
    label, proba = F.predict(forest, x)
    assert label == 1 and proba[1] == 1.0
    tied = F.Forest([leaf_tree(1)] * 5 + [leaf_tree(0)] * 5, 2, 278, 17, 0)
    label, proba = F.predict(tied, x)
    assert label == 0 and list(proba) == [0.5, 0.5]


def test_predict_dimension_mismatch():
    forest = F.Forest([leaf_tree(0)], 2, 278, 17, 0)
    with pytest.raises(F.ForestError):
        F.predict(forest, np.zeros(277))


@pytest.mark.parametrize("warp", [np.exp, np.arctan, lambda a: 3 * a - 7, np.cbrt])
def test_monotone_rescaling_invariance(warp):
    # midpoints do not commute with the warp between observed values, so the
    # argmax is compared on the training rows themselves
    rng = np.random.default_rng(5)
    X = rng.normal(size=(120, 4))
    y = (X[:, 1] - 0.5 * X[:, 2] > 0).astype(int)
    X2 = X.copy()
    X2[:, 1] = warp(X[:, 1])
    a = F.fit(X, y, n_trees=15, seed=2)
    b = F.fit(X2, y, n_trees=15, seed=2)
    assert np.array_equal(a.predict(X), b.predict(X2))
    for ta, tb in zip(a.trees, b.trees):
        assert np.array_equal(ta.feature, tb.feature)


@pytest.mark.parametrize("seed", range(5))
def test_forest_at_least_single_tree_training_accuracy(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(150, 6))
    y = ((X[:, 0] * X[:, 1] > 0) ^ (X[:, 2] > 1)).astype(int)
    tree = F.fit(X, y, n_trees=1, m=6, max_depth=4, seed=seed, bootstrap=False)
    forest = F.fit(X, y, n_trees=25, m=6, max_depth=4, seed=seed, bootstrap=False)
    assert np.mean(forest.predict(X) == y) >= np.mean(tree.predict(X) == y)


def test_serialization_round_trip():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(200, 278))
    y = rng.integers(0, 3, 200)
    forest = F.fit(X, y, n_trees=8, seed=4, classes=["a", "b", "c"])
    back = F.Forest.from_bytes(forest.to_bytes())
    probe = rng.normal(size=(1000, 278))
    assert np.array_equal(back.predict_proba(probe), forest.predict_proba(probe))
    assert back.classes == ["a", "b", "c"]
    assert forest.to_bytes()[:8] == b"BLRF0001"
    assert "tree 0" in forest.to_text()


def test_corrupt_checkpoint():
    X, y = separable()
    blob = F.fit(X, y, n_trees=2).to_bytes()
    with pytest.raises(F.ForestError):
        F.Forest.from_bytes(blob[:-5])
    with pytest.raises(F.ForestError):
        F.Forest.from_bytes(b"XXXX" + blob[4:])


# --- metrics ------------------------------------------------------------------

def test_macro_f1_perfect_and_wrong():
    y = np.array([0, 1, 1, 0, 2])
    assert F.macro_f1(y, y, 3) == 1.0
    assert F.macro_f1(1 - np.array([0, 1, 1, 0]), np.array([0, 1, 1, 0]), 2) == 0.0


def test_macro_f1_confusion_hand_oracle():
    # 127 true positives and 7 false negatives; FP/TN picked for a 277-sample test set
    tp, fn, fp, tn = 127, 7, 18, 125
    labels = np.array([1] * (tp + fn) + [0] * (fp + tn))
    pred = np.array([1] * tp + [0] * fn + [1] * fp + [0] * tn)
    f1_pos = Fraction(2 * tp, 2 * tp + fp + fn)
    f1_neg = Fraction(2 * tn, 2 * tn + fn + fp)
    assert F.macro_f1(pred, labels, 2) == pytest.approx(float((f1_pos + f1_neg) / 2), rel=1e-15)


def test_macro_f1_skips_absent_class():
    assert F.macro_f1([0, 1], [0, 1], 5) == 1.0


def test_macro_f1_empty():
    with pytest.raises(F.ForestError):
        F.macro_f1([], [], 2)


def test_report_confusion_sums():
    rng = np.random.default_rng(0)
    y, p = rng.integers(0, 4, 90), rng.integers(0, 4, 90)
    rep = F.classification_report(p, y, 4)
    assert np.sum(rep["confusion"]) == 90
