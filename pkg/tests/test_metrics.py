from fractions import Fraction

import numpy as np
import pytest
from sklearn.metrics import roc_auc_score

from cgmcl.errors import DataError
from cgmcl.trainkit.metrics import (aggregate, auc_score, binary_rates, confusion_matrix,
                                    metrics_from_probs, rates_from_confusion, roc_auc)


def _exact(num, den):
    return float(Fraction(num, den)) if den else 0.0


def test_worked_example():
    r = binary_rates(tp=3, fn=1, tn=4, fp=2)
    assert r["sen"] == 0.75
    assert r["spe"] == pytest.approx(2 / 3, abs=1e-15)
    assert r["ppv"] == 0.6
    assert r["npv"] == 0.8
    assert r["acc"] == 0.7


def test_random_confusions_match_definitions():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        tn, fp, fn, tp = (int(v) for v in rng.integers(0, 50, size=4))
        r = rates_from_confusion(np.array([[tn, fp], [fn, tp]]))
        assert r["sen"] == _exact(tp, tp + fn)
        assert r["spe"] == _exact(tn, tn + fp)
        assert r["ppv"] == _exact(tp, tp + fp)
        assert r["npv"] == _exact(tn, tn + fn)
        assert r["acc"] == _exact(tp + tn, tp + tn + fp + fn)
        if tp + fn:
            assert Fraction(tp, tp + fn) * (tp + fn) == tp


def test_confusion_layout():
    cm = confusion_matrix([0, 0, 1, 1, 1], [0, 1, 1, 1, 0], 2)
    np.testing.assert_array_equal(cm, [[1, 1], [1, 2]])


def test_multiclass_accuracy_is_trace():
    cm = np.array([[5, 1, 0], [2, 3, 1], [0, 0, 4]])
    r = rates_from_confusion(cm)
    assert r["acc"] == 12 / 16
    recalls = [5 / 6, 3 / 6, 4 / 4]
    assert r["sen"] == pytest.approx(np.mean(recalls), abs=1e-15)


def test_balanced_accuracy_equals_mean_recall():
    cm = np.array([[7, 2, 1], [0, 9, 1], [3, 3, 4]])
    r = rates_from_confusion(cm)
    assert r["acc"] == pytest.approx(np.mean(np.diag(cm) / cm.sum(axis=1)), abs=1e-15)


def test_perfect_predictor():
    y = np.array([0, 1, 1, 0, 1])
    rep = metrics_from_probs(y, np.eye(2)[y])
    assert all(v == 1.0 for v in rep.row().values())


def test_constant_predictor_balanced():
    y = np.array([0, 1] * 10)
    rep = metrics_from_probs(y, np.tile([0.6, 0.4], (20, 1)))
    assert rep.acc == 0.5 and rep.auc == 0.5


def test_auc_matches_reference():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(4, 40))
        y = rng.integers(0, 2, size=n)
        if y.min() == y.max():
            continue
        s = np.round(rng.random(n), 1)  # rounding creates ties
        assert roc_auc(y, s) == pytest.approx(roc_auc_score(y, s), abs=1e-12)


def test_multiclass_auc_macro():
    rng = np.random.default_rng(2)
    y = np.array([0, 1, 2] * 10)
    p = rng.dirichlet(np.ones(3), size=30)
    assert auc_score(y, p) == pytest.approx(roc_auc_score(y, p, multi_class="ovr", average="macro"),
                                            abs=1e-12)


def test_single_class_auc_is_nan():
    assert np.isnan(roc_auc([1, 1, 1], [0.2, 0.3, 0.4]))


def softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def test_agreeing_heads_argmax_invariant_to_scale():
    rng = np.random.default_rng(3)
    for _ in range(200):
        a = rng.normal(size=(6, 3))
        b = a + rng.uniform(0, 0.1, size=(6, 3))
        agree = a.argmax(axis=1) == b.argmax(axis=1)
        base = (softmax(a) + softmax(b)).argmax(axis=1)
        for c in (0.1, 3.0, 50.0):
            scaled = (softmax(c * a) + softmax(c * b)).argmax(axis=1)
            assert (scaled[agree] == base[agree]).all()
            assert (scaled[agree] == a.argmax(axis=1)[agree]).all()


def test_aggregate_mean_std():
    y = np.array([0, 1, 0, 1])
    good = metrics_from_probs(y, np.eye(2)[y])
    bad = metrics_from_probs(y, np.eye(2)[1 - y])
    agg = aggregate([good, bad])
    assert agg.acc == 0.5 and agg.std["acc"] == 0.5 and agg.runs == 2
    with pytest.raises(DataError):
        aggregate([])


def test_empty_metrics_rejected():
    with pytest.raises(DataError):
        metrics_from_probs(np.array([], dtype=int), np.zeros((0, 2)))
