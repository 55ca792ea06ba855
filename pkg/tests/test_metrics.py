import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from genrefusion.metrics import accuracy, confusion_matrix, evaluate, f1_scores, logloss

import oracles


def test_perfect_predictor():
    truth = [0, 1, 1, 2, 2, 2]
    cm = confusion_matrix(truth, truth, 4)
    assert np.array_equal(cm, np.diag([1, 2, 3, 0]))
    f1, macro = f1_scores(confusion_matrix(truth, truth, 3))
    assert f1.tolist() == [1.0, 1.0, 1.0] and macro == 1.0


def test_empty_confusion():
    assert not confusion_matrix([], [], 5).any()


def test_confusion_errors():
    with pytest.raises(ValueError):
        confusion_matrix([0, 1], [0], 2)
    with pytest.raises(ValueError):
        confusion_matrix([0, 2], [0, 1], 2)


def test_confusion_counting_oracle(rng):
    preds, truth = rng.integers(0, 16, 1000), rng.integers(0, 16, 1000)
    cm = confusion_matrix(preds, truth, 16)
    assert np.array_equal(cm, oracles.confusion(preds, truth, 16))
    assert cm.sum() == 1000


def test_binary_hand_computed_f1():
    cm = confusion_matrix([1, 1, 0, 0], [1, 0, 0, 0], 2)
    f1, _ = f1_scores(cm)
    # class 1: P = 1/2, R = 1
    assert f1[1] == pytest.approx(2 / 3, abs=1e-15)
    # class 0: P = 1, R = 2/3
    assert f1[0] == pytest.approx(0.8, abs=1e-15)


def test_absent_class_scores_zero():
    f1, macro = f1_scores(confusion_matrix([0, 1], [0, 1], 3))
    assert f1.tolist() == [1.0, 1.0, 0.0]
    assert macro == pytest.approx(2 / 3)


def test_logloss_cases(rng):
    assert logloss(np.eye(4), [0, 1, 2, 3]) == pytest.approx(0.0, abs=1e-12)
    assert abs(logloss(np.full((7, 16), 1 / 16), rng.integers(0, 16, 7)) - math.log(16)) < 1e-9
    assert logloss([[0.0, 1.0]], [0]) == pytest.approx(-math.log(1e-15))
    with pytest.raises(ValueError):
        logloss(np.full((2, 3), 0.5), [0, 1])
    with pytest.raises(ValueError):
        logloss(np.full((2, 2), 0.5), [0])


@pytest.mark.parametrize("seed", range(5))
def test_logloss_summation_oracle(seed):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(16), size=50)
    truth = rng.integers(0, 16, 50)
    ref = -sum(math.log(max(probs[i, truth[i]] / sum(probs[i]), 1e-15)) for i in range(50)) / 50
    assert abs(logloss(probs, truth) - ref) < 1e-12


def test_accuracy_cases(rng):
    assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert accuracy([0, 0], [1, 1]) == 0.0
    with pytest.raises(ValueError):
        accuracy([], [])
    p, t = rng.integers(0, 5, 300), rng.integers(0, 5, 300)
    assert accuracy(p, t) == sum(int(a == b) for a, b in zip(p, t)) / 300


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=1, max_size=80),
       st.permutations(range(6)))
def test_accuracy_trace_and_macro_permutation(pairs, perm):
    preds, truth = np.array(pairs).T
    cm = confusion_matrix(preds, truth, 6)
    assert accuracy(preds, truth) == np.trace(cm) / len(pairs)
    perm = np.array(perm)
    cm_p = confusion_matrix(perm[preds], perm[truth], 6)
    assert f1_scores(cm_p)[1] == pytest.approx(f1_scores(cm)[1], abs=1e-12)


def test_evaluate_report_schema(rng):
    probs = rng.dirichlet(np.ones(3), size=20)
    truth = rng.integers(0, 3, 20)
    rep = evaluate(probs, truth, ["a", "b", "c"])
    data = json.loads(rep.to_json())
    assert set(data) == {"labels", "precision", "recall", "f1", "support", "macro_f1",
                         "accuracy", "logloss", "confusion"}
    assert sum(data["support"]) == 20
    assert all(0 <= v <= 1 for v in data["f1"] + data["precision"] + data["recall"])
    table = rep.table()
    assert table.splitlines()[0].startswith("Genre") and "Macro F1" in table
