import numpy as np
import pytest

from sealgraph.errors import UsageError
from sealgraph.metrics import accuracy, macro_f1
from sealgraph.numerics import make_rng


def confusion_scores(pred, truth, c):
    """Accuracy and Macro-F1 read off a confusion matrix."""
    cm = np.zeros((c, c), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    acc = np.trace(cm) / cm.sum()
    f1 = []
    for k in range(c):
        tp = cm[k, k]
        denom = cm[:, k].sum() + cm[k, :].sum()
        f1.append(2 * tp / denom if denom else 0.0)
    return acc, float(np.mean(f1))


def test_examples():
    y = np.array([0, 1, 2, 1])
    assert accuracy(y, y) == 1.0 and macro_f1(y, y, 3) == 1.0
    truth = np.array([0] * 5 + [1] * 5)
    pred = np.zeros(10, dtype=int)
    assert accuracy(pred, truth) == 0.5
    assert macro_f1(pred, truth, 2) == pytest.approx(1 / 3)


def test_absent_class_counts_as_zero():
    y = np.array([0, 1, 0, 1])
    assert macro_f1(y, y, 3) == pytest.approx(2 / 3)


def test_errors():
    with pytest.raises(UsageError):
        accuracy([0, 1], [0])
    with pytest.raises(UsageError):
        macro_f1([0, 1], [0], 2)
    with pytest.raises(UsageError):
        macro_f1([0, 3], [0, 1], 3)
    with pytest.raises(UsageError):
        accuracy([], [])


def test_agrees_with_confusion_matrix_on_random_vectors():
    rng = make_rng(21)
    for _ in range(1000):
        c = int(rng.integers(2, 8))
        n = int(rng.integers(1, 60))
        truth = rng.integers(0, c, n)
        pred = np.where(rng.random(n) < 0.5, truth, rng.integers(0, c, n))
        acc, f1 = confusion_scores(pred, truth, c)
        assert accuracy(pred, truth) == pytest.approx(acc, abs=1e-12)
        assert macro_f1(pred, truth, c) == pytest.approx(f1, abs=1e-12)
