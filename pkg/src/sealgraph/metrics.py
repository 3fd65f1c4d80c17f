"""Classification metrics."""

import numpy as np

from .errors import UsageError


def _check(pred, truth):
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise UsageError(f"{pred.size} predictions for {truth.size} labels")
    return pred, truth


def accuracy(pred, truth):
    pred, truth = _check(pred, truth)
    if pred.size == 0:
        raise UsageError("accuracy of an empty set is undefined")
    return float(np.mean(pred == truth))


def macro_f1(pred, truth, c):
    """Unweighted mean of per-class F1 over all c classes; F1 is 0 when P + R = 0."""
    pred, truth = _check(pred, truth)
    if pred.size and (min(pred.min(), truth.min()) < 0 or max(pred.max(), truth.max()) >= c):
        raise UsageError(f"class index outside [0, {c})")
    scores = []
    for k in range(c):
        tp = np.sum((pred == k) & (truth == k))
        fp = np.sum((pred == k) & (truth != k))
        fn = np.sum((pred != k) & (truth == k))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * precision * recall / (precision + recall) if precision + recall else 0.0)
    return float(np.mean(scores))
