"""Per-class balanced accuracy."""

import numpy as np
import pytest

from lanegap.metrics import average_accuracy, balanced_or_plain_accuracy


def test_all_correct():
    assert average_accuracy([1, 0, 1, 0], [1, 0, 1, 0]) == (1.0, 1.0, 1.0)


def test_constant_positive_predictor():
    preds = [1, 1, 1, 1, 1]
    labels = [1, 1, 0, 1, 0]
    assert average_accuracy(preds, labels) == (1.0, 0.0, 0.5)


def test_mixed_counts():
    labels = [1] * 10 + [0] * 5
    preds = [1] * 9 + [0] + [0] * 3 + [1] * 2
    acc_p, acc_n, acc = average_accuracy(preds, labels)
    assert acc_p == pytest.approx(0.9)
    assert acc_n == pytest.approx(0.6)
    assert acc == pytest.approx(0.75)


def test_average_is_exact_mean():
    acc_p, acc_n, acc = average_accuracy([1, 0, 0], [1, 1, 0])
    assert acc == (acc_p + acc_n) / 2.0


@pytest.mark.parametrize("labels", [[1, 1, 1], [0, 0, 0]])
def test_single_class_rejected(labels):
    with pytest.raises(ValueError):
        average_accuracy([1, 0, 1], labels)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        average_accuracy([1, 0], [1, 0, 1])


def test_balanced_or_plain_falls_back():
    # degenerate single-class labels: plain hit rate
    assert balanced_or_plain_accuracy([1, 1, 0], [1, 1, 1]) == pytest.approx(2 / 3)
    # both classes present: same as the balanced metric
    both = balanced_or_plain_accuracy([1, 1, 0, 0], [1, 0, 1, 0])
    assert both == average_accuracy([1, 1, 0, 0], [1, 0, 1, 0])[2]


def test_balanced_or_plain_rejects_empty():
    with pytest.raises(ValueError):
        balanced_or_plain_accuracy([], [])
