"""Balanced evaluation metrics for two-class frame predictions."""

import numpy as np


def average_accuracy(predicted, actual):
    """(acc_pos, acc_neg, average) of hard class predictions.

    Both arrays hold 0/1 class values over the same frames.  The average
    weighs both classes equally regardless of their frequency; a class
    with no frames makes the metric undefined and raises ValueError.
    """
    predicted = np.asarray(predicted)
    actual = np.asarray(actual)
    if predicted.shape != actual.shape:
        raise ValueError("prediction/label shapes differ")
    pos = actual == 1
    neg = actual == 0
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("average accuracy needs both classes present")
    acc_p = float((predicted[pos] == 1).sum() / n_pos)
    acc_n = float((predicted[neg] == 0).sum() / n_neg)
    return acc_p, acc_n, (acc_p + acc_n) / 2.0


def balanced_or_plain_accuracy(predicted, actual) -> float:
    """Average accuracy, or the plain hit rate when a class is absent."""
    try:
        return average_accuracy(predicted, actual)[2]
    except ValueError:
        predicted = np.asarray(predicted)
        actual = np.asarray(actual)
        if actual.size == 0:
            raise
        return float((predicted == actual).mean())
