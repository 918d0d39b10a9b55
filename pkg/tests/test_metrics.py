import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adam_pipe.data_model import FoveaCoordinate
from adam_pipe.metrics import (
    MetricsConfig,
    auc,
    dice,
    f1_detection,
    fovea_error,
    mean_dice,
    mean_fovea_error,
    roc_curve,
)
from oracles import pairwise_auc


@pytest.mark.parametrize("scores, labels, expected", [
    ([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1], 0.75),
    ([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1], 1.0),
    ([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1], 0.5),
])
def test_auc_cases(scores, labels, expected):
    assert auc(scores, labels) == pytest.approx(expected, abs=1e-12)


def test_auc_matches_pairwise_oracle(rng):
    for n in (2, 3, 10, 57, 200, 500):
        for _ in range(3):
            labels = rng.integers(0, 2, n)
            labels[0], labels[1] = 0, 1
            scores = np.round(rng.random(n), 2)  # rounding forces ties
            assert abs(auc(scores, labels) - pairwise_auc(scores, labels)) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1000).map(lambda v: v / 1000), st.integers(0, 1)), min_size=2, max_size=40))
def test_auc_monotone_invariance_and_complement(pairs):
    scores = np.array([p[0] for p in pairs])
    labels = np.array([p[1] for p in pairs])
    if labels.min() == labels.max():
        return
    a = auc(scores, labels)
    assert auc(scores ** 3 + 2, labels) == pytest.approx(a, abs=1e-12)
    assert auc(-scores, labels) == pytest.approx(1 - a, abs=1e-12)


def test_auc_needs_both_classes():
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])


def test_roc_curve_endpoints():
    fpr, tpr = roc_curve([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    assert (fpr[0], tpr[0]) == (0, 0) and (fpr[-1], tpr[-1]) == (1, 1)
    assert np.trapezoid(tpr, fpr) == pytest.approx(0.75)


def test_dice_cases():
    a = np.zeros((4, 4))
    b = np.zeros((4, 4))
    assert dice(a, b) == 1.0
    a[0, :2] = 1
    assert dice(a, b) == 0.0
    b[0, 1:4] = 1
    assert dice(a, b) == pytest.approx(0.4)
    assert dice(a, a) == 1.0
    with pytest.raises(ValueError):
        dice(a, np.zeros((3, 3)))


def test_mean_dice_empty_policy():
    empty = np.zeros((2, 2))
    full = np.ones((2, 2))
    pairs = [(empty, empty), (full, empty)]
    assert mean_dice(pairs, "one") == 0.5
    assert mean_dice(pairs, "exclude") == 0.0


def test_f1_cases():
    assert f1_detection([1, 1, 0, 0], [1, 0, 1, 0]) == pytest.approx(0.5)
    assert f1_detection([1, 1, 1, 0], [1, 1, 0, 0]) == pytest.approx(0.8)
    # TP=2, FP=1, FN=1
    assert f1_detection([1, 1, 1, 0], [1, 1, 0, 1]) == pytest.approx(0.6667, abs=1e-4)
    assert f1_detection([1, 0, 1], [1, 0, 1]) == 1.0
    assert f1_detection([0, 0], [0, 0]) == 1.0
    assert f1_detection([1, 0], [0, 0]) == 0.0


def test_fovea_error_cases():
    assert fovea_error(FoveaCoordinate(3, 4), FoveaCoordinate(0, 0)) == 5.0
    assert fovea_error((1, 1), (1, 1)) == 0.0


def test_mean_fovea_error_penalty():
    gts = {"a": FoveaCoordinate(0, 0), "b": FoveaCoordinate(10, 10)}
    preds = {"a": FoveaCoordinate(3, 4)}
    mean, per = mean_fovea_error(preds, gts, penalty=15.0)
    assert mean == 10.0 and per == {"a": 5.0, "b": 15.0}
    mean, per = mean_fovea_error(preds, gts, shapes={"b": (30, 40)})
    assert per["b"] == 50.0
    with pytest.raises(ValueError):
        mean_fovea_error(preds, gts)


def test_metrics_config():
    assert MetricsConfig(empty_dice="zero").problems()
    assert not math.isnan(mean_dice([(np.ones(2), np.ones(2))]))
