import numpy as np
import pytest

from fedsim.datagen import CLASSIFICATION, REGRESSION, FederatedDataset, NodeDataset
from fedsim.metrics import ZeroVector, MissingTruth, accuracy, directional_diff, generalization_error, scaled_diff


def test_scaled_diff():
    assert scaled_diff([1, 2], [1, 2]) == 0
    assert scaled_diff([3, 0], [0, 4], 2) == 2.5
    assert scaled_diff([3, 0], [0, 4]) == scaled_diff([0, 4], [3, 0])


def test_directional_diff():
    w = np.array([1.0, -2.0, 0.5])
    assert directional_diff(w, 3.7 * w) == pytest.approx(0, abs=1e-15)
    assert directional_diff(w, -w) == pytest.approx(2)
    assert directional_diff([1, 0], [0, 1]) == pytest.approx(np.sqrt(2))
    with pytest.raises(ZeroVector):
        directional_diff(np.zeros(3), w)


def _fed(truths, task=REGRESSION):
    return FederatedDataset([NodeDataset(np.ones((1, len(t))), [1.0], t) for t in truths], len(truths[0]), task)


def test_generalization_error():
    assert generalization_error([1.0, 2.0], _fed([[1.0, 2.0]])) == 0
    fed = _fed([[1.0, 0.0], [0.0, 1.0]])
    assert generalization_error([0.0, 0.0], fed) == 0.5
    fed2 = _fed([[0.0, 1.0], [1.0, 0.0]])
    w = np.array([0.3, -0.2])
    assert generalization_error(w, fed) == generalization_error(w, fed2)
    with pytest.raises(MissingTruth):
        generalization_error(w, FederatedDataset([NodeDataset(np.ones((1, 2)), [1.0])], 2, REGRESSION))


def test_accuracy(rng):
    X = rng.standard_normal((40, 5))
    w = rng.standard_normal(5)
    y = np.where(X @ w >= 0, 1.0, -1.0)
    test = FederatedDataset([NodeDataset(X[:20], y[:20]), NodeDataset(X[20:], y[20:])], 5, CLASSIFICATION)
    assert accuracy(w, test) == 1.0
    assert accuracy(-w, test) == 0.0
    assert accuracy(np.zeros(5), test) == np.mean(y > 0)
