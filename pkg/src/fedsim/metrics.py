"""Model comparison metrics used throughout the experiments."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedsim.datagen import FederatedDataset, sign

ZERO_NORM = 1e-300


class ZeroVector(ValueError):
    pass


class MissingTruth(ValueError):
    pass


@dataclass
class ComparisonReport:
    scaled_diff: float
    directional_diff: float
    generalization_error: float | None = None
    accuracy: float | None = None
    min_margin_global: float | None = None


def scaled_diff(w1, w2, d: int | None = None) -> float:
    """``||w1 - w2|| / d`` (``d`` defaults to the vector length)."""
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    if w1.shape != w2.shape:
        raise ValueError(f"shape mismatch {w1.shape} vs {w2.shape}")
    return float(np.linalg.norm(w1 - w2)) / (w1.size if d is None else d)


def _unit(w):
    w = np.asarray(w, dtype=np.float64)
    n = float(np.linalg.norm(w))
    if n <= ZERO_NORM:
        raise ZeroVector("cannot normalize a zero vector")
    return w / n


def directional_diff(w1, w2) -> float:
    """Distance between the unit vectors of ``w1`` and ``w2`` (in [0, 2])."""
    return float(np.linalg.norm(_unit(w1) - _unit(w2)))


def generalization_error(w, fed: FederatedDataset) -> float:
    """``(1/(M d)) sum_i ||w - w_i*||^2`` for isotropic Gaussian features."""
    w = np.asarray(w, dtype=np.float64)
    total = 0.0
    for i, node in enumerate(fed.nodes):
        if node.w_star is None:
            raise MissingTruth(f"node {i} has no ground truth")
        diff = w - node.w_star
        total += float(diff @ diff)
    return total / (fed.M * fed.dim)


def accuracy(w, test: FederatedDataset) -> float:
    """Fraction of test samples with ``sign(x^T w) == y`` (``sign(0) = +1``)."""
    w = np.asarray(w, dtype=np.float64)
    hits = total = 0
    for node in test.nodes:
        hits += int(np.sum(sign(node.X @ w) == node.y))
        total += node.n_samples
    return hits / total
