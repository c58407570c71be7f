"""
Baseline histogram distances and nearest-neighbour evaluation.
"""

from typing import Callable, Union

import numpy as np

from .models import KnnCurves, LabeledDataset, ValidationError
from .transport import pairwise_emd

BASELINES = ("l1", "l2", "hellinger")
KAPPA_GRID = tuple(range(1, 16, 2))


def baseline_distance(kind: str, r, c) -> float:
    """l1, l2 or Hellinger (l2 between square roots) distance."""
    r = np.asarray(r, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if kind == "l1":
        return float(np.abs(r - c).sum())
    if kind == "l2":
        return float(np.linalg.norm(r - c))
    if kind == "hellinger":
        return float(np.linalg.norm(np.sqrt(r) - np.sqrt(c)))
    raise ValidationError(f"unknown baseline distance {kind!r}, expected one of {BASELINES}")


def baseline_matrix(kind: str, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise baseline distances between the rows of A and B."""
    if kind == "hellinger":
        A, B = np.sqrt(A), np.sqrt(B)
        kind = "l2"
    diff = A[:, None, :] - B[None, :, :]
    if kind == "l1":
        return np.abs(diff).sum(axis=2)
    if kind == "l2":
        return np.sqrt((diff ** 2).sum(axis=2))
    raise ValidationError(f"unknown baseline distance {kind!r}, expected one of {BASELINES}")


def distance_matrix(dist: Union[str, np.ndarray, Callable], A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """
    Distances between the rows of A and B for a baseline name, a ground
    metric matrix, or any callable dist(r, c).
    """
    if isinstance(dist, str):
        return baseline_matrix(dist, A, B)
    if isinstance(dist, np.ndarray):
        return pairwise_emd(A, B, dist)
    return np.array([[dist(r, c) for c in B] for r in A], dtype=np.float64).reshape(len(A), len(B))


def knn_curves(D: np.ndarray, train_labels, test_labels, kappa_max: int) -> KnnCurves:
    """
    Recall and majority-vote error for kappa = 1..kappa_max.

    Args:
        D: test x train distance matrix
        train_labels: Labels of the train points
        test_labels: Labels of the test points
        kappa_max: Largest neighbourhood evaluated

    Returns:
        KnnCurves; ties in distance go to the smaller train index, ties in
        votes to the smaller label
    """
    train_labels = np.asarray(train_labels)
    test_labels = np.asarray(test_labels)
    n_test, n_train = D.shape
    if kappa_max < 1 or kappa_max > n_train:
        raise ValidationError(f"kappa_max must lie in [1, {n_train}], got {kappa_max}")
    classes = np.unique(train_labels)
    recall = np.zeros(kappa_max)
    error = np.zeros(kappa_max)
    for row, label in zip(D, test_labels):
        order = np.lexsort((np.arange(n_train), row))[:kappa_max]
        neighbour_labels = train_labels[order]
        same = np.cumsum(neighbour_labels == label)
        votes = np.cumsum(neighbour_labels[:, None] == classes[None, :], axis=0)
        predicted = classes[np.argmax(votes, axis=1)]
        recall += same / np.arange(1, kappa_max + 1)
        error += predicted != label
    return KnnCurves(recall=recall / n_test, error=error / n_test)


def knn_eval(dist, data: LabeledDataset, kappa_max: int = max(KAPPA_GRID)) -> KnnCurves:
    """Nearest-neighbour recall and error of test points against train points."""
    train_x, train_y = data.train
    test_x, test_y = data.test
    if len(test_x) == 0:
        raise ValidationError("dataset has no test points")
    if kappa_max > len(train_x):
        raise ValidationError(f"kappa_max {kappa_max} exceeds the {len(train_x)} train points")
    D = distance_matrix(dist, test_x, train_x)
    return knn_curves(D, train_y, test_y, kappa_max)
