"""
Neighbour-restricted sums of transportation distances, the criterion C_k and
its subgradients.
"""

import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from .metric import vectorize
from .models import (ALL, SubgradEval, TrainingSet, TransportBasis, TransportError,
                     ValidationError)
from .transport import solve_transport

logger = logging.getLogger(__name__)

SIGNS = ("+", "-")


def class_weights(labels) -> np.ndarray:
    """+1 between histograms of the same class, -1 otherwise, 0 on the diagonal."""
    labels = np.asarray(labels)
    weights = np.where(labels[:, None] == labels[None, :], 1.0, -1.0)
    np.fill_diagonal(weights, 0.0)
    return weights


def normalize_weights(train: TrainingSet) -> TrainingSet:
    """
    Rescale weights so that positive weights over pairs i < j sum to 1 and
    negative ones to -1.
    """
    upper = np.triu(train.weights, 1)
    positive = upper[upper > 0].sum()
    negative = -upper[upper < 0].sum()
    if positive == 0 or negative == 0:
        raise ValidationError("weights need at least one positive and one negative pair")
    weights = train.weights.copy()
    weights[weights > 0] /= positive
    weights[weights < 0] /= negative
    return TrainingSet(histograms=train.histograms, weights=weights)


def select_neighbors(distances: np.ndarray, weights: np.ndarray, sign: str,
                     k: float = ALL) -> Dict[int, List[int]]:
    """
    The k nearest neighbours of every point among those with the given weight sign.

    Ties in distance go to the smaller index; when k exceeds the number of
    candidates every candidate is kept.
    """
    if sign not in SIGNS:
        raise ValidationError(f"sign must be '+' or '-', got {sign!r}")
    n = weights.shape[0]
    neighbors = {}
    for i in range(n):
        row = weights[i]
        candidates = [j for j in range(n) if j != i and (row[j] > 0 if sign == "+" else row[j] < 0)]
        if math.isinf(k) or k >= len(candidates):
            neighbors[i] = candidates
        else:
            candidates.sort(key=lambda j: (distances[i, j], j))
            neighbors[i] = candidates[:int(k)]
    return neighbors


def _solve_pair(M, r, c, warm):
    return solve_transport(M, r, c, warm=warm)


def eval_S(train: TrainingSet, M: np.ndarray, sign: str, k: float = ALL,
           warm: Optional[Dict[Tuple[int, int], TransportBasis]] = None,
           executor=None) -> SubgradEval:
    """
    Value and one subgradient of S+_k or S-_k at M.

    Args:
        train: Training set
        M: Ground metric
        sign: '+' for the similar pairs, '-' for the dissimilar ones
        k: Neighbourhood size, ALL for every neighbour
        warm: Bases from a previous evaluation, keyed by pair (i, j), i < j
        executor: Optional concurrent.futures executor for the pair solves

    Returns:
        SubgradEval with the weighted sum of distances over selected pairs, the
        matching sum of optimal plans as an upper-triangle vector, and the plans
    """
    if sign not in SIGNS:
        raise ValidationError(f"sign must be '+' or '-', got {sign!r}")
    M = np.asarray(M, dtype=np.float64)
    H = train.histograms
    warm = warm or {}
    pairs = train.pairs(sign)

    jobs = [(M, H[i], H[j], warm.get((i, j))) for i, j in pairs]
    results = {}
    if executor is None:
        for pair, job in zip(pairs, jobs):
            results[pair] = _checked_solve(pair, job)
    else:
        futures = [executor.submit(_solve_pair, *job) for job in jobs]
        for pair, future in zip(pairs, futures):
            try:
                results[pair] = future.result()
            except Exception as e:
                raise TransportError(f"transport solve failed for pair {pair}: {e}", pair=pair) from e

    distances = np.full((train.n, train.n), np.inf)
    for (i, j), result in results.items():
        distances[i, j] = distances[j, i] = result.value
    neighbors = select_neighbors(distances, train.weights, sign, k)

    G = np.zeros((train.dim, train.dim))
    value = 0.0
    for i in range(train.n):
        for j in neighbors[i]:
            result = results[(i, j)] if i < j else results[(j, i)]
            plan = result.plan.entries if i < j else result.plan.entries.T
            G += train.weights[i, j] * plan
            value += train.weights[i, j] * result.value

    subgrad = vectorize(G) + vectorize(G.T)
    return SubgradEval(value=value, subgrad=subgrad, plans=results, neighbors=neighbors)


def _checked_solve(pair, job):
    try:
        return _solve_pair(*job)
    except Exception as e:
        raise TransportError(f"transport solve failed for pair {pair}: {e}", pair=pair) from e


def eval_Ck(train: TrainingSet, M: np.ndarray, k: float = ALL, executor=None) -> float:
    """C_k(M) = S+_k(M) + S-_k(M)."""
    return (eval_S(train, M, "+", k, executor=executor).value
            + eval_S(train, M, "-", k, executor=executor).value)


def eval_C_infinity(train: TrainingSet, M: np.ndarray) -> float:
    """2 * sum over pairs i < j of w_ij G_ij(M)."""
    M = np.asarray(M, dtype=np.float64)
    total = 0.0
    for sign in SIGNS:
        for i, j in train.pairs(sign):
            total += 2.0 * train.weights[i, j] * solve_transport(M, train.histograms[i],
                                                                 train.histograms[j]).value
    return total
