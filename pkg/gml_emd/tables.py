"""
Representative transportation tables and the aggregated matrices used to
linearize the criterion.
"""

import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize

from .criterion import select_neighbors
from .models import ConvergenceError, TrainingSet, TransportPlan, ValidationError, as_histogram

logger = logging.getLogger(__name__)

SMOOTHING = 1e-6
TABLE_KINDS = ("independence", "typical")


def _marginals(r, c) -> Tuple[np.ndarray, np.ndarray]:
    r = as_histogram(r, name="r")
    c = as_histogram(c, name="c")
    if r.shape != c.shape:
        raise ValidationError(f"marginals differ in dimension: {r.shape[0]} vs {c.shape[0]}")
    return r, c


def _entries(X) -> np.ndarray:
    return np.asarray(X.entries if isinstance(X, TransportPlan) else X, dtype=np.float64)


def independence_table(r, c) -> TransportPlan:
    """The product coupling r c^T, the maximal-entropy member of U(r, c)."""
    r, c = _marginals(r, c)
    return TransportPlan(entries=np.outer(r, c), row_marginal=r, col_marginal=c)


def entropy(X) -> float:
    """Shannon entropy in nats, with 0 log 0 = 0."""
    X = _entries(X)
    if np.any(X < 0):
        raise ValidationError("entropy is undefined for negative entries")
    positive = X[X > 0]
    return float(-np.sum(positive * np.log(positive)))


def typical_objective(X) -> float:
    """g(X) = sum (X+1) ln(X+1) - X ln X, maximized over U(r, c) by the typical table."""
    X = _entries(X)
    if np.any(X < 0):
        raise ValidationError("g is undefined for negative entries")
    positive = X[X > 0]
    return float(np.sum((X + 1.0) * np.log1p(X)) - np.sum(positive * np.log(positive)))


def smooth_histogram(r: np.ndarray, eps: float = SMOOTHING) -> np.ndarray:
    """Mix with the uniform histogram so that every bin is positive."""
    r = (1.0 - eps) * np.asarray(r, dtype=np.float64) + eps / len(r)
    return r / r.sum()


def _dual_objective(u, v, r, c) -> float:
    s = u[:, None] + v[None, :]
    if np.any(s <= 0):
        return math.inf
    return float(r @ u + c @ v - np.sum(np.log(-np.expm1(-s))))


def _table_from_duals(u, v) -> np.ndarray:
    return 1.0 / np.expm1(u[:, None] + v[None, :])


def _newton_direction(T, gu, gv) -> Tuple[np.ndarray, np.ndarray]:
    """
    Solve the Newton system by eliminating the u block.

    The Hessian is [[diag(W 1), W], [W^T, diag(W^T 1)]] with W = T (1 + T): both
    diagonal blocks are diagonal, so eliminating du leaves the d x d Schur
    complement. The objective is flat along (1, -1); adding a multiple of 1 1^T
    removes that direction without changing the solution on its complement.
    """
    W = T * (1.0 + T)
    d1 = W.sum(axis=1)
    d2 = W.sum(axis=0)
    schur = np.diag(d2) - W.T @ (W / d1[:, None])
    schur += np.full_like(schur, d2.mean() / len(d2))
    rhs = -gv + W.T @ (gu / d1)
    dv = cho_solve(cho_factor(schur), rhs)
    du = (-gu - W @ dv) / d1
    return du, dv


def _balance(u, v) -> Tuple[np.ndarray, np.ndarray]:
    """Shift along the flat direction so that min(u) = min(v)."""
    shift = (v.min() - u.min()) / 2.0
    return u + shift, v - shift


def _solve_duals_newton(r, c, tol, max_steps):
    d = len(r)
    u = np.full(d, 0.5 * math.log1p(d * d))
    v = u.copy()
    value = _dual_objective(u, v, r, c)
    for step in range(max_steps + 1):
        T = _table_from_duals(u, v)
        gu = r - T.sum(axis=1)
        gv = c - T.sum(axis=0)
        gnorm = max(np.abs(gu).max(), np.abs(gv).max())
        if gnorm <= tol:
            logger.debug(f"Typical table Newton converged in {step} steps")
            return u, v, gnorm
        if step == max_steps:
            break
        du, dv = _newton_direction(T, gu, gv)
        slope = gu @ du + gv @ dv
        alpha = 1.0
        while alpha > 1e-12:
            un, vn = u + alpha * du, v + alpha * dv
            candidate = _dual_objective(un, vn, r, c)
            if candidate <= value + 1e-4 * alpha * slope:
                break
            alpha /= 2.0
        else:
            break
        u, v = _balance(un, vn)
        value = candidate
    return u, v, gnorm


def _solve_duals_log(r, c, u0, v0, tol):
    """Same program in log coordinates u = exp(a), v = exp(b)."""
    d = len(r)

    def split(ab):
        return np.exp(ab[:d]), np.exp(ab[d:])

    def fun(ab):
        u, v = split(ab)
        return _dual_objective(u, v, r, c)

    def jac(ab):
        u, v = split(ab)
        T = _table_from_duals(u, v)
        return np.concatenate([(r - T.sum(axis=1)) * u, (c - T.sum(axis=0)) * v])

    def hess(ab):
        u, v = split(ab)
        T = _table_from_duals(u, v)
        W = T * (1.0 + T)
        H = np.block([[np.diag(W.sum(axis=1)), W], [W.T, np.diag(W.sum(axis=0))]])
        scale = np.concatenate([u, v])
        grad = np.concatenate([r - T.sum(axis=1), c - T.sum(axis=0)])
        return scale[:, None] * H * scale[None, :] + np.diag(grad * scale)

    start = np.log(np.maximum(np.concatenate([u0, v0]), 1e-8))
    result = minimize(fun, start, jac=jac, hess=hess, method="trust-exact",
                      options={"gtol": tol, "maxiter": 1000})
    u, v = split(result.x)
    T = _table_from_duals(u, v)
    residual = max(np.abs(r - T.sum(axis=1)).max(), np.abs(c - T.sum(axis=0)).max())
    return u, v, residual


def typical_table(r, c, tol: float = 1e-8, max_steps: int = 100) -> TransportPlan:
    """
    Typical table of U(r, c), computed from the minimizer of its convex dual
    program by damped Newton steps.

    Args:
        r: Row histogram
        c: Column histogram
        tol: Gradient infinity-norm at which Newton stops
        max_steps: Newton step cap before switching to the log-parameterized solver

    Returns:
        TransportPlan holding T_pq = 1 / (exp(u_p + v_q) - 1) for the smoothed marginals
    """
    r, c = _marginals(r, c)
    r = smooth_histogram(r)
    c = smooth_histogram(c)
    u, v, residual = _solve_duals_newton(r, c, tol, max_steps)
    if residual > tol:
        logger.warning(f"Newton stalled at residual {residual:.3g}, retrying in log coordinates")
        u, v, residual = _solve_duals_log(r, c, u, v, tol)
        if residual > max(tol, 1e-7):
            raise ConvergenceError(f"typical table did not converge (residual {residual:.3g})",
                                   residual=residual)
    return TransportPlan(entries=_table_from_duals(u, v), row_marginal=r, col_marginal=c)


def _table_entries(kind: str, r: np.ndarray, c: np.ndarray) -> np.ndarray:
    if kind == "independence":
        return independence_table(r, c).entries
    return typical_table(r, c).entries


def half_l1_distances(histograms: np.ndarray) -> np.ndarray:
    """Pairwise transportation distances under the uniform ground metric (half l1)."""
    return 0.5 * np.abs(histograms[:, None, :] - histograms[None, :, :]).sum(axis=2)


def aggregate_xi(train: TrainingSet, k: float = math.inf, kind: str = "typical",
                 executor=None) -> np.ndarray:
    """
    Weighted sum of representative tables over the selected pairs.

    With k infinite every pair i < j contributes twice its weight; with finite k
    each histogram contributes its k nearest similar and dissimilar neighbours,
    ranked with the uniform ground metric.

    Args:
        train: Training set with normalized weights
        k: Neighbourhood size (math.inf for all pairs)
        kind: 'independence' or 'typical'
        executor: Optional concurrent.futures executor for the table computations

    Returns:
        d x d matrix Xi_k
    """
    if kind not in TABLE_KINDS:
        raise ValidationError(f"unknown table kind {kind!r}, expected one of {TABLE_KINDS}")
    H = train.histograms
    terms: List[Tuple[float, int, int]] = []
    if math.isinf(k):
        for sign in ("+", "-"):
            for i, j in train.pairs(sign):
                terms.append((2.0 * train.weights[i, j], i, j))
        for sign in ("+", "-"):
            neighbors = select_neighbors(np.zeros((train.n, train.n)), train.weights, sign, k)
            _warn_empty(neighbors, sign)
    else:
        distances = half_l1_distances(H)
        for sign in ("+", "-"):
            neighbors = select_neighbors(distances, train.weights, sign, k)
            _warn_empty(neighbors, sign)
            for i in range(train.n):
                for j in neighbors[i]:
                    terms.append((train.weights[i, j], i, j))

    # a table for (j, i) is the transpose of the one for (i, j)
    unordered = sorted({(min(i, j), max(i, j)) for _, i, j in terms})
    jobs = [(kind, H[i], H[j]) for i, j in unordered]
    if executor is None:
        results = [_table_entries(*job) for job in jobs]
    else:
        results = list(executor.map(_table_entries, *zip(*jobs))) if jobs else []
    tables: Dict[Tuple[int, int], np.ndarray] = dict(zip(unordered, results))

    xi = np.zeros((train.dim, train.dim))
    for weight, i, j in terms:
        xi += weight * (tables[(i, j)] if i < j else tables[(j, i)].T)
    logger.info(f"Aggregated {len(terms)} {kind} tables (k={k})")
    return xi


def _warn_empty(neighbors: Dict[int, List[int]], sign: str):
    empty = [i for i, js in neighbors.items() if not js]
    if empty:
        kind = "similar" if sign == "+" else "dissimilar"
        logger.warning(f"{len(empty)} histograms have no {kind} neighbour; their terms are skipped")
