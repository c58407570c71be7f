"""
Projected subgradient descent on the difference-of-convex criterion, and its
initial points.
"""

import logging
import math
from typing import List, Optional

import numpy as np

from .criterion import eval_Ck, eval_S
from .metric import (DEFAULT_TOL, frobenius_norm, is_metric, normalize_unit, project_feasible,
                     solve_p3, symmetrize, uniform_metric, vectorize)
from .models import (ALL, DescentError, DescentResult, DescentTrace, GmlError, GmlParams,
                     StepRecord, TrainingSet, ValidationError)
from .tables import TABLE_KINDS, aggregate_xi

logger = logging.getLogger(__name__)

INIT_KINDS = ("uniform",) + TABLE_KINDS


def initial_point(train: TrainingSet, kind: str = "typical", k: float = ALL,
                  lam: float = 1.0, mix: float = 1.0, executor=None) -> np.ndarray:
    """
    Initial metric for the descent.

    Args:
        train: Training set with normalized weights
        kind: 'uniform', 'independence' or 'typical'
        k: Neighbourhood size used to select the aggregated pairs
        lam: Weight of the linear term against the squared norm
        mix: Weight of the table-based metric against the uniform one
        executor: Optional executor for the table computations

    Returns:
        Metric matrix of unit Frobenius norm
    """
    if kind not in INIT_KINDS:
        raise ValidationError(f"unknown initial point kind {kind!r}, expected one of {INIT_KINDS}")
    if not 0 <= mix <= 1:
        raise ValidationError(f"mix must lie in [0, 1], got {mix}")
    uniform = normalize_unit(uniform_metric(train.dim))
    if kind == "uniform":
        return uniform

    xi = aggregate_xi(train, k, kind, executor=executor)
    if not np.any(xi):
        logger.warning("Aggregated table matrix is zero, using the uniform metric")
        return uniform
    M0 = solve_p3(xi, lam)
    # below this norm the projection is Dykstra residue, not signal
    pairs = train.dim * (train.dim - 1) / 2
    noise = 10 * DEFAULT_TOL * math.sqrt(pairs) * (lam / 2.0) * float(np.abs(xi).max())
    if frobenius_norm(M0) <= noise:
        logger.warning("Initial projection collapsed to zero, using the uniform metric")
        return uniform
    M0 = normalize_unit(M0)
    if mix < 1:
        M0 = mix * M0 + (1.0 - mix) * uniform
    return normalize_unit(M0)


def _stalled(history: List[float], window: int, eps: float) -> bool:
    """Relative improvement over the last `window` steps below eps."""
    if len(history) <= window:
        return False
    old, new = history[-1 - window], history[-1]
    return (old - new) / max(abs(old), 1e-300) < eps


def _check_feasible(M0: np.ndarray, dim: int):
    if M0.shape != (dim, dim):
        raise ValidationError(f"initial metric must be {dim} x {dim}, got {M0.shape}")
    check = is_metric(M0, tol=1e-6)
    if not check:
        raise ValidationError(f"initial metric is not a metric: {check.violations[:3]}")
    if frobenius_norm(M0) > 1 + 1e-9:
        raise ValidationError(f"initial metric lies outside the unit ball (norm {frobenius_norm(M0):.6g})")


def gml_descent(train: TrainingSet, M0: np.ndarray, params: Optional[GmlParams] = None,
                executor=None) -> DescentResult:
    """
    Minimize C_k over metrics in the unit ball.

    Each outer round linearizes the concave part S+_k at the current point; the
    inner loop runs projected subgradient steps t0 / sqrt(t) on the resulting
    convex surrogate, t counting steps across both loops.

    Args:
        train: Training set with normalized weights
        M0: Feasible initial metric
        params: Descent parameters
        executor: Optional executor for the per-pair transport solves

    Returns:
        DescentResult with the best (or last) metric and the full trace
    """
    params = params or GmlParams()
    M0 = np.asarray(M0, dtype=np.float64)
    d = train.dim
    _check_feasible(M0, d)
    k = params.k
    trace = DescentTrace()
    warm_plus, warm_minus = {}, {}
    outer_values: List[float] = []
    m_out = vectorize(M0)
    t = 1
    p = 0
    try:
        for p in range(params.p_max):
            M_out = symmetrize(m_out, d)
            plus = eval_S(train, M_out, "+", k, warm=warm_plus, executor=executor)
            if params.warm_start:
                warm_plus = plus.bases()

            m_in = m_out.copy()
            inner_values: List[float] = []
            z_out = math.nan
            for q in range(params.q_max):
                M_in = symmetrize(m_in, d)
                minus = eval_S(train, M_in, "-", k, warm=warm_minus, executor=executor)
                if params.warm_start:
                    warm_minus = minus.bases()
                z_in = minus.value + plus.value + float(plus.subgrad @ (m_in - m_out))
                if q == 0:
                    # the linear term vanishes at the linearization point
                    z_out = z_in
                    trace.offer(p, z_in, M_in)

                step = (params.t0 / math.sqrt(t)) * (plus.subgrad + minus.subgrad)
                target = symmetrize(m_in - step, d)
                M_next = project_feasible(target)
                m_next = vectorize(M_next)
                trace.steps.append(StepRecord(
                    p=p, q=q, t=t, z_in=z_in, z_out=z_out,
                    step_norm=float(np.linalg.norm(m_next - m_in)),
                    residual=frobenius_norm(M_next - target)))
                inner_values.append(z_in)
                m_in = m_next
                t += 1
                if q + 1 >= params.min_inner(p) and _stalled(inner_values, params.inner_window,
                                                             params.progress_eps):
                    break

            logger.info(f"Outer round {p}: C_k={z_out:.6g} after {len(inner_values)} inner steps")
            m_out = m_in
            outer_values.append(z_out)
            if _stalled(outer_values, params.outer_window, params.progress_eps):
                break

        M_last = symmetrize(m_out, d)
        trace.last_metric = M_last
        trace.last_value = eval_Ck(train, M_last, k, executor=executor)
        trace.offer(p + 1, trace.last_value, M_last)
    except GmlError as e:
        raise DescentError(f"descent failed: {e}", trace) from e

    metric = trace.best_metric if params.return_mode == "best" else trace.last_metric
    logger.info(f"Descent finished: best C_k={trace.best_value:.6g}, last C_k={trace.last_value:.6g}")
    return DescentResult(metric=metric, trace=trace)
