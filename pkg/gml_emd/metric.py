"""
The cone of metric matrices and Euclidean projections onto it.
"""

import logging
from functools import lru_cache
from typing import Optional

import numba
import numpy as np

from .models import ConvergenceError, MetricCheck, ValidationError, Violation

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-7


def _square(H, name: str = "matrix") -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise ValidationError(f"{name} has non-finite entries")
    return H


def uniform_metric(d: int) -> np.ndarray:
    """Zero diagonal, ones elsewhere: the ground metric behind half the l1 distance."""
    if d < 2:
        raise ValidationError(f"dimension must be at least 2, got {d}")
    return np.ones((d, d)) - np.eye(d)


def vectorize(M: np.ndarray) -> np.ndarray:
    """Strict upper triangle of M in row-major order."""
    M = np.asarray(M)
    return M[np.triu_indices(M.shape[0], 1)].copy()


def _dim_from_length(m: int) -> int:
    d = int(round((1 + np.sqrt(1 + 8 * m)) / 2))
    if d * (d - 1) // 2 != m:
        raise ValidationError(f"{m} is not the length of a strict upper triangle")
    return d


def symmetrize(v: np.ndarray, d: Optional[int] = None) -> np.ndarray:
    """Symmetric zero-diagonal matrix whose strict upper triangle is v."""
    v = np.asarray(v, dtype=np.float64)
    if d is None:
        d = _dim_from_length(len(v))
    M = np.zeros((d, d))
    iu = np.triu_indices(d, 1)
    M[iu] = v
    return M + M.T


def frobenius_dot(A: np.ndarray, B: np.ndarray) -> float:
    return float(np.sum(np.asarray(A) * np.asarray(B)))


def frobenius_norm(A: np.ndarray) -> float:
    return float(np.linalg.norm(A))


def normalize_unit(M: np.ndarray) -> np.ndarray:
    """M scaled to unit Frobenius norm (the zero matrix is returned unchanged)."""
    norm = frobenius_norm(M)
    return M / norm if norm > 0 else M.copy()


def is_metric(H, tol: float = DEFAULT_TOL) -> MetricCheck:
    """
    Check the four families of metric constraints.

    Args:
        H: Square matrix
        tol: Slack allowed on every constraint

    Returns:
        MetricCheck listing every violated constraint with its magnitude
    """
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValidationError(f"matrix must be square, got shape {H.shape}")
    d = H.shape[0]
    violations = []

    for i in np.flatnonzero(np.abs(np.diag(H)) > tol):
        violations.append(Violation("diagonal", (int(i),), float(abs(H[i, i]))))

    asym = np.abs(H - H.T)
    for i, j in zip(*np.nonzero(np.triu(asym, 1) > tol)):
        violations.append(Violation("symmetry", (int(i), int(j)), float(asym[i, j])))

    off = ~np.eye(d, dtype=bool)
    for i, j in zip(*np.nonzero((H < -tol) & off)):
        violations.append(Violation("nonnegativity", (int(i), int(j)), float(-H[i, j])))

    # excess[i, j, k] = H_ij - H_ik - H_kj
    excess = H[:, :, None] - H[:, None, :] - H.T[None, :, :]
    for i, j, k in zip(*np.nonzero(excess > tol)):
        if i < j and k != i and k != j:
            violations.append(Violation("triangle", (int(i), int(j), int(k)),
                                        float(excess[i, j, k])))

    return MetricCheck(ok=not violations, violations=violations)


@lru_cache(maxsize=None)
def _triangle_constraints(d: int) -> np.ndarray:
    """
    Each row (ab, ac, cb) is the constraint x_ab <= x_ac + x_cb as positions in
    the upper-triangle vector, triangles enumerated lexicographically.
    """
    pos = {}
    for n, (i, j) in enumerate(zip(*np.triu_indices(d, 1))):
        pos[(int(i), int(j))] = pos[(int(j), int(i))] = n
    constraints = []
    for a in range(d):
        for b in range(a + 1, d):
            for c in range(b + 1, d):
                ab, ac, bc = pos[(a, b)], pos[(a, c)], pos[(b, c)]
                constraints.append((ab, ac, bc))
                constraints.append((ac, ab, bc))
                constraints.append((bc, ab, ac))
    return np.array(constraints, dtype=np.int64)


@numba.njit(cache=True)
def _dykstra_sweeps(x, cons, max_sweeps, tol):
    """
    Cyclic Dykstra projections over the triangle halfspaces, then the
    nonnegativity constraints, with one correction term per constraint.
    x is updated in place. Returns (sweeps, residual), sweeps = -1 on failure.
    """
    m = x.shape[0]
    n_cons = cons.shape[0]
    z = np.zeros(n_cons)
    neg = np.zeros(m)
    previous = np.empty(m)
    residual = np.inf
    for sweep in range(1, max_sweeps + 1):
        previous[:] = x
        for n in range(n_cons):
            a = cons[n, 0]
            b = cons[n, 1]
            c = cons[n, 2]
            zn = z[n]
            xa = x[a] + zn
            xb = x[b] - zn
            xc = x[c] - zn
            excess = xa - xb - xc
            mu = excess / 3.0 if excess > 0.0 else 0.0
            x[a] = xa - mu
            x[b] = xb + mu
            x[c] = xc + mu
            z[n] = mu
        for e in range(m):
            y = x[e] + neg[e]
            xe = y if y > 0.0 else 0.0
            neg[e] = y - xe
            x[e] = xe

        residual = 0.0
        for e in range(m):
            change = abs(x[e] - previous[e])
            if change > residual:
                residual = change
        for n in range(n_cons):
            excess = x[cons[n, 0]] - x[cons[n, 1]] - x[cons[n, 2]]
            if excess > residual:
                residual = excess
        if residual < tol:
            return sweep, residual
    return -1, residual


def _shortest_path_closure(M: np.ndarray) -> np.ndarray:
    """
    Largest metric below a nonnegative zero-diagonal symmetric M (Floyd-Warshall).
    Entries move by no more than the triangle excess left in M.
    """
    D = M.copy()
    for k in range(D.shape[0]):
        np.minimum(D, D[:, k:k + 1] + D[k:k + 1, :], out=D)
    return D


def triangle_fix(H, tol: float = DEFAULT_TOL, max_sweeps: Optional[int] = None) -> np.ndarray:
    """
    Euclidean projection of H onto the cone of metric matrices.

    Dykstra's cyclic projection over every triangle halfspace and the
    nonnegativity constraints, one dual correction per constraint. H may be
    non-symmetric, signed, or have a nonzero diagonal: its symmetric part with
    the diagonal removed is projected, which gives the same Frobenius projection.
    The converged iterate is closed under shortest paths, so the result is an
    exact metric.

    Args:
        H: Square finite matrix
        tol: Stop once constraint violation and iterate change both fall below
            tol times the largest absolute entry of the symmetrized input
        max_sweeps: Sweep cap, defaults to 10 d^3

    Returns:
        The projected metric matrix
    """
    H = _square(H)
    d = H.shape[0]
    if max_sweeps is None:
        max_sweeps = 10 * d ** 3
    target = vectorize((H + H.T) / 2.0)
    if d < 3:
        return symmetrize(np.maximum(target, 0.0), d)
    scale = float(np.abs(target).max())
    if scale == 0.0:
        return np.zeros((d, d))

    x = target.copy()
    sweeps, residual = _dykstra_sweeps(x, _triangle_constraints(d), max_sweeps, tol * scale)
    if sweeps < 0:
        raise ConvergenceError(f"triangle fixing did not converge in {max_sweeps} sweeps "
                               f"(residual {residual:.3g})", residual=residual)
    logger.debug(f"Triangle fixing converged after {sweeps} sweeps (d={d})")
    return _shortest_path_closure(symmetrize(x, d))


def project_feasible(H, tol: float = DEFAULT_TOL, max_sweeps: Optional[int] = None) -> np.ndarray:
    """
    Feasible point of the cone intersected with the Frobenius unit ball:
    the cone projection, radially shrunk when its norm exceeds 1.
    """
    M = triangle_fix(H, tol=tol, max_sweeps=max_sweeps)
    norm = frobenius_norm(M)
    if norm > 1.0:
        M = M / norm
    return M


def solve_p3(xi, lam: float = 1.0, tol: float = DEFAULT_TOL,
             max_sweeps: Optional[int] = None) -> np.ndarray:
    """
    Minimize lam <M, xi> + ||M||^2 over the metric cone, i.e. project -(lam/2) xi.
    """
    if not lam > 0:
        raise ValidationError(f"lambda must be positive, got {lam}")
    xi = _square(xi, "xi")
    return triangle_fix(-(lam / 2.0) * xi, tol=tol, max_sweeps=max_sweeps)
