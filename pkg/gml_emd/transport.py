"""
Exact solver for the transportation linear program.

The LP  min <A, X>  over X >= 0 with row sums r and column sums c  is solved
with the network simplex on the bipartite graph rows -> columns. A basis is a
spanning tree of 2d-1 cells; the redundant last constraint of the LP is never
materialized because the tree representation carries it implicitly.

Nodes 0..d-1 are rows and d..2d-1 are columns. The pivot loop runs under
numba on flat arrays: the tree is stored as cell row/column arrays and its
adjacency is rebuilt in O(d) per pivot.
"""

import itertools
import logging
from functools import lru_cache
from typing import List, Optional, Tuple

import numba
import numpy as np

from .models import (SolveResult, TransportBasis, TransportError, TransportPlan,
                     ValidationError, as_histogram)

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-12
BRUTE_FORCE_MAX_DIM = 5

OPTIMAL = 0
PIVOT_LIMIT = 1
NOT_A_TREE = 2

Cell = Tuple[int, int]


def _validate_inputs(cost, r, c) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    r = as_histogram(r, name="r")
    c = as_histogram(c, name="c")
    if r.shape != c.shape:
        raise ValidationError(f"marginals differ in dimension: {r.shape[0]} vs {c.shape[0]}")
    d = r.shape[0]
    cost = np.asarray(cost, dtype=np.float64)
    if cost.shape != (d, d):
        raise ValidationError(f"cost must be {d} x {d}, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValidationError("cost has non-finite entries")
    return cost, r, c


def _northwest_corner(r: np.ndarray, c: np.ndarray) -> List[Cell]:
    """Staircase spanning tree, always 2d-1 cells even for degenerate marginals."""
    d = len(r)
    a, b = r.copy(), c.copy()
    i = j = 0
    cells = []
    while True:
        cells.append((i, j))
        if i == d - 1 and j == d - 1:
            return cells
        x = min(a[i], b[j])
        a[i] -= x
        b[j] -= x
        if j == d - 1 or (i < d - 1 and a[i] <= b[j]):
            i += 1
        else:
            j += 1


@numba.njit(cache=True)
def _tree_adjacency(cell_rows, cell_cols, d):
    """Compressed adjacency of the tree: neighbours of node x are neighbour[start[x]:start[x+1]]."""
    n = cell_rows.shape[0]
    degree = np.zeros(2 * d, dtype=np.int64)
    for pos in range(n):
        degree[cell_rows[pos]] += 1
        degree[d + cell_cols[pos]] += 1
    start = np.zeros(2 * d + 1, dtype=np.int64)
    for x in range(2 * d):
        start[x + 1] = start[x] + degree[x]
    fill = start[:-1].copy()
    neighbour = np.empty(2 * n, dtype=np.int64)
    position = np.empty(2 * n, dtype=np.int64)
    for pos in range(n):
        a = cell_rows[pos]
        b = d + cell_cols[pos]
        neighbour[fill[a]] = b
        position[fill[a]] = pos
        fill[a] += 1
        neighbour[fill[b]] = a
        position[fill[b]] = pos
        fill[b] += 1
    return start, neighbour, position


@numba.njit(cache=True)
def _tree_search(start, neighbour, position, root, n_nodes):
    """Breadth-first order from root with parent node and parent cell of every node."""
    parent = np.full(n_nodes, -1, dtype=np.int64)
    parent_pos = np.full(n_nodes, -1, dtype=np.int64)
    order = np.empty(n_nodes, dtype=np.int64)
    seen = np.zeros(n_nodes, dtype=np.bool_)
    seen[root] = True
    order[0] = root
    head = 0
    tail = 1
    while head < tail:
        x = order[head]
        head += 1
        for e in range(start[x], start[x + 1]):
            y = neighbour[e]
            if not seen[y]:
                seen[y] = True
                parent[y] = x
                parent_pos[y] = position[e]
                order[tail] = y
                tail += 1
    return parent, parent_pos, order, tail


@numba.njit(cache=True)
def _tree_flows(cell_rows, cell_cols, r, c):
    """
    Flows on the tree cells, peeled from the leaves up. The second value is
    False when the cells do not span all 2d nodes.
    """
    d = r.shape[0]
    n = cell_rows.shape[0]
    flows = np.zeros(n)
    start, neighbour, position = _tree_adjacency(cell_rows, cell_cols, d)
    parent, parent_pos, order, reached = _tree_search(start, neighbour, position, 0, 2 * d)
    if reached < 2 * d:
        return flows, False
    remaining = np.empty(2 * d)
    remaining[:d] = r
    remaining[d:] = c
    for k in range(2 * d - 1, 0, -1):
        x = order[k]
        flows[parent_pos[x]] = remaining[x]
        remaining[parent[x]] -= remaining[x]
    return flows, True


@numba.njit(cache=True)
def _network_simplex(cost, cell_rows, cell_cols, flows, max_pivots, reduced_tol, feasibility_tol):
    """
    Pivot until no cell has a negative reduced cost. cell_rows, cell_cols and
    flows are updated in place. Dantzig's rule picks the entering cell, Bland's
    rule (first improving cell) the one after a degenerate pivot; the leaving
    cell is the smallest cell index among the blocking ones.

    Returns (status, pivots).
    """
    d = cost.shape[0]
    n = cell_rows.shape[0]
    n_nodes = 2 * d
    pi = np.zeros(n_nodes)
    path = np.empty(n, dtype=np.int64)
    basic = np.zeros((d, d), dtype=np.bool_)
    pivots = 0
    bland = False
    while True:
        start, neighbour, position = _tree_adjacency(cell_rows, cell_cols, d)
        parent, parent_pos, order, reached = _tree_search(start, neighbour, position, 0, n_nodes)
        if reached < n_nodes:
            return NOT_A_TREE, pivots

        # potentials: u_i + v_j = cost_ij on tree cells, u_0 = 0
        pi[0] = 0.0
        for k in range(1, n_nodes):
            x = order[k]
            pos = parent_pos[x]
            pi[x] = cost[cell_rows[pos], cell_cols[pos]] - pi[parent[x]]

        basic[:, :] = False
        for pos in range(n):
            basic[cell_rows[pos], cell_cols[pos]] = True

        ei = -1
        ej = -1
        best = 0.0
        for i in range(d):
            for j in range(d):
                if basic[i, j]:
                    continue
                reduced = cost[i, j] - pi[i] - pi[d + j]
                if bland:
                    if reduced < -reduced_tol:
                        ei = i
                        ej = j
                        break
                elif reduced < best:
                    best = reduced
                    ei = i
                    ej = j
            if bland and ei >= 0:
                break
        if ei < 0 or (not bland and best >= -reduced_tol):
            return OPTIMAL, pivots
        if pivots >= max_pivots:
            return PIVOT_LIMIT, pivots

        # cycle: tree path from row ei to column ej, cells alternately losing and gaining
        start, neighbour, position = _tree_adjacency(cell_rows, cell_cols, d)
        parent, parent_pos, order, reached = _tree_search(start, neighbour, position, ei, n_nodes)
        length = 0
        x = d + ej
        while x != ei:
            path[length] = parent_pos[x]
            length += 1
            x = parent[x]
        path[:length] = path[:length][::-1].copy()

        theta = np.inf
        for k in range(0, length, 2):
            if flows[path[k]] < theta:
                theta = flows[path[k]]
        leaving = -1
        leaving_key = n_nodes * d
        for k in range(0, length, 2):
            pos = path[k]
            if flows[pos] <= theta + feasibility_tol:
                key = cell_rows[pos] * d + cell_cols[pos]
                if key < leaving_key:
                    leaving_key = key
                    leaving = pos

        for k in range(length):
            if k % 2 == 0:
                flows[path[k]] -= theta
            else:
                flows[path[k]] += theta
        cell_rows[leaving] = ei
        cell_cols[leaving] = ej
        flows[leaving] = theta
        for pos in range(n):
            if flows[pos] < 0.0:
                flows[pos] = 0.0

        # Bland's rule right after a degenerate pivot rules out cycling.
        bland = theta <= feasibility_tol
        pivots += 1


def _cell_arrays(cells) -> Tuple[np.ndarray, np.ndarray]:
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    return cells[:, 0].copy(), cells[:, 1].copy()


def solve_transport(cost, r, c, warm: Optional[TransportBasis] = None,
                    max_pivots: Optional[int] = None) -> SolveResult:
    """
    Solve min <cost, X> over the transportation polytope U(r, c).

    Args:
        cost: d x d finite cost matrix (not necessarily a metric)
        r: Row marginal histogram
        c: Column marginal histogram
        warm: Basis returned by an earlier solve with the same marginals
        max_pivots: Pivot cap, defaults to 50 d^2

    Returns:
        SolveResult with the optimal value, an extreme-point plan and its basis
    """
    cost, r, c = _validate_inputs(cost, r, c)
    d = len(r)
    if max_pivots is None:
        max_pivots = 50 * d * d

    flows = None
    if warm is not None:
        if warm.matches(r, c):
            cell_rows, cell_cols = _cell_arrays(warm.cells)
            if len(cell_rows) != 2 * d - 1:
                raise TransportError("basis cells do not form a spanning tree")
            flows, spanning = _tree_flows(cell_rows, cell_cols, r, c)
            if not spanning:
                raise TransportError("basis cells do not form a spanning tree")
            if flows.min() < -1e-9:
                logger.debug("Warm basis is infeasible, starting cold")
                flows = None
        else:
            logger.debug("Warm basis was built for other marginals, starting cold")
    if flows is None:
        cell_rows, cell_cols = _cell_arrays(_northwest_corner(r, c))
        flows, _ = _tree_flows(cell_rows, cell_cols, r, c)
    np.maximum(flows, 0.0, out=flows)

    scale = max(1.0, float(np.abs(cost).max()))
    status, pivots = _network_simplex(cost, cell_rows, cell_cols, flows, max_pivots,
                                      1e-12 * scale, FEASIBILITY_TOL)
    if status == PIVOT_LIMIT:
        raise TransportError(f"network simplex exceeded {max_pivots} pivots")
    if status == NOT_A_TREE:
        raise TransportError("basis cells do not form a spanning tree")

    entries = np.zeros((d, d))
    entries[cell_rows, cell_cols] = flows
    value = float(np.sum(cost * entries))
    plan = TransportPlan(entries=entries, row_marginal=r, col_marginal=c)
    cells = tuple(zip(cell_rows.tolist(), cell_cols.tolist()))
    basis = TransportBasis(cells=cells, row_marginal=tuple(r.tolist()),
                           col_marginal=tuple(c.tolist()))
    return SolveResult(value=value, plan=plan, basis=basis, pivots=int(pivots))


def emd(M, r, c, warm: Optional[TransportBasis] = None) -> float:
    """Transportation distance d_M(r, c) for a ground metric M."""
    return solve_transport(M, r, c, warm=warm).value


def pairwise_emd(A: np.ndarray, B: np.ndarray, M: np.ndarray) -> np.ndarray:
    """
    Matrix of transportation distances between the rows of A and the rows of B.
    """
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    D = np.empty((A.shape[0], B.shape[0]))
    for i, r in enumerate(A):
        for j, c in enumerate(B):
            D[i, j] = solve_transport(M, r, c).value
    return D


def _constraint_matrix(d: int) -> np.ndarray:
    """Row and column sum constraints with the redundant last one removed."""
    A = np.zeros((2 * d, d * d))
    for i in range(d):
        for j in range(d):
            A[i, i * d + j] = 1.0
            A[d + j, i * d + j] = 1.0
    return A[:-1]


@lru_cache(maxsize=None)
def _spanning_tree_bases(d: int) -> np.ndarray:
    """All sets of 2d-1 cells whose constraint columns form a nonsingular basis."""
    A = _constraint_matrix(d)
    size = 2 * d - 1
    trees = []
    combos = itertools.combinations(range(d * d), size)
    while True:
        chunk = np.array(list(itertools.islice(combos, 50000)), dtype=np.int64)
        if chunk.size == 0:
            break
        blocks = A.T[chunk].transpose(0, 2, 1)
        # the constraint matrix is totally unimodular, so determinants are 0 or +-1
        keep = np.abs(np.linalg.det(blocks)) > 0.5
        trees.append(chunk[keep])
    return np.concatenate(trees)


def brute_force_transport(cost, r, c) -> float:
    """
    Exact LP optimum by enumerating every basic solution (test oracle, d <= 5).
    """
    cost, r, c = _validate_inputs(cost, r, c)
    d = len(r)
    if d > BRUTE_FORCE_MAX_DIM:
        raise ValidationError(f"brute force enumeration supports d <= {BRUTE_FORCE_MAX_DIM}, got {d}")
    A = _constraint_matrix(d)
    b = np.concatenate([r, c])[:-1]
    flat_cost = cost.ravel()
    best = np.inf
    trees = _spanning_tree_bases(d)
    for start in range(0, len(trees), 20000):
        chunk = trees[start:start + 20000]
        blocks = A.T[chunk].transpose(0, 2, 1)
        x = np.linalg.solve(blocks, np.broadcast_to(b[:, None], (len(chunk), len(b), 1)))[..., 0]
        feasible = np.all(x >= -1e-12, axis=1)
        if not np.any(feasible):
            continue
        values = np.sum(flat_cost[chunk[feasible]] * x[feasible], axis=1)
        best = min(best, float(values.min()))
    return best
