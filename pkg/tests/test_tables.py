import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from conftest import random_histogram
from gml_emd.models import TrainingSet, ValidationError
from gml_emd.tables import (_dual_objective, _newton_direction, _table_from_duals, aggregate_xi,
                            entropy, half_l1_distances, independence_table, smooth_histogram,
                            typical_objective, typical_table)


def sample_feasible_tables(rng, r, c, count):
    """Rejection sampling in U(r, c) for d=3: draw the free 2x2 block, complete, keep if feasible."""
    tables = []
    while len(tables) < count:
        X = np.zeros((3, 3))
        X[:2, :2] = rng.uniform(0.0, 1.0, size=(2, 2)) * np.minimum.outer(r[:2], c[:2])
        X[:2, 2] = r[:2] - X[:2, :2].sum(axis=1)
        X[2, :2] = c[:2] - X[:2, :2].sum(axis=0)
        X[2, 2] = r[2] - X[2, :2].sum()
        if np.all(X >= 0):
            tables.append(X)
    return tables


def test_independence_table():
    T = independence_table([1.0, 0.0], [0.5, 0.5])
    np.testing.assert_allclose(T.entries, [[0.5, 0.5], [0.0, 0.0]])
    np.testing.assert_allclose(independence_table(np.full(4, 0.25), np.full(4, 0.25)).entries, 1 / 16)


def test_entropy_values(rng):
    assert entropy(np.full((2, 2), 0.25)) == pytest.approx(math.log(4))
    X = np.zeros((3, 3))
    X[1, 2] = 1.0
    assert entropy(X) == 0.0
    r = random_histogram(rng, 4)
    c = random_histogram(rng, 4)
    h = lambda p: -np.sum(p * np.log(p))
    assert entropy(independence_table(r, c)) == pytest.approx(h(r) + h(c))


def test_independence_table_has_maximal_entropy(rng):
    r = random_histogram(rng, 3)
    c = random_histogram(rng, 3)
    best = entropy(independence_table(r, c))
    for X in sample_feasible_tables(rng, r, c, 200):
        assert entropy(X) <= best + 1e-12


def test_typical_objective():
    assert typical_objective(np.zeros((2, 2))) == 0.0
    X = np.array([[0.5, 0.0], [0.0, 0.5]])
    expected = 2 * (1.5 * math.log(1.5) - 0.5 * math.log(0.5))
    assert typical_objective(X) == pytest.approx(expected)
    with pytest.raises(ValidationError):
        typical_objective(-X)


def test_smooth_histogram():
    r = smooth_histogram(np.array([1.0, 0.0, 0.0]))
    assert np.all(r > 0)
    assert r.sum() == pytest.approx(1.0)
    assert r[0] == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("d", [2, 5, 16])
def test_typical_table_of_uniform_marginals(d):
    u = np.full(d, 1.0 / d)
    np.testing.assert_allclose(typical_table(u, u).entries, 1.0 / d ** 2, atol=1e-8)


@pytest.mark.parametrize("d", [4, 8, 16])
def test_typical_table_marginals(rng, d):
    for _ in range(10):
        r = random_histogram(rng, d)
        c = random_histogram(rng, d)
        T = typical_table(r, c).entries
        assert np.all(T > 0)
        np.testing.assert_allclose(T.sum(axis=1), r, atol=1e-6)
        np.testing.assert_allclose(T.sum(axis=0), c, atol=1e-6)


def test_typical_table_with_empty_bins():
    r = np.array([0.7, 0.3, 0.0, 0.0])
    c = np.array([0.0, 0.1, 0.0, 0.9])
    T = typical_table(r, c).entries
    np.testing.assert_allclose(T.sum(axis=1), r, atol=1e-6)
    np.testing.assert_allclose(T.sum(axis=0), c, atol=1e-6)


def test_typical_table_maximizes_g(rng):
    for _ in range(5):
        r = random_histogram(rng, 3)
        c = random_histogram(rng, 3)
        best = typical_objective(typical_table(r, c))
        for X in sample_feasible_tables(rng, r, c, 200):
            assert typical_objective(X) <= best + 1e-4


@pytest.mark.parametrize("d", [3, 5, 8])
def test_newton_direction_solves_dense_system(rng, d):
    r = random_histogram(rng, d)
    c = random_histogram(rng, d)
    u = rng.uniform(0.5, 2.0, size=d)
    v = rng.uniform(0.5, 2.0, size=d)
    T = _table_from_duals(u, v)
    gu = r - T.sum(axis=1)
    gv = c - T.sum(axis=0)
    du, dv = _newton_direction(T, gu, gv)
    W = T * (1.0 + T)
    H = np.block([[np.diag(W.sum(axis=1)), W], [W.T, np.diag(W.sum(axis=0))]])
    np.testing.assert_allclose(H @ np.concatenate([du, dv]), -np.concatenate([gu, gv]), atol=1e-9)


def test_dual_objective_is_convex(rng):
    d = 4
    r = random_histogram(rng, d)
    c = random_histogram(rng, d)
    h = 1e-3
    for _ in range(50):
        u = rng.uniform(0.3, 2.0, size=d)
        v = rng.uniform(0.3, 2.0, size=d)
        du = rng.normal(size=d)
        dv = rng.normal(size=d)
        curvature = (_dual_objective(u + h * du, v + h * dv, r, c)
                     + _dual_objective(u - h * du, v - h * dv, r, c)
                     - 2.0 * _dual_objective(u, v, r, c))
        assert curvature >= -1e-9


def test_half_l1_distances(rng):
    A = np.array([random_histogram(rng, 5) for _ in range(3)])
    D = half_l1_distances(A)
    assert D[0, 1] == pytest.approx(0.5 * np.abs(A[0] - A[1]).sum())
    np.testing.assert_allclose(np.diag(D), 0.0)


def test_single_dissimilar_pair():
    r1 = np.array([0.6, 0.3, 0.1])
    r2 = np.array([0.2, 0.2, 0.6])
    train = TrainingSet(np.array([r1, r2]), np.array([[0.0, -1.0], [-1.0, 0.0]]))
    np.testing.assert_allclose(aggregate_xi(train, math.inf, "independence"), -2.0 * np.outer(r1, r2))


def test_zero_weights_give_zero_matrix(rng):
    histograms = np.array([random_histogram(rng, 4) for _ in range(3)])
    train = TrainingSet(histograms, np.zeros((3, 3)))
    np.testing.assert_array_equal(aggregate_xi(train, math.inf, "independence"), np.zeros((4, 4)))


def test_nearest_neighbours_assemble_tables():
    # 0 and 1 are similar, as are 2 and 3; 2 is the dissimilar point closest to 0 and 1,
    # 1 the one closest to 2 and 3
    histograms = np.array([
        [0.70, 0.20, 0.10],
        [0.60, 0.30, 0.10],
        [0.40, 0.30, 0.30],
        [0.05, 0.35, 0.60],
    ])
    weights = np.array([
        [0.0, 1.0, -1.0, -1.0],
        [1.0, 0.0, -1.0, -1.0],
        [-1.0, -1.0, 0.0, 1.0],
        [-1.0, -1.0, 1.0, 0.0],
    ])
    train = TrainingSet(histograms, weights)
    T = {(i, j): typical_table(histograms[i], histograms[j]).entries
         for i in range(4) for j in range(i + 1, 4)}
    D = half_l1_distances(histograms)
    assert D[2, 1] < D[2, 0] and D[3, 1] < D[3, 0]
    expected = (T[(0, 1)] + T[(0, 1)].T + T[(2, 3)] + T[(2, 3)].T
                - T[(0, 2)] - T[(1, 2)] - T[(1, 2)].T - T[(1, 3)].T)
    xi = aggregate_xi(train, 1, "typical")
    np.testing.assert_allclose(xi, expected, atol=1e-12)


def test_all_neighbours_match_infinite_k_up_to_transpose(toy_train):
    xi_inf = aggregate_xi(toy_train, math.inf, "independence")
    xi_all = aggregate_xi(toy_train, toy_train.n, "independence")
    np.testing.assert_allclose(xi_inf + xi_inf.T, xi_all + xi_all.T, atol=1e-12)


def test_executor_gives_same_result(toy_train):
    serial = aggregate_xi(toy_train, 2, "typical")
    with ThreadPoolExecutor(max_workers=2) as pool:
        parallel = aggregate_xi(toy_train, 2, "typical", executor=pool)
    np.testing.assert_allclose(parallel, serial, atol=1e-14)


def test_unknown_kind(toy_train):
    with pytest.raises(ValidationError):
        aggregate_xi(toy_train, math.inf, "uniform")
