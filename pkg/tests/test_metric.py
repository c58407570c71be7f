import itertools

import numpy as np
import pytest
from scipy.optimize import minimize

from conftest import random_histogram, random_metric
from gml_emd.metric import (frobenius_norm, is_metric, normalize_unit, project_feasible, solve_p3,
                            symmetrize, triangle_fix, uniform_metric, vectorize)
from gml_emd.models import ConvergenceError, ValidationError
from gml_emd.transport import emd


def qp_projection(H):
    """Projection onto the metric cone as a dense QP over the upper triangle."""
    d = H.shape[0]
    target = vectorize((H + H.T) / 2.0)
    pos = {pair: n for n, pair in enumerate(zip(*np.triu_indices(d, 1)))}

    def index(a, b):
        return pos[(min(a, b), max(a, b))]

    constraints = []
    for a, b, c in itertools.permutations(range(d), 3):
        if a < b:
            A = np.zeros(len(target))
            A[index(a, c)] += 1.0
            A[index(c, b)] += 1.0
            A[index(a, b)] -= 1.0
            constraints.append({"type": "ineq", "fun": lambda x, A=A: A @ x, "jac": lambda x, A=A: A})
    result = minimize(lambda x: np.sum((x - target) ** 2), np.maximum(target, 0.0),
                      jac=lambda x: 2.0 * (x - target), method="SLSQP",
                      bounds=[(0.0, None)] * len(target), constraints=constraints,
                      options={"ftol": 1e-14, "maxiter": 500})
    return symmetrize(result.x, d)


def test_uniform_metric():
    np.testing.assert_array_equal(uniform_metric(2), [[0, 1], [1, 0]])
    M = uniform_metric(3)
    assert M.sum() == 6 and np.all(np.diag(M) == 0)
    assert is_metric(uniform_metric(5))
    with pytest.raises(ValidationError):
        uniform_metric(1)


def test_vectorize_and_symmetrize():
    M = np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0]], dtype=float)
    np.testing.assert_array_equal(vectorize(M), [1, 2, 3])
    np.testing.assert_array_equal(symmetrize([1, 2, 3]), M)
    with pytest.raises(ValidationError):
        symmetrize([1, 2])


def test_violated_triangle_is_reported():
    H = symmetrize([3.0, 1.0, 1.0])
    check = is_metric(H)
    assert not check
    assert [v.kind for v in check.violations] == ["triangle"]
    violation = check.violations[0]
    assert violation.indices == (0, 1, 2)
    assert violation.magnitude == pytest.approx(1.0)


def test_other_violations_are_reported():
    H = uniform_metric(3)
    H[0, 0] = 0.5
    H[1, 2] = -0.5
    kinds = {v.kind for v in is_metric(H).violations}
    assert {"diagonal", "symmetry", "nonnegativity"} <= kinds


def test_projection_of_single_violation():
    M = triangle_fix(symmetrize([3.0, 1.0, 1.0]))
    np.testing.assert_allclose(vectorize(M), [8 / 3, 4 / 3, 4 / 3], atol=1e-9)


def test_metric_is_fixed_point(rng):
    M = random_metric(rng, 6)
    np.testing.assert_allclose(triangle_fix(M), M, atol=1e-9)


def test_negative_input_projects_to_zero(rng):
    H = -rng.uniform(0.1, 1.0, size=(4, 4))
    np.testing.assert_allclose(triangle_fix(H), 0.0, atol=1e-6)


def test_two_bins_clip_to_nonnegative():
    np.testing.assert_allclose(triangle_fix([[0.0, -1.0], [-3.0, 0.0]]), np.zeros((2, 2)))
    np.testing.assert_allclose(triangle_fix([[5.0, 1.0], [3.0, 5.0]]), [[0, 2], [2, 0]])


def test_projection_matches_qp_oracle(rng):
    for _ in range(20):
        H = rng.normal(size=(4, 4))
        M = triangle_fix(H, tol=1e-11, max_sweeps=200000)
        assert is_metric(M, tol=1e-9)
        assert frobenius_norm(M - qp_projection(H)) < 1e-5


def test_projection_output_is_metric(rng):
    for d in [3, 5, 7]:
        M = triangle_fix(rng.normal(size=(d, d)))
        assert is_metric(M, tol=1e-6)


def test_sweep_cap_raises(rng):
    H = rng.normal(size=(5, 5))
    with pytest.raises(ConvergenceError) as info:
        triangle_fix(H, max_sweeps=1)
    assert info.value.residual > 0


def test_project_feasible_rescales_outside_ball():
    M = project_feasible(2.0 * uniform_metric(3))
    np.testing.assert_allclose(M, uniform_metric(3) / np.sqrt(6.0), atol=1e-12)
    np.testing.assert_array_equal(project_feasible(np.zeros((3, 3))), np.zeros((3, 3)))


def test_project_feasible_random(rng):
    for _ in range(10):
        M = project_feasible(5.0 * rng.normal(size=(5, 5)))
        assert is_metric(M, tol=1e-6)
        assert frobenius_norm(M) <= 1 + 1e-9


def test_normalize_unit():
    assert frobenius_norm(normalize_unit(uniform_metric(4))) == pytest.approx(1.0)
    np.testing.assert_array_equal(normalize_unit(np.zeros((3, 3))), np.zeros((3, 3)))


def test_p3_recovers_metric(rng):
    M = random_metric(rng, 5)
    lam = 0.5
    np.testing.assert_allclose(solve_p3(-(2.0 / lam) * M, lam), M, atol=1e-9)


def test_p3_positive_xi_gives_zero(rng):
    xi = rng.uniform(0.1, 1.0, size=(3, 3))
    np.testing.assert_allclose(solve_p3(xi), 0.0, atol=1e-6)
    with pytest.raises(ValidationError):
        solve_p3(xi, lam=0.0)


def test_p3_matches_qp_oracle(rng):
    xi = rng.normal(size=(3, 3))
    lam = 2.0
    expected = qp_projection(-(lam / 2.0) * xi)
    assert frobenius_norm(solve_p3(xi, lam, tol=1e-11, max_sweeps=100000) - expected) < 1e-5


def test_learned_distance_axioms(rng):
    d = 6
    for _ in range(10):
        M = triangle_fix(rng.uniform(0.0, 1.0, size=(d, d)))
        r, s, t = (random_histogram(rng, d) for _ in range(3))
        assert emd(M, r, r) == pytest.approx(0.0, abs=1e-8)
        assert emd(M, r, s) == pytest.approx(emd(M, s, r), abs=1e-8)
        assert emd(M, r, t) <= emd(M, r, s) + emd(M, s, t) + 1e-8


def test_tiny_scale_projection_is_exact_metric(rng):
    H = 1e-9 * rng.normal(size=(6, 6))
    M = triangle_fix(H)
    assert is_metric(M, tol=1e-18)
    assert is_metric(normalize_unit(M), tol=1e-10)


def test_tolerance_is_relative_to_input_scale(rng):
    H = rng.normal(size=(5, 5))
    small = triangle_fix(1e-6 * H)
    np.testing.assert_allclose(small, 1e-6 * triangle_fix(H), atol=1e-12)


def test_projection_closes_remaining_triangle_excess(rng):
    for d in [4, 6, 8]:
        M = triangle_fix(rng.normal(size=(d, d)), tol=1e-3)
        assert is_metric(M, tol=1e-12)


@pytest.mark.slow
def test_projection_matches_qp_oracle_many_inputs():
    rng = np.random.default_rng(4)
    for _ in range(200):
        H = rng.normal(size=(4, 4))
        M = triangle_fix(H, tol=1e-11, max_sweeps=200000)
        assert frobenius_norm(M - qp_projection(H)) < 1e-5
