import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from muxscal.linalg import (
    BlockMatrixBounds,
    composite_measure_bound,
    composite_norm_bound,
    induced_norm,
    jacobi_eigenvalues,
    matrix_measure,
    sym_eig_extremes,
    symmetric_part,
    vec_norm,
)
from oracles import charpoly_eigs, lapack_eigvalsh, measure_quotient, power_iteration_norm

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
PS = (1, 2, np.inf)


def square(n_max=6):
    return st.integers(1, n_max).flatmap(lambda n: arrays(float, (n, n), elements=finite))


@given(arrays(float, st.integers(1, 8), elements=finite), st.sampled_from(PS))
def test_vec_norm_matches_numpy(v, p):
    assert vec_norm(v, p) == pytest.approx(np.linalg.norm(v, ord=p), rel=1e-12, abs=1e-12)


def test_vec_norm_rejects_bad_input():
    with pytest.raises(ValueError):
        vec_norm([1.0, 2.0], 3)
    with pytest.raises(ValueError):
        vec_norm([1.0, np.nan])
    with pytest.raises(ValueError):
        vec_norm(np.zeros(0))


@settings(max_examples=200)
@given(square(8))
def test_jacobi_matches_lapack(A):
    S = symmetric_part(A)
    scale = max(1.0, np.abs(S).max())
    np.testing.assert_allclose(jacobi_eigenvalues(S), lapack_eigvalsh(S), atol=1e-11 * scale)


def test_jacobi_matches_characteristic_polynomial():
    rng = np.random.default_rng(3)
    for n in (1, 2, 3, 4):
        S = symmetric_part(rng.normal(size=(n, n)))
        np.testing.assert_allclose(jacobi_eigenvalues(S), charpoly_eigs(S), atol=1e-8)


def test_jacobi_batched_and_sorted():
    rng = np.random.default_rng(0)
    S = symmetric_part(rng.normal(size=(50, 7, 7)))
    lam = jacobi_eigenvalues(S)
    assert lam.shape == (50, 7)
    assert np.all(np.diff(lam, axis=-1) >= 0)
    np.testing.assert_allclose(lam, np.linalg.eigvalsh(S), atol=1e-12)
    lo, hi = sym_eig_extremes(S)
    np.testing.assert_allclose(lo, lam[:, 0])
    np.testing.assert_allclose(hi, lam[:, -1])


def test_jacobi_rejects_non_symmetric():
    with pytest.raises(ValueError):
        jacobi_eigenvalues(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_jacobi_diagonal_and_repeated():
    np.testing.assert_allclose(jacobi_eigenvalues(np.diag([3.0, -1.0, 2.0])), [-1, 2, 3])
    np.testing.assert_allclose(jacobi_eigenvalues(np.eye(5)), np.ones(5))


@settings(max_examples=150)
@given(square(5), st.sampled_from(PS))
def test_measure_is_limit_of_norm_quotient(A, p):
    h = 1e-7
    ref = measure_quotient(A, p, h)
    # quotient error is O(h ||A||^2)
    tol = 5 * h * np.linalg.norm(A, ord=p) ** 2 + 1e-7
    assert matrix_measure(A, p) == pytest.approx(ref, abs=tol)


@given(square(5), square(5), st.sampled_from(PS), st.floats(0, 5), st.floats(-5, 5))
def test_measure_axioms(A, B, p, c, shift):
    if A.shape != B.shape:
        B = np.resize(B, A.shape)
    n = A.shape[0]
    mu = matrix_measure(A, p)
    nrm = induced_norm(A, p)
    assert -nrm - 1e-9 <= mu <= nrm + 1e-9
    assert matrix_measure(c * A, p) == pytest.approx(c * mu, abs=1e-9 * (1 + abs(c * mu)))
    assert matrix_measure(A + B, p) <= mu + matrix_measure(B, p) + 1e-9
    assert matrix_measure(A + shift * np.eye(n), p) == pytest.approx(mu + shift, abs=1e-9)


def test_measure_2_is_max_eig_of_symmetric_part():
    A = np.array([[-1.0, 4.0], [0.0, -1.0]])
    assert matrix_measure(A, 2) == pytest.approx(1.0)
    assert matrix_measure(A, 1) == pytest.approx(3.0)
    assert matrix_measure(A, np.inf) == pytest.approx(3.0)
    assert matrix_measure(A, "inf") == pytest.approx(3.0)


@settings(max_examples=100)
@given(square(6), st.sampled_from(PS))
def test_induced_norm_matches_numpy(A, p):
    assert induced_norm(A, p) == pytest.approx(np.linalg.norm(A, ord=p), rel=1e-10, abs=1e-10)


def test_induced_2_norm_matches_power_iteration():
    rng = np.random.default_rng(1)
    for _ in range(20):
        A = rng.normal(size=(6, 6))
        assert induced_norm(A, 2) == pytest.approx(power_iteration_norm(A), rel=1e-8)


def test_measure_rejects_non_square_and_nan():
    with pytest.raises(ValueError):
        matrix_measure(np.ones((2, 3)))
    with pytest.raises(ValueError):
        matrix_measure(np.array([[np.inf]]))


def _block_max_norm(x, m):
    return np.max(np.linalg.norm(x.reshape(-1, m), axis=1))


@pytest.mark.parametrize("seed", range(5))
def test_composite_bounds_dominate_network_quantities(seed):
    rng = np.random.default_rng(seed)
    nb, m = 4, 3
    A = rng.normal(size=(nb * m, nb * m))
    A -= 6 * np.eye(nb * m)
    bounds, diag_norms = BlockMatrixBounds.from_matrix(A, m, 2)
    mu_bound = composite_measure_bound(bounds)
    norm_bound = composite_norm_bound(bounds, diag_norms)
    h = 1e-6
    for _ in range(2000):
        x = rng.normal(size=nb * m)
        nx = _block_max_norm(x, m)
        assert _block_max_norm(A @ x, m) <= norm_bound * nx * (1 + 1e-12)
        q = (_block_max_norm(x + h * A @ x, m) - nx) / (h * nx)
        assert q <= mu_bound + 1e-4


def test_block_bounds_validation():
    with pytest.raises(ValueError):
        BlockMatrixBounds(np.zeros(2), np.ones((2, 2)))
    with pytest.raises(ValueError):
        BlockMatrixBounds(np.zeros(2), -np.ones((2, 2)) + np.eye(2))
    with pytest.raises(ValueError):
        BlockMatrixBounds.from_matrix(np.eye(5), 2)
    b = BlockMatrixBounds(np.array([-1.0, -2.0]), np.array([[0.0, 0.5], [0.25, 0.0]]))
    assert composite_measure_bound(b) == pytest.approx(-0.5)
    assert composite_norm_bound(b, [1.0, 1.0]) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        composite_norm_bound(b, [1.0])


def test_single_block_reduces_to_plain_quantities():
    A = np.array([[-2.0, 1.0], [0.5, -3.0]])
    b, dn = BlockMatrixBounds.from_matrix(A, 2, 2)
    assert composite_measure_bound(b) == pytest.approx(matrix_measure(A, 2))
    assert composite_norm_bound(b, dn) == pytest.approx(induced_norm(A, 2))
