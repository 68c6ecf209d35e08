import numpy as np
import pytest

from conftest import crandn
from jpais.linalg import IllConditionedError, gemm, hermitian, norm2, outer, solve_hermitian, symmetrize


def triple_loop(A, B):
    n, m = A.shape
    p = B.shape[1]
    C = np.zeros((n, p), dtype=complex)
    for i in range(n):
        for j in range(p):
            for k in range(m):
                C[i, j] += A[i, k] * B[k, j]
    return C


def test_gemm_identity_and_zero(rng):
    A = crandn(rng, 3, 3)
    np.testing.assert_array_equal(gemm(np.eye(3), A), A)
    np.testing.assert_array_equal(gemm(A, np.zeros((3, 2))), np.zeros((3, 2)))


def test_gemm_matches_triple_loop(rng):
    A, B = crandn(rng, 5, 4), crandn(rng, 4, 3)
    np.testing.assert_allclose(gemm(A, B), triple_loop(A, B), rtol=1e-13, atol=1e-13)


def test_gemm_associativity(rng):
    A, B, C = crandn(rng, 4, 3), crandn(rng, 3, 5), crandn(rng, 5, 2)
    left, right = gemm(gemm(A, B), C), gemm(A, gemm(B, C))
    assert np.linalg.norm(left - right) <= 1e-12 * np.linalg.norm(left)


def test_gemm_rejects_bad_shapes(rng):
    with pytest.raises(ValueError, match="incompatible"):
        gemm(crandn(rng, 2, 3), crandn(rng, 2, 3))


def test_hermitian_reverses_products(rng):
    A, B = crandn(rng, 4, 3), crandn(rng, 3, 5)
    np.testing.assert_allclose(hermitian(gemm(A, B)), gemm(hermitian(B), hermitian(A)), atol=1e-13)
    np.testing.assert_array_equal(hermitian(hermitian(A)), A)


def test_norm_and_outer():
    assert norm2(np.zeros(4)) == 0
    assert norm2(np.array([3.0, 4j])) == pytest.approx(5.0)
    e1, e2 = np.eye(3)[:2]
    O = outer(e1, e2)
    assert O[0, 1] == 1 and np.count_nonzero(O) == 1


def test_symmetrize_is_hermitian(rng):
    S = symmetrize(crandn(rng, 4, 4))
    np.testing.assert_allclose(S, hermitian(S))


def test_solve_trivial_cases(rng):
    b = crandn(rng, 4)
    np.testing.assert_allclose(solve_hermitian(np.eye(4), b), b)
    np.testing.assert_allclose(solve_hermitian(np.diag([2.0, 4.0]), np.array([2.0, 8.0])), [1.0, 2.0])


def test_solve_spd_residual(rng):
    X = crandn(rng, 8, 8)
    A = X @ hermitian(X) + np.eye(8)
    b = crandn(rng, 8)
    x = solve_hermitian(A, b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_solve_recovers_x_at_moderate_condition(rng):
    Q, _ = np.linalg.qr(crandn(rng, 6, 6))
    A = Q @ np.diag(np.logspace(0, 6, 6)) @ hermitian(Q)
    A = symmetrize(A)
    x = crandn(rng, 6)
    got = solve_hermitian(A, A @ x)
    assert np.linalg.norm(got - x) <= 1e-9 * np.linalg.norm(x)


def test_solve_batched_and_matrix_rhs(rng):
    X = crandn(rng, 3, 5, 5)
    A = X @ hermitian(X) + np.eye(5)
    B = crandn(rng, 3, 5, 2)
    np.testing.assert_allclose(A @ solve_hermitian(A, B), B, atol=1e-10)


def test_solve_errors(rng):
    with pytest.raises(IllConditionedError):
        solve_hermitian(np.diag([1.0, 0.0]), np.ones(2))
    with pytest.raises(IllConditionedError):
        solve_hermitian(np.diag([1.0, 1e-14]), np.ones(2))
    with pytest.raises(ValueError, match="Hermitian"):
        solve_hermitian(np.array([[1.0, 2.0], [0.0, 1.0]]), np.ones(2))
    with pytest.raises(ValueError, match="square"):
        solve_hermitian(np.ones((2, 3)), np.ones(2))
