"""Small dense complex linear algebra used throughout the package.

Matrices and vectors are plain ``numpy`` arrays of dtype ``complex128``.
Every routine accepts a leading batch shape, so the same code serves a
single run and a stack of runs.
"""

import numpy as np

CMatrix = np.ndarray
CVector = np.ndarray

#: Default cap on the 2-norm condition number accepted by solve_hermitian.
COND_CAP = 1e12


class IllConditionedError(np.linalg.LinAlgError):
    """Raised when a system is singular or too badly conditioned to solve."""

    def __init__(self, cond):
        self.cond = float(np.max(cond))
        super().__init__(f"matrix is ill-conditioned (cond ~ {self.cond:.3e})")


def as_complex(x):
    return np.asarray(x, dtype=np.complex128)


def gemm(A, B):
    """Matrix product ``A @ B`` with an explicit dimension check."""
    A = as_complex(A)
    B = as_complex(B)
    if A.ndim < 2 or B.ndim < 2 or A.shape[-1] != B.shape[-2]:
        raise ValueError(f"gemm: incompatible shapes {A.shape} and {B.shape}")
    return A @ B


def hermitian(A):
    """Conjugate transpose over the last two axes."""
    A = np.asarray(A)
    if A.ndim < 2:
        raise ValueError("hermitian() needs at least a 2-D array")
    return np.swapaxes(A, -1, -2).conj()


def norm2(v):
    """Euclidean norm over the last axis."""
    return np.sqrt(np.sum(np.abs(np.asarray(v)) ** 2, axis=-1))


def outer(u, v):
    """Outer product ``u v^H``."""
    u = as_complex(u)
    v = as_complex(v)
    return u[..., :, None] * v[..., None, :].conj()


def symmetrize(A):
    """Return the Hermitian part ``(A + A^H) / 2``."""
    return 0.5 * (A + hermitian(A))


def solve_hermitian(A, b, cond_cap=COND_CAP, check=True):
    """Solve ``A x = b`` for Hermitian ``A``.

    Parameters
    ----------
    A : array_like, shape (..., n, n)
        Hermitian (numerically nonsingular) system matrix.
    b : array_like, shape (..., n) or (..., n, k)
        Right-hand side(s).
    cond_cap : float
        Largest accepted 2-norm condition number.
    check : bool
        Skip the Hermitian and conditioning checks when False (hot loops).

    Raises
    ------
    IllConditionedError
        If ``A`` is singular or its condition number exceeds ``cond_cap``.
    """
    A = as_complex(A)
    b = as_complex(b)
    if A.shape[-1] != A.shape[-2]:
        raise ValueError(f"solve_hermitian: A must be square, got {A.shape}")
    vector_rhs = b.ndim == A.ndim - 1
    if b.shape[-1 if vector_rhs else -2] != A.shape[-1]:
        raise ValueError(f"solve_hermitian: rhs shape {b.shape} does not match {A.shape}")
    if check:
        scale = np.max(np.abs(A)) if A.size else 0.0
        if not np.allclose(A, hermitian(A), rtol=1e-8, atol=1e-12 * max(scale, 1.0)):
            raise ValueError("solve_hermitian: A is not Hermitian")
        cond = np.linalg.cond(A)
        if not np.all(np.isfinite(cond)) or np.any(cond > cond_cap):
            raise IllConditionedError(cond)
    rhs = b[..., None] if vector_rhs else b
    try:
        x = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError(np.inf) from exc
    return x[..., 0] if vector_rhs else x
