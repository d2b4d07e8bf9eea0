"""Small dense matrix kernel.

Vector p-norms, induced matrix norms and matrix measures (logarithmic
norms) for p in {1, 2, inf}, a cyclic Jacobi eigensolver for symmetric
matrices, and the block-level bounds used to lift per-agent quantities to
the whole network.

All routines accept a single ``(n, n)`` matrix or a stack ``(..., n, n)``
and broadcast over the leading axes.  Matrices here are tiny (a few dozen
rows at most), so the Jacobi solver is written for clarity and batching,
not for large problems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SUPPORTED_P",
    "BlockMatrixBounds",
    "composite_measure_bound",
    "composite_norm_bound",
    "induced_norm",
    "jacobi_eigenvalues",
    "matrix_measure",
    "sym_eig_extremes",
    "symmetric_part",
    "vec_norm",
]

SUPPORTED_P = (1, 2, np.inf)
DEFAULT_TOL = 1e-12
_MAX_SWEEPS = 100


def _check_p(p):
    if p in ("inf", "Inf", "infinity"):
        return np.inf
    for q in SUPPORTED_P:
        if p == q:
            return q
    raise ValueError(f"unsupported p={p!r}; expected one of 1, 2, inf")


def _as_float_array(a, name="matrix"):
    arr = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def _as_square(A, name="matrix"):
    A = _as_float_array(A, name)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValueError(f"{name} must be square, got shape {A.shape}")
    return A


def vec_norm(v, p=2):
    """Return ``|v|_p`` for p in {1, 2, inf} (reduces over the last axis)."""
    p = _check_p(p)
    v = _as_float_array(v, "vector")
    if v.ndim == 0 or v.shape[-1] == 0:
        raise ValueError("vector must be non-empty")
    if p == 1:
        return np.sum(np.abs(v), axis=-1)
    if p == 2:
        return np.sqrt(np.sum(v * v, axis=-1))
    return np.max(np.abs(v), axis=-1)


def symmetric_part(A):
    """``(A + A^T) / 2`` over the last two axes."""
    A = np.asarray(A, dtype=float)
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def jacobi_eigenvalues(S, tol=DEFAULT_TOL):
    """Eigenvalues of symmetric ``S`` by cyclic Jacobi rotations.

    Sweeps over every (p, q) pair in row-cyclic order until the
    off-diagonal Frobenius mass of every matrix in the stack drops below
    ``tol * ||S||_F``.  Returns the eigenvalues sorted ascending along the
    last axis.

    The input is checked for symmetry to within ``tol`` (relative to its
    largest entry) and then symmetrized exactly.
    """
    S = _as_square(S, "symmetric matrix")
    scale = np.max(np.abs(S), axis=(-1, -2), keepdims=True) if S.size else 0.0
    asym = np.max(np.abs(S - np.swapaxes(S, -1, -2)), axis=(-1, -2), keepdims=True)
    if np.any(asym > tol * np.maximum(1.0, scale)):
        raise ValueError("matrix is not symmetric to within tolerance")

    n = S.shape[-1]
    batch_shape = S.shape[:-2]
    A = symmetric_part(S).reshape((-1, n, n)).copy()
    if n == 1:
        return A[:, 0, 0].reshape(batch_shape + (1,))

    fro = np.sqrt(np.sum(A * A, axis=(1, 2)))
    offmask = ~np.eye(n, dtype=bool)
    for _ in range(_MAX_SWEEPS):
        off = np.sqrt(np.sum(A[:, offmask] ** 2, axis=1))
        if np.all(off <= tol * fro):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[:, p, q]
                active = apq != 0.0
                if not np.any(active):
                    continue
                safe = np.where(active, apq, 1.0)
                # a vanishing pivot overflows to t = 0, i.e. no rotation
                with np.errstate(over="ignore"):
                    theta = (A[:, q, q] - A[:, p, p]) / (2.0 * safe)
                sign = np.where(theta >= 0.0, 1.0, -1.0)
                t = sign / (np.abs(theta) + np.hypot(1.0, theta))
                c = 1.0 / np.hypot(1.0, t)
                s = np.where(active, t * c, 0.0)
                c = np.where(active, c, 1.0)
                cc = c[:, None]
                ss = s[:, None]
                col_p = A[:, :, p].copy()
                col_q = A[:, :, q]
                A[:, :, p] = cc * col_p - ss * col_q
                A[:, :, q] = ss * col_p + cc * col_q
                row_p = A[:, p, :].copy()
                row_q = A[:, q, :]
                A[:, p, :] = cc * row_p - ss * row_q
                A[:, q, :] = ss * row_p + cc * row_q
                A[active, p, q] = 0.0
                A[active, q, p] = 0.0
    else:
        raise RuntimeError("Jacobi iteration did not converge")

    eig = np.sort(np.diagonal(A, axis1=1, axis2=2), axis=1)
    return eig.reshape(batch_shape + (n,))


def sym_eig_extremes(S, tol=DEFAULT_TOL):
    """Return ``(lambda_min, lambda_max)`` of symmetric ``S``."""
    eig = jacobi_eigenvalues(S, tol)
    return eig[..., 0], eig[..., -1]


def matrix_measure(A, p=2):
    """Matrix measure ``mu_p(A)`` induced by the p-vector norm.

    ``mu_1`` is the largest column sum with the diagonal taken signed,
    ``mu_inf`` the analogous row quantity and ``mu_2`` the largest
    eigenvalue of the symmetric part of ``A``.
    """
    p = _check_p(p)
    A = _as_square(A)
    if p == 2:
        return sym_eig_extremes(symmetric_part(A))[1]
    diag = np.diagonal(A, axis1=-2, axis2=-1)
    absA = np.abs(A)
    # column sums for mu_1, row sums for mu_inf
    axis = -2 if p == 1 else -1
    sums = np.sum(absA, axis=axis) - np.abs(diag) + diag
    return np.max(sums, axis=-1)


def induced_norm(A, p=2):
    """Induced matrix norm ``||A||_p``."""
    p = _check_p(p)
    A = _as_float_array(A)
    if A.ndim < 2:
        raise ValueError("expected a matrix")
    if p == 1:
        return np.max(np.sum(np.abs(A), axis=-2), axis=-1)
    if p == np.inf:
        return np.max(np.sum(np.abs(A), axis=-1), axis=-1)
    gram = symmetric_part(np.swapaxes(A, -1, -2) @ A)
    lam_max = sym_eig_extremes(gram)[1]
    return np.sqrt(np.maximum(lam_max, 0.0))


@dataclass(frozen=True)
class BlockMatrixBounds:
    """Per-block summary of an ``N x N`` block matrix.

    ``diag_measures[i]`` holds ``mu(A_ii)`` in the block norm and
    ``offdiag_norms[i, j]`` holds ``||A_ij||`` (zero on the diagonal).
    """

    diag_measures: np.ndarray
    offdiag_norms: np.ndarray

    def __post_init__(self):
        d = _as_float_array(self.diag_measures, "diag_measures").reshape(-1)
        o = _as_float_array(self.offdiag_norms, "offdiag_norms")
        n = d.shape[0]
        if n == 0:
            raise ValueError("need at least one block")
        if o.shape != (n, n):
            raise ValueError(f"offdiag_norms must be {n}x{n}, got {o.shape}")
        if np.any(o < 0):
            raise ValueError("off-diagonal norms must be non-negative")
        if np.any(np.diagonal(o) != 0):
            raise ValueError("offdiag_norms must have a zero diagonal")
        object.__setattr__(self, "diag_measures", d)
        object.__setattr__(self, "offdiag_norms", o)

    @property
    def n_blocks(self):
        return self.diag_measures.shape[0]

    @classmethod
    def from_matrix(cls, A, block_size, p=2):
        """Summarize a square matrix split into equal ``block_size`` blocks.

        Returns the bounds together with the diagonal block norms, which
        :func:`composite_norm_bound` needs.
        """
        A = _as_square(A)
        n = A.shape[0]
        if n % block_size:
            raise ValueError("matrix size is not a multiple of block_size")
        nb = n // block_size
        blocks = A.reshape(nb, block_size, nb, block_size).transpose(0, 2, 1, 3)
        norms = induced_norm(blocks, p)
        diag_norms = np.diagonal(norms).copy()
        diag_blocks = blocks[np.arange(nb), np.arange(nb)]
        offdiag = norms.copy()
        np.fill_diagonal(offdiag, 0.0)
        return cls(matrix_measure(diag_blocks, p), offdiag), diag_norms


def composite_measure_bound(b: BlockMatrixBounds) -> float:
    """Upper bound on the network measure, ``mu_inf`` of the reduced matrix.

    With the max-over-blocks outer norm this is
    ``max_i (mu(A_ii) + sum_{j != i} ||A_ij||)``.
    """
    return float(np.max(b.diag_measures + np.sum(b.offdiag_norms, axis=1)))


def composite_norm_bound(b: BlockMatrixBounds, include_diag_norms) -> float:
    """Upper bound on the network norm: ``max_i sum_j ||A_ij||``."""
    diag = _as_float_array(include_diag_norms, "include_diag_norms").reshape(-1)
    if diag.shape[0] != b.n_blocks:
        raise ValueError(
            f"expected {b.n_blocks} diagonal norms, got {diag.shape[0]}"
        )
    if np.any(diag < 0):
        raise ValueError("norms must be non-negative")
    return float(np.max(diag + np.sum(b.offdiag_norms, axis=1)))
