"""Dense symmetric eigen-kernels shared by every stage of the pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from dpca.errors import NumericError

ORTHO_TOL = 1e-10
DEFINITENESS_FLOOR = 1e-10
PSD_CLAMP = 1e-10
PSD_REJECT = 1e-6


@dataclass(frozen=True)
class EigenPairs:
    """Eigenvalues sorted descending with (possibly truncated) eigenvectors.

    ``vectors`` has one column per retained eigenvector, aligned with the
    leading entries of ``values``.
    """

    values: np.ndarray
    vectors: np.ndarray

    def __iter__(self):
        yield self.values
        yield self.vectors


def symmetrize(a) -> np.ndarray:
    """Return ``(a + a.T) / 2`` as a float array, rejecting non-finite input."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"matrix of dimension {a.shape[0]} has non-finite entries")
    return (a + a.T) / 2.0


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is positive.

    Ties in magnitude resolve to the lowest index (``argmax`` semantics).
    """
    vectors = np.array(vectors, dtype=np.float64, copy=True)
    if vectors.size == 0:
        return vectors
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def sym_eig(a, k: int | None = None) -> EigenPairs:
    """Full symmetric eigendecomposition, descending, with sign-fixed vectors.

    All eigenvalues are always returned. When ``k`` is given only the
    leading ``k`` eigenvectors are computed.
    """
    a = symmetrize(a)
    dim = a.shape[0]
    if k is not None and not 0 <= k <= dim:
        raise ValueError(f"k={k} outside [0, {dim}]")
    try:
        if k is None or k == dim:
            values, vectors = scipy.linalg.eigh(a, check_finite=False)
            values, vectors = values[::-1], vectors[:, ::-1]
        else:
            values = scipy.linalg.eigvalsh(a, check_finite=False)[::-1]
            if k == 0:
                vectors = np.zeros((dim, 0))
            else:
                _, vectors = scipy.linalg.eigh(
                    a, subset_by_index=[dim - k, dim - 1], check_finite=False
                )
                vectors = vectors[:, ::-1]
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericError(f"eigendecomposition failed for dimension {dim}: {exc}") from exc
    return EigenPairs(np.ascontiguousarray(values), fix_signs(vectors))


def top_eig_via_gram(x, k: int) -> EigenPairs:
    """Eigenpairs of ``x @ x.T / n`` computed through the ``n x n`` Gram matrix.

    The returned spectrum has length ``p``: the Gram eigenvalues followed by
    ``p - n`` structural zeros when ``p > n``.
    """
    x = np.asarray(x, dtype=np.float64)
    p, n = x.shape
    if not 0 <= k <= min(p, n):
        raise ValueError(f"k={k} exceeds min(p, n)={min(p, n)}")
    gram = x.T @ x / n
    pairs = sym_eig(gram, k)
    r = min(p, n)
    values = np.zeros(p)
    values[:r] = pairs.values[:r]
    lifted = x @ pairs.vectors
    norms = np.linalg.norm(lifted, axis=0)
    if np.any(norms <= 0.0) or np.any(~np.isfinite(norms)):
        raise NumericError(f"rank-deficient data: zero-norm eigenvector among the top {k}")
    return EigenPairs(values, fix_signs(lifted / norms))


def inv_sqrt(a) -> np.ndarray:
    """Symmetric inverse square root of a positive definite matrix."""
    a = symmetrize(a)
    values, vectors = scipy.linalg.eigh(a, check_finite=False)
    if values[0] <= DEFINITENESS_FLOOR:
        raise NumericError(
            f"near-singular Gram matrix (smallest eigenvalue {values[0]:.3e})"
        )
    b = (vectors / np.sqrt(values)) @ vectors.T
    return (b + b.T) / 2.0


def sqrt_psd(a) -> np.ndarray:
    """Symmetric square root of a positive semidefinite matrix."""
    a = symmetrize(a)
    values, vectors = scipy.linalg.eigh(a, check_finite=False)
    if values[0] < -PSD_REJECT:
        raise NumericError(f"matrix is not PSD (smallest eigenvalue {values[0]:.3e})")
    values = np.clip(values, 0.0, None)
    b = (vectors * np.sqrt(values)) @ vectors.T
    return (b + b.T) / 2.0


def thin_orthonormalize(a) -> np.ndarray:
    """Orthonormal basis for the columns of ``a`` via pivoted QR.

    Columns come back in the original order, each sign-aligned with the
    input column it replaces.
    """
    a = np.asarray(a, dtype=np.float64)
    q, r, perm = scipy.linalg.qr(a, mode="economic", pivoting=True)
    out = np.empty_like(q)
    out[:, perm] = q
    signs = np.sign(np.einsum("ij,ij->j", out, a))
    signs[signs == 0] = 1.0
    return out * signs
