"""Spiked population models with known ground truth, and samplers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from dpca.errors import ConfigError, DataError, NumericError
from dpca.linalg import fix_signs, sqrt_psd, sym_eig, symmetrize

SIGNAL_THRESHOLD = 0.1
DISTRIBUTIONS = ("gaussian", "centered_exponential")

# Constants of the dense leading block of the mixed model.
MIXED_A1 = 0.9
MIXED_A2 = 0.74


@dataclass
class SpikedModel:
    """Population covariance (or correlation) with its top-K eigenpairs.

    ``true_values`` holds the K leading eigenvalues and ``true_vectors`` the
    matching p x K orthonormal columns. ``bulk_top`` is the (K+1)-th
    eigenvalue. ``signal_sets[i]`` lists the coordinates where
    ``|true_vectors[:, i]|`` exceeds :data:`SIGNAL_THRESHOLD`.
    """

    name: str
    sigma: np.ndarray
    K: int
    true_values: np.ndarray
    true_vectors: np.ndarray
    bulk_top: float
    signal_sets: tuple
    is_correlation: bool = False
    _root: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def p(self) -> int:
        return self.sigma.shape[0]

    @property
    def signal_union(self) -> np.ndarray:
        return np.unique(np.concatenate(self.signal_sets)) if self.signal_sets else np.array([], int)

    def root(self) -> np.ndarray:
        """Symmetric square root of ``sigma``, computed once and cached."""
        if self._root is None:
            self._root = _block_sqrt(self.sigma)
        return self._root


def _blocks(a: np.ndarray) -> list[tuple[int, int]]:
    """Contiguous diagonal blocks of a block-diagonal matrix."""
    p = a.shape[0]
    nz = a != 0
    # reach[j] = furthest row/column touched by anything at or before j
    last = np.where(nz.any(axis=1), p - 1 - np.argmax(nz[:, ::-1], axis=1), np.arange(p))
    reach = np.maximum.accumulate(np.maximum(last, np.arange(p)))
    out, start = [], 0
    for j in range(p):
        if reach[j] == j:
            out.append((start, j + 1))
            start = j + 1
    return out


def _block_sqrt(a: np.ndarray) -> np.ndarray:
    """``sqrt_psd`` applied block by block; identical result, far cheaper on block-diagonal input."""
    root = np.zeros_like(a)
    for lo, hi in _blocks(a):
        block = a[lo:hi, lo:hi]
        if hi - lo == 1:
            if block[0, 0] < 0:
                raise NumericError(f"matrix is not PSD (diagonal entry {block[0, 0]:.3e})")
            root[lo, lo] = math.sqrt(block[0, 0])
        elif np.count_nonzero(block - np.diag(np.diag(block))) == 0:
            if np.min(np.diag(block)) < 0:
                raise NumericError("matrix is not PSD")
            root[lo:hi, lo:hi] = np.diag(np.sqrt(np.diag(block)))
        else:
            root[lo:hi, lo:hi] = sqrt_psd(block)
    return root


def from_matrix(sigma, K: int, name: str = "custom", is_correlation: bool = False,
                closed_form: np.ndarray | None = None) -> SpikedModel:
    """Wrap an arbitrary symmetric PSD matrix as a spiked model.

    Ground truth is taken from a dense eigendecomposition. When
    ``closed_form`` is given, it must agree with the numerical eigenvectors
    up to sign to 1e-6.
    """
    sigma = symmetrize(sigma)
    p = sigma.shape[0]
    if not 1 <= K < p:
        raise ConfigError(f"spike count K={K} must lie in [1, {p - 1}]")
    values, vectors = _top_pairs(sigma, K)
    if values[-1] < -1e-10:
        raise NumericError(f"{name}: population matrix is not PSD (eigenvalue {values[-1]:.3e})")
    if np.any(np.diff(values[: K + 1]) >= 0):
        raise ConfigError(f"{name}: leading {K} eigenvalues are not strictly separated")
    true_vectors = vectors[:, :K]
    if closed_form is not None:
        signs = np.sign(np.sum(closed_form * true_vectors, axis=0))
        if np.max(np.abs(closed_form - true_vectors * signs)) > 1e-6:
            raise NumericError(f"{name}: closed-form eigenvectors disagree with numerical ones")
        true_vectors = true_vectors * signs
    sets = tuple(np.flatnonzero(np.abs(true_vectors[:, i]) > SIGNAL_THRESHOLD) for i in range(K))
    return SpikedModel(
        name=name,
        sigma=sigma,
        K=K,
        true_values=values[:K].copy(),
        true_vectors=true_vectors,
        bulk_top=float(values[K]),
        signal_sets=sets,
        is_correlation=is_correlation,
    )


def _top_pairs(sigma: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray]:
    # The smallest eigenvalue is needed for the PSD check, the top K+1 for truth.
    p = sigma.shape[0]
    if p <= 600:
        pairs = sym_eig(sigma, K)
        return np.append(pairs.values[: K + 1], pairs.values[-1]), pairs.vectors
    values, vectors = scipy.linalg.eigh(sigma, subset_by_index=[p - K - 1, p - 1])
    smallest = scipy.linalg.eigh(sigma, eigvals_only=True, subset_by_index=[0, 0])
    return np.append(values[::-1], smallest), fix_signs(vectors[:, ::-1][:, :K])


def _check_p(p: int) -> None:
    if p % 2 != 0:
        raise ConfigError(f"p={p} must be even")
    if p < 40:
        raise ConfigError(f"p={p} too small; the spiked blocks need p >= 40")


def build_sparse_model(p: int) -> SpikedModel:
    """Two sparse spikes (eigenvalues 4 and 3) on disjoint 6- and 4-blocks."""
    _check_p(p)
    sigma = np.zeros((p, p))
    sigma[:4, :4] = 11 / 16 * np.ones((4, 4)) + 0.25 * np.eye(4)
    sigma[4:10, 4:10] = 5 / 8 * np.ones((6, 6)) + 0.25 * np.eye(6)
    half = p // 2
    idx = np.arange(10, p)
    sigma[idx, idx] = np.where(idx < half, 1.0, 0.5)
    u = np.zeros((p, 2))
    u[4:10, 0] = 1 / math.sqrt(6)
    u[:4, 1] = 0.5
    return from_matrix(sigma, 2, name="sparse", closed_form=u)


def mixed_constants(p: int, printed_a4: bool = False) -> tuple[float, float, float, float]:
    """Constants (a1, a2, a3, a4) of the dense block ``M`` of the mixed model.

    By default ``a4`` is the value that makes the closed-form leading
    eigenvector exact, ``(5 - a1 - 3 a3 sqrt(3p - 36)) / (p/2 - 7)``.
    ``printed_a4=True`` substitutes ``sqrt(3p - 12)`` instead, which leaves
    a residual of order ``1/p`` in the eigen-equation.
    """
    a1, a2 = MIXED_A1, MIXED_A2
    a3 = (5 - a1 - 5 * a2) * math.sqrt(3) / math.sqrt(p - 12)
    inner = 3 * p - 12 if printed_a4 else 3 * p - 36
    a4 = (5 - 3 * a3 * math.sqrt(inner) - a1) / (p / 2 - 7)
    return a1, a2, a3, a4


def build_mixed_model(p: int, printed_a4: bool = False) -> SpikedModel:
    """A dense spike (eigenvalue 5) on the first half and a sparse one (3) on a 4-block."""
    _check_p(p)
    half = p // 2
    a1, a2, a3, a4 = mixed_constants(p, printed_a4)
    rest = half - 6
    m = np.empty((half, half))
    m[:6, :6] = a2 * np.ones((6, 6)) + (a1 - a2) * np.eye(6)
    m[:6, 6:] = a3
    m[6:, :6] = a3
    m[6:, 6:] = a4 * np.ones((rest, rest)) + (a1 - a4) * np.eye(rest)
    if np.min(scipy.linalg.eigvalsh(m)) < -1e-10:
        raise ConfigError(f"p={p}: dense block of the mixed model is not PSD")
    sigma = np.zeros((p, p))
    sigma[:half, :half] = m
    sigma[half:half + 4, half:half + 4] = 0.7 * np.ones((4, 4)) + 0.2 * np.eye(4)
    idx = np.arange(half + 4, p)
    sigma[idx, idx] = 1.0
    u = np.zeros((p, 2))
    u[:6, 0] = math.sqrt(0.9 / 6)
    u[6:half, 0] = math.sqrt(0.1 / rest)
    u[half:half + 4, 1] = 0.5
    return from_matrix(sigma, 2, name="mixed", closed_form=None if printed_a4 else u)


def to_correlation(model: SpikedModel) -> SpikedModel:
    """Rescale a covariance model to unit diagonal and recompute its truth."""
    if model.is_correlation:
        return model
    d = np.diag(model.sigma)
    if np.any(d <= 0):
        raise DataError("covariance has a nonpositive diagonal entry")
    if np.all(d == 1.0):
        return replace(model, is_correlation=True)
    s = 1 / np.sqrt(d)
    r = model.sigma * s[:, None] * s[None, :]
    np.fill_diagonal(r, 1.0)
    out = from_matrix(r, model.K, name=model.name, is_correlation=True)
    signs = np.sign(np.sum(out.true_vectors * model.true_vectors, axis=0))
    signs[signs == 0] = 1
    return replace(out, true_vectors=out.true_vectors * signs)


def build_model(name: str, p: int) -> SpikedModel:
    if name == "sparse":
        return build_sparse_model(p)
    if name == "mixed":
        return build_mixed_model(p)
    raise ConfigError(f"unknown model {name!r}; expected 'sparse', 'mixed' or 'file:<path>'")


def innovations(rng: np.random.Generator, shape: tuple[int, int], dist: str) -> np.ndarray:
    """Standardized i.i.d. noise: N(0, 1) or Exp(1) - 1."""
    if dist == "gaussian":
        return rng.standard_normal(shape)
    if dist == "centered_exponential":
        return rng.standard_exponential(shape) - 1.0
    raise ConfigError(f"unknown distribution {dist!r}; expected one of {DISTRIBUTIONS}")


def sample(model: SpikedModel, n: int, dist: str = "gaussian", seed=None) -> np.ndarray:
    """Draw ``n`` observations ``sigma^{1/2} z`` as the columns of a p x n array.

    ``seed`` may be an int or a :class:`numpy.random.SeedSequence`.
    """
    if n < 1:
        raise ConfigError(f"sample size must be positive, got {n}")
    rng = np.random.default_rng(seed)
    z = innovations(rng, (model.p, n), dist)
    return model.root() @ z
