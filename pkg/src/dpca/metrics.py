"""Subspace error, held-out energy ratio and eigenvector alignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dpca.errors import DataError


@dataclass
class MetricsRecord:
    replication: int
    method: str
    rho: float | None = None
    ar: float | None = None
    alignments: tuple | None = None
    clamp_count: int = 0
    fallback: bool = False
    seconds: float | None = None
    error: str | None = None


def rho(est, truth) -> float:
    """Frobenius distance between the projections ``est est'`` and ``truth truth'``.

    ``truth`` must have orthonormal columns. Writing ``est = truth C + R``
    with ``R`` orthogonal to ``truth``, the squared distance splits into
    ``|C C' - I|^2 + 2 |R C'|^2 + |R'R|^2``. Every term is nonnegative, so
    small distances do not suffer cancellation, and nothing p x p is formed.
    """
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.ndim == 1:
        est = est[:, None]
    if truth.ndim == 1:
        truth = truth[:, None]
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {truth.shape}")
    c = truth.T @ est
    r = est - truth @ c
    k = truth.shape[1]
    sq = np.sum((c @ c.T - np.eye(k)) ** 2) + 2.0 * np.sum((r @ c.T) ** 2) + np.sum((r.T @ r) ** 2)
    return float(np.sqrt(sq))


def ar(basis, y) -> float:
    """Share of the energy of the columns of ``y`` captured by ``span(basis)``.

    ``basis`` must have orthonormal columns (to 1e-6).
    """
    basis = np.asarray(basis, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    k = basis.shape[1]
    if np.max(np.abs(basis.T @ basis - np.eye(k)), initial=0.0) > 1e-6:
        raise ValueError("AR needs an orthonormal basis")
    total = float(np.sum(y * y))
    if total == 0.0:
        raise DataError("held-out data is identically zero")
    proj = basis.T @ y
    return float(np.clip(np.sum(proj * proj) / total, 0.0, 1.0))


def alignment(est_vec, true_vec) -> float:
    return float(abs(np.dot(est_vec, true_vec)))


def alignments(est, truth) -> tuple:
    """Column-wise ``|est_i' truth_i|``."""
    return tuple(float(abs(v)) for v in np.einsum("ij,ij->j", est, truth))
