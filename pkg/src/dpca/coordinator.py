"""Central stage: majority-vote identification and debiased recovery.

Everything here consumes only :class:`~dpca.machine.LocalSummary` values.
Summaries are processed in ascending ``machine_id`` order so that the
aggregated matrices are bitwise reproducible for a fixed input set.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from dpca.errors import ConfigError, NumericError
from dpca.linalg import inv_sqrt, sym_eig, thin_orthonormalize, top_eig_via_gram
from dpca.machine import LocalSummary

log = logging.getLogger(__name__)

DEGENERATE_WEAK = 1e-10


@dataclass(frozen=True)
class IdentifiedSet:
    per_spike: tuple
    union: np.ndarray

    @property
    def K_t(self) -> int:
        return int(self.union.size)


@dataclass(frozen=True)
class IntermediateEstimate:
    """Strong/weak split of one spike's intermediate estimate."""

    spike: int
    strong: np.ndarray
    weak: np.ndarray
    aligned_sign: float

    def assemble(self, union: np.ndarray, p: int) -> np.ndarray:
        out = np.zeros(p)
        mask = np.ones(p, dtype=bool)
        mask[union] = False
        out[union] = self.strong
        out[mask] = self.weak
        return out


@dataclass
class GlobalEstimate:
    """Coordinator output.

    ``fallback`` is true when the symmetric orthogonalization was replaced by
    a pivoted QR because the Gram matrix was near singular. ``clamps``
    totals the clamped correction factors over all input summaries.
    ``cross_gram`` is ``vectors.T @ vectors``; its off-diagonal entries
    between sparse and non-sparse columns are not forced to zero.
    """

    vectors: np.ndarray
    sparse_flags: np.ndarray
    identified: IdentifiedSet | None
    method_tag: str
    fallback: bool = False
    clamps: int = 0
    intermediates: list = field(default_factory=list)

    @property
    def cross_gram(self) -> np.ndarray:
        return self.vectors.T @ self.vectors


def _ordered(summaries) -> list[LocalSummary]:
    summaries = list(summaries)
    if not summaries:
        raise ConfigError("need at least one local summary")
    first = summaries[0]
    for s in summaries[1:]:
        if (s.p, s.K, s.mode, s.t) != (first.p, first.K, first.mode, first.t):
            raise ConfigError(
                f"machine {s.machine_id} disagrees on (p, K, mode, t): "
                f"{(s.p, s.K, s.mode, s.t)} vs {(first.p, first.K, first.mode, first.t)}"
            )
    return sorted(summaries, key=lambda s: s.machine_id)


def identify(summaries, t: float | None = None) -> IdentifiedSet:
    """Coordinates flagged by a strict majority of machines, per spike."""
    summaries = _ordered(summaries)
    if t is not None and t != summaries[0].t:
        raise ConfigError(f"summaries were thresholded at t={summaries[0].t}, not {t}")
    m = len(summaries)
    votes = np.zeros(summaries[0].indicators.shape, dtype=np.int64)
    for s in summaries:
        votes += s.indicators
    # votes / m > 1/2, kept in integers
    chosen = 2 * votes > m
    per_spike = tuple(np.flatnonzero(row) for row in chosen)
    union = np.flatnonzero(chosen.any(axis=0))
    return IdentifiedSet(per_spike, union)


def _scaled_factor(summaries: list[LocalSummary], i: int, restrict=None) -> np.ndarray:
    """``W`` with ``W @ W.T`` equal to the aggregated matrix for spike ``i``."""
    m = len(summaries)
    cols = np.stack([s.top_vectors[:, i] / s.theta[i] for s in summaries], axis=1)
    if restrict is not None:
        cols = cols[np.asarray(restrict, dtype=np.int64)]
    return cols / math.sqrt(m)


def aggregate_Si(summaries, i: int, restrict=None) -> np.ndarray:
    """Average of the bias-corrected rank-one projections for spike ``i``.

    With ``restrict``, only those rows and columns are kept.
    """
    summaries = _ordered(summaries)
    if not 0 <= i < summaries[0].K:
        raise ValueError(f"spike index {i} out of range")
    rows = summaries[0].p if restrict is None else len(restrict)
    out = np.zeros((rows, rows))
    for s in summaries:
        v = s.top_vectors[:, i] if restrict is None else s.top_vectors[np.asarray(restrict, int), i]
        out += np.outer(v, v) / s.theta[i] ** 2
    out /= len(summaries)
    return (out + out.T) / 2


def _principal(w: np.ndarray, k: int = 1):
    """Top-k eigenpairs of ``w @ w.T`` without forming it when ``w`` is wide."""
    rows, cols = w.shape
    if rows <= cols:
        pairs = sym_eig(w @ w.T, k)
        return pairs.values[:k], pairs.vectors
    pairs = top_eig_via_gram(w, min(k, cols))
    return pairs.values[:k] * cols, pairs.vectors


def _principal_vector(w: np.ndarray) -> tuple[float, np.ndarray]:
    values, vectors = _principal(w, 1)
    return float(values[0]), vectors[:, 0]


def _orthogonalize(u: np.ndarray) -> tuple[np.ndarray, bool]:
    try:
        return u @ inv_sqrt(u.T @ u), False
    except NumericError as exc:
        log.warning("falling back to pivoted QR: %s", exc)
        return thin_orthonormalize(u), True


def recover_no_signal(summaries) -> GlobalEstimate:
    """Principal eigenvector of each aggregated matrix, then symmetric orthogonalization."""
    summaries = _ordered(summaries)
    K = summaries[0].K
    tilde = np.column_stack([_principal_vector(_scaled_factor(summaries, i))[1] for i in range(K)])
    vectors, fallback = _orthogonalize(tilde)
    return GlobalEstimate(
        vectors=vectors,
        sparse_flags=np.zeros(K, dtype=bool),
        identified=IdentifiedSet(tuple(np.array([], int) for _ in range(K)), np.array([], int)),
        method_tag="debiased",
        fallback=fallback,
        clamps=sum(s.clamps for s in summaries),
    )


def strong_signal_estimate(summaries, identified: IdentifiedSet, i: int) -> np.ndarray:
    """Best rank-one fit ``u u'`` with ``|u| <= 1`` to the restricted aggregate.

    For top eigenpair ``(mu, v)`` the minimizer is ``sqrt(mu) v`` when
    ``mu <= 1`` and ``v`` otherwise.
    """
    summaries = _ordered(summaries)
    if identified.K_t == 0:
        raise ValueError("strong-signal estimate needs a nonempty identified set")
    mu, v = _principal_vector(_scaled_factor(summaries, i, identified.union))
    if mu <= 0:
        log.warning("spike %d: degenerate restricted aggregate (mu=%g)", i, mu)
        return np.zeros(identified.K_t)
    return v * math.sqrt(mu) if mu <= 1 else v


def weak_signal_estimate(strong: np.ndarray, tilde: np.ndarray, identified: IdentifiedSet) -> np.ndarray:
    """Rescale the off-support part of ``tilde`` to fill the remaining unit-norm budget."""
    return _weak(strong, tilde, identified)[0]


def _weak(strong, tilde, identified) -> tuple[np.ndarray, float]:
    tilde = np.asarray(tilde, dtype=np.float64)
    mask = np.ones(tilde.size, dtype=bool)
    mask[identified.union] = False
    t1, t2 = tilde[~mask], tilde[mask]
    sign = 1.0 if float(strong @ t1) >= 0 else -1.0
    norm2 = float(np.linalg.norm(t2))
    if norm2 < DEGENERATE_WEAK:
        return np.zeros(t2.size), sign
    budget = math.sqrt(max(0.0, 1.0 - float(strong @ strong)))
    return sign * budget * t2 / norm2, sign


def sparsity_bar(m: int, p: int) -> float:
    return 1.0 - 2.0 / (m**0.25 * math.sqrt(p))


def recover(summaries, identified: IdentifiedSet) -> GlobalEstimate:
    """Strong/weak recovery with sparse detection and orthogonalization of the rest."""
    summaries = _ordered(summaries)
    if identified.K_t == 0:
        raise ValueError("recover needs a nonempty identified set; use recover_no_signal")
    p, K, m = summaries[0].p, summaries[0].K, len(summaries)
    union = identified.union
    bar = sparsity_bar(m, p)
    out = np.zeros((p, K))
    sparse = np.zeros(K, dtype=bool)
    dense_cols, dense_idx, inter = [], [], []
    for i in range(K):
        strong = strong_signal_estimate(summaries, identified, i)
        _, tilde = _principal_vector(_scaled_factor(summaries, i))
        weak, sign = _weak(strong, tilde, identified)
        est = IntermediateEstimate(i, strong, weak, sign)
        inter.append(est)
        s2 = float(strong @ strong)
        degenerate = not weak.any() and s2 > 0
        if s2 > 0 and (s2 >= bar or degenerate):
            sparse[i] = True
            out[union, i] = strong / math.sqrt(s2)
        else:
            dense_cols.append(est.assemble(union, p))
            dense_idx.append(i)
    fallback = False
    if dense_cols:
        ortho, fallback = _orthogonalize(np.column_stack(dense_cols))
        out[:, dense_idx] = ortho
    return GlobalEstimate(
        vectors=out,
        sparse_flags=sparse,
        identified=identified,
        method_tag="debiased",
        fallback=fallback,
        clamps=sum(s.clamps for s in summaries),
        intermediates=inter,
    )


def estimate(summaries, t: float | None = None) -> GlobalEstimate:
    """Debiased distributed estimate of the leading K eigenvectors."""
    summaries = _ordered(summaries)
    identified = identify(summaries, t)
    if identified.K_t == 0:
        return recover_no_signal(summaries)
    return recover(summaries, identified)


def fan_baseline(summaries) -> GlobalEstimate:
    """Top-K eigenvectors of the plain average of local rank-K projections."""
    summaries = _ordered(summaries)
    K, m = summaries[0].K, len(summaries)
    w = np.concatenate([s.top_vectors for s in summaries], axis=1) / math.sqrt(m)
    _, vectors = _principal(w, K)
    return GlobalEstimate(
        vectors=vectors[:, :K],
        sparse_flags=np.zeros(K, dtype=bool),
        identified=None,
        method_tag="fan",
        clamps=0,
    )
