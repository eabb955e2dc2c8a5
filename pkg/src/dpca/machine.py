"""Local stage: eigen-summary, bias-correction factors and threshold indicators.

A machine reduces its p x n data block to a :class:`LocalSummary` holding
``p + pK + K`` floats plus a K x p bitmask. That summary is the only thing
sent to the coordinator.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from dpca.errors import ConfigError, DataError, DecodeError, NumericError
from dpca.linalg import EigenPairs, sym_eig, top_eig_via_gram

THETA_FLOOR = 1e-6
MERGE_TOL = 1e-12
MODES = ("covariance", "correlation")

MAGIC = b"DPCA"
VERSION = 1
_HEADER = struct.Struct("<4sHIBIIH")
_CRC = struct.Struct("<I")


@dataclass(frozen=True)
class LocalSummary:
    machine_id: int
    n_local: int
    p: int
    K: int
    eigenvalues: np.ndarray
    top_vectors: np.ndarray
    theta: np.ndarray
    indicators: np.ndarray
    mode: str
    t: float

    @property
    def clamps(self) -> int:
        """Number of correction factors that hit a clamp bound."""
        return int(np.count_nonzero((self.theta == 1.0) | (self.theta == THETA_FLOOR)))

    @property
    def float_count(self) -> int:
        return self.eigenvalues.size + self.top_vectors.size + self.theta.size


def _clamp_theta(radicand: float) -> tuple[float, bool]:
    if not radicand > THETA_FLOOR**2:
        return THETA_FLOOR, True
    if radicand >= 1.0:
        return 1.0, True
    return math.sqrt(radicand), False


def theta_radicand(eigenvalues, i: int, n: int, p: int, K: int) -> float:
    """The quantity under the square root of the correction factor.

    ``i`` is the zero-based spike index. Bulk eigenvalues are
    ``eigenvalues[K:p]``, including any structural zeros when ``p > n``.
    """
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if lam.shape != (p,):
        raise ValueError(f"expected {p} eigenvalues, got shape {lam.shape}")
    if not 0 <= i < K < p:
        raise ValueError(f"need 0 <= i < K < p, got i={i}, K={K}, p={p}")
    li = lam[i]
    diff = lam[K:] - li
    if np.min(np.abs(diff)) < MERGE_TOL or li <= 0:
        raise NumericError(f"spike merged with bulk (spike {i}, eigenvalue {li:.6g})")
    a = 1.0 - (p - K) / n
    varphi = -a / li + np.sum(1.0 / diff) / n
    phi = a / li**2 + np.sum(1.0 / diff**2) / n
    return -varphi / (li * phi)


def correction_factor(eigenvalues, i: int, n: int, p: int, K: int) -> float:
    """Estimate of ``|u_i' u_hat_i|`` from the local spectrum, clamped into [1e-6, 1]."""
    return _clamp_theta(theta_radicand(eigenvalues, i, n, p, K))[0]


def _outer_eig(y: np.ndarray, k: int) -> EigenPairs:
    """Eigenpairs of ``y @ y.T``, via the Gram matrix when ``y`` is wide-short."""
    p, n = y.shape
    if p <= n:
        pairs = sym_eig(y @ y.T, k)
        return EigenPairs(np.clip(pairs.values, 0.0, None), pairs.vectors)
    pairs = top_eig_via_gram(y, k)
    # top_eig_via_gram normalizes by its column count; undo it
    return EigenPairs(np.clip(pairs.values * n, 0.0, None), pairs.vectors)


def local_summary(x, K: int, t: float, mode: str = "covariance", machine_id: int = 0,
                  center: bool = False) -> LocalSummary:
    """Reduce one machine's p x n data block to its one-shot summary.

    Without ``center`` the covariance is ``x x' / n`` on raw data. With
    ``center`` the local mean is removed and the divisor is ``n - 1``; the
    correction factors then use ``n - 1`` as the sample size.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    if not t > 0:
        raise ConfigError(f"threshold t must be positive, got {t}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or not np.all(np.isfinite(x)):
        raise DataError("local data must be a finite p x n array")
    p, n = x.shape
    if center:
        x = x - x.mean(axis=1, keepdims=True)
        n_eff = n - 1
    else:
        n_eff = n
    if not 1 <= K <= min(p, n_eff) - 1:
        raise ConfigError(f"K={K} must satisfy 1 <= K <= min(p, n) - 1 = {min(p, n_eff) - 1}")
    y = x / math.sqrt(n_eff)
    if mode == "correlation":
        d = np.einsum("ij,ij->i", y, y)
        if np.any(d <= 0):
            raise DataError(f"machine {machine_id}: zero-variance coordinate {int(np.argmin(d))}")
        y = y / np.sqrt(d)[:, None]
    pairs = _outer_eig(y, K)
    values, vectors = pairs.values, pairs.vectors
    theta = np.empty(K)
    for i in range(K):
        theta[i] = correction_factor(values, i, n_eff, p, K)
    indicators = np.abs(vectors / theta).T > t
    return LocalSummary(
        machine_id=int(machine_id),
        n_local=int(n),
        p=p,
        K=K,
        eigenvalues=values,
        top_vectors=np.ascontiguousarray(vectors),
        theta=theta,
        indicators=indicators,
        mode=mode,
        t=float(t),
    )


def serialize_summary(s: LocalSummary) -> bytes:
    """Encode a summary in the little-endian ``DPCA`` v1 wire format."""
    header = _HEADER.pack(MAGIC, VERSION, s.machine_id, MODES.index(s.mode), s.p, s.n_local, s.K)
    payload = b"".join((
        header,
        np.asarray(s.eigenvalues, "<f8").tobytes(),
        np.asarray(s.top_vectors, "<f8").tobytes(order="F"),
        np.asarray(s.theta, "<f8").tobytes(),
        np.packbits(s.indicators, axis=1, bitorder="little").tobytes(),
        struct.pack("<d", s.t),
    ))
    return payload + _CRC.pack(zlib.crc32(payload))


def payload_size(p: int, K: int) -> int:
    return _HEADER.size + 8 * (p + p * K + K) + K * ((p + 7) // 8) + 8 + _CRC.size


def deserialize_summary(data: bytes) -> LocalSummary:
    """Decode and validate a ``DPCA`` v1 payload."""
    data = bytes(data)
    if len(data) < _HEADER.size:
        raise DecodeError("truncation", f"{len(data)} bytes is shorter than the header")
    magic, version, machine_id, mode, p, n, K = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DecodeError("magic", f"bad magic {magic!r}")
    if version != VERSION:
        raise DecodeError("version", f"unsupported version {version}")
    expected = payload_size(p, K)
    if len(data) < expected:
        raise DecodeError("truncation", f"expected {expected} bytes, got {len(data)}")
    if len(data) > expected:
        raise DecodeError("truncation", f"{len(data) - expected} trailing bytes after payload")
    body, (crc,) = data[:-_CRC.size], _CRC.unpack_from(data, expected - _CRC.size)
    if zlib.crc32(body) != crc:
        raise DecodeError("checksum", "CRC32 mismatch")
    off = _HEADER.size

    def take(count: int) -> np.ndarray:
        nonlocal off
        arr = np.frombuffer(data, "<f8", count, off).astype(np.float64)
        off += 8 * count
        return arr

    eigenvalues = take(p)
    top_vectors = np.ascontiguousarray(take(p * K).reshape((p, K), order="F"))
    theta = take(K)
    width = (p + 7) // 8
    bits = np.frombuffer(data, np.uint8, K * width, off).reshape(K, width)
    indicators = np.unpackbits(bits, axis=1, count=p, bitorder="little").astype(bool)
    off += K * width
    (t,) = struct.unpack_from("<d", data, off)
    if mode >= len(MODES):
        raise DecodeError("invariant", f"unknown mode byte {mode}")
    s = LocalSummary(machine_id, n, p, K, eigenvalues, top_vectors, theta, indicators, MODES[mode], t)
    _validate(s)
    return s


def _validate(s: LocalSummary) -> None:
    def fail(msg: str):
        raise DecodeError("invariant", msg)

    if not 1 <= s.K < s.p:
        fail(f"K={s.K} out of range for p={s.p}")
    lam = s.eigenvalues
    if not np.all(np.isfinite(lam)) or np.any(np.diff(lam) > 0) or lam[-1] < 0:
        fail("eigenvalues must be finite, nonnegative and descending")
    gram = s.top_vectors.T @ s.top_vectors
    if not np.all(np.isfinite(gram)) or np.max(np.abs(gram - np.eye(s.K))) > 1e-8:
        fail("top vectors are not orthonormal")
    if np.any(s.theta < THETA_FLOOR) or np.any(s.theta > 1):
        fail("correction factors outside [1e-6, 1]")
    if not s.t > 0:
        fail(f"threshold {s.t} not positive")
    expected = np.abs(s.top_vectors / s.theta).T > s.t
    if not np.array_equal(expected, s.indicators):
        fail("indicator mask disagrees with vectors, theta and threshold")
