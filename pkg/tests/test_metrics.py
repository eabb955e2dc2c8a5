import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpca.errors import DataError
from dpca.metrics import alignment, alignments, ar, rho


def orthonormal(rng, p, k):
    q, _ = np.linalg.qr(rng.standard_normal((p, k)))
    return q


def rho_dense(est, truth):
    return np.linalg.norm(est @ est.T - truth @ truth.T)


def test_rho_zero_for_truth_and_sign_flips():
    q = orthonormal(np.random.default_rng(0), 20, 3)
    assert rho(q, q) < 1e-14
    assert rho(q * np.array([-1, 1, -1]), q) < 1e-14


def test_rho_orthogonal_single_vector():
    e = np.eye(5)
    assert rho(e[:, 0], e[:, 1]) == pytest.approx(math.sqrt(2), abs=1e-15)


def test_rho_matches_explicit_projection_difference():
    rng = np.random.default_rng(1)
    truth = orthonormal(rng, 40, 2)
    est = rng.standard_normal((40, 2))
    assert rho(est, truth) == pytest.approx(rho_dense(est, truth), rel=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 40), st.integers(1, 3), st.integers(0, 2**31))
def test_rho_rotation_invariance(p, k, seed):
    rng = np.random.default_rng(seed)
    k = min(k, p - 1)
    truth = orthonormal(rng, p, k)
    est = orthonormal(rng, p, k)
    rot = orthonormal(rng, k, k)
    assert abs(rho_dense(est @ rot, truth) - rho_dense(est, truth)) < 1e-10
    assert abs(rho(est @ rot, truth) - rho(est, truth)) < 1e-10


def test_rho_shape_mismatch():
    with pytest.raises(ValueError):
        rho(np.zeros((4, 2)), np.zeros((4, 1)))


def test_ar_examples():
    rng = np.random.default_rng(2)
    basis = np.eye(6)[:, :2]
    inside = np.zeros((6, 30))
    inside[:2] = rng.standard_normal((2, 30))
    assert ar(basis, inside) == pytest.approx(1.0, abs=1e-15)
    outside = np.zeros((6, 30))
    outside[2:] = rng.standard_normal((4, 30))
    assert ar(basis, outside) == 0.0
    half = np.zeros((6, 2))
    half[0, 0] = 1.0
    half[3, 1] = 1.0
    assert ar(basis, half) == pytest.approx(0.5, abs=1e-10)


def test_ar_errors():
    with pytest.raises(DataError):
        ar(np.eye(3)[:, :1], np.zeros((3, 4)))
    with pytest.raises(ValueError):
        ar(2 * np.eye(3)[:, :1], np.ones((3, 4)))


def test_alignment_examples():
    e = np.eye(3)
    assert alignment(e[0], e[0]) == 1.0
    assert alignment(e[0], e[1]) == 0.0
    planted = (e[0] + e[1]) / math.sqrt(2)
    assert alignment(planted, e[0]) == pytest.approx(math.sqrt(2) / 2, abs=1e-12)
    assert alignments(np.column_stack([planted, -e[2]]), e[:, [0, 2]]) == pytest.approx((math.sqrt(0.5), 1.0))
