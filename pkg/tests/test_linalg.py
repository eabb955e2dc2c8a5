import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dpca.errors import NumericError
from dpca.linalg import (
    fix_signs,
    inv_sqrt,
    sqrt_psd,
    sym_eig,
    thin_orthonormalize,
    top_eig_via_gram,
)


def random_orthogonal(rng, p):
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    return q * np.sign(np.diag(r))


def test_diagonal_gives_sorted_values_and_signed_identity_columns():
    values, vectors = sym_eig(np.diag([3.0, 1.0, 2.0]))
    assert np.allclose(values, [3, 2, 1])
    assert np.allclose(np.abs(vectors), np.eye(3)[:, [0, 2, 1]])


def test_two_by_two_hand_solution():
    values, vectors = sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert np.allclose(values, [3, 1], atol=1e-14)
    assert np.allclose(vectors[:, 0], [1 / np.sqrt(2), 1 / np.sqrt(2)], atol=1e-14)


def test_similarity_invariance():
    rng = np.random.default_rng(0)
    d = rng.uniform(-3, 5, 12)
    q = random_orthogonal(rng, 12)
    values, vectors = sym_eig(q @ np.diag(d) @ q.T)
    assert np.allclose(values, np.sort(d)[::-1], atol=1e-12)
    assert np.allclose(vectors.T @ vectors, np.eye(12), atol=1e-12)


def test_truncated_call_matches_full():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((30, 30))
    a = a + a.T
    full = sym_eig(a)
    top = sym_eig(a, 4)
    assert np.array_equal(top.values.shape, (30,))
    assert np.allclose(top.values, full.values, atol=1e-12)
    assert np.allclose(top.vectors, full.vectors[:, :4], atol=1e-10)


def test_sign_convention_largest_entry_positive():
    v = fix_signs(np.array([[0.1, -0.9], [-0.8, 0.2]]))
    assert np.allclose(v, [[-0.1, 0.9], [0.8, -0.2]])


def test_non_finite_rejected():
    with pytest.raises(ValueError, match="non-finite"):
        sym_eig(np.array([[1.0, np.nan], [np.nan, 1.0]]))


def test_deterministic_on_repeat():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((50, 50))
    a = a @ a.T
    one, two = sym_eig(a, 3), sym_eig(a, 3)
    assert np.array_equal(one.values, two.values)
    assert np.array_equal(one.vectors, two.vectors)


def test_gram_rank_one_case():
    n, p = 8, 12
    x = np.zeros((p, n))
    x[0] = np.sqrt(2.0)
    values, vectors = top_eig_via_gram(x, 1)
    assert values.shape == (p,)
    assert np.allclose(values, [2.0] + [0.0] * (p - 1))
    assert np.allclose(vectors[:, 0], np.eye(p)[0])


@pytest.mark.parametrize("p,n", [(60, 20), (20, 60), (40, 40)])
def test_gram_matches_direct(p, n):
    rng = np.random.default_rng(p * 1000 + n)
    x = rng.standard_normal((p, n))
    k = 5
    direct = sym_eig(x @ x.T / n, k)
    via = top_eig_via_gram(x, k)
    r = min(p, n)
    assert np.allclose(via.values[:r], direct.values[:r], atol=1e-8)
    assert np.allclose(via.values[r:], 0.0)
    assert np.allclose(via.vectors, direct.vectors[:, :k], atol=1e-8)


def test_gram_pads_zeros_when_wide():
    rng = np.random.default_rng(3)
    values, vectors = top_eig_via_gram(rng.standard_normal((2000, 200)), 3)
    assert values.size == 2000
    assert np.count_nonzero(values[200:]) == 0
    assert np.all(values[:200] > 0)
    assert np.allclose(vectors.T @ vectors, np.eye(3), atol=1e-10)


def test_gram_rejects_k_too_large_and_rank_deficiency():
    with pytest.raises(ValueError):
        top_eig_via_gram(np.ones((5, 3)), 4)
    x = np.zeros((6, 4))
    x[0, 0] = 1.0
    with pytest.raises(NumericError):
        top_eig_via_gram(x, 2)


def test_inv_sqrt_examples():
    assert np.allclose(inv_sqrt(np.eye(3)), np.eye(3))
    assert np.allclose(inv_sqrt(np.diag([4.0, 9.0])), np.diag([0.5, 1 / 3]))
    q = random_orthogonal(np.random.default_rng(4), 6)[:, :3]
    assert np.allclose(inv_sqrt(q.T @ q), np.eye(3), atol=1e-12)


def test_inv_sqrt_near_singular():
    with pytest.raises(NumericError, match="near-singular Gram matrix"):
        inv_sqrt(np.diag([1.0, 1e-12]))


def test_sqrt_psd_examples():
    assert np.allclose(sqrt_psd(np.eye(4)), np.eye(4))
    assert np.allclose(sqrt_psd(np.diag([4.0, 1.0])), np.diag([2.0, 1.0]))
    assert np.allclose(sqrt_psd(np.diag([1.0, -1e-9])), np.diag([1.0, 0.0]))
    with pytest.raises(NumericError, match="not PSD"):
        sqrt_psd(np.diag([1.0, -1e-3]))


def test_thin_orthonormalize_keeps_order_and_span():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((20, 4))
    a[:, 3] *= 100
    q = thin_orthonormalize(a)
    assert np.allclose(q.T @ q, np.eye(4), atol=1e-12)
    # same column space
    assert np.allclose(q @ q.T @ a, a, atol=1e-9)
    assert np.all(np.einsum("ij,ij->j", q, a) > 0)


sym_matrices = st.integers(2, 12).flatmap(
    lambda n: arrays(np.float64, (n, n), elements=st.floats(-10, 10, allow_nan=False))
)


@settings(max_examples=60, deadline=None)
@given(sym_matrices)
def test_reconstruction_property(a):
    a = (a + a.T) / 2
    values, vectors = sym_eig(a)
    assert np.all(np.diff(values) <= 1e-12)
    assert np.allclose(vectors @ np.diag(values) @ vectors.T, a, atol=1e-8 * max(1, np.abs(a).max()))


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 30), st.integers(3, 30), st.integers(0, 2**31))
def test_gram_equivalence_property(p, n, seed):
    x = np.random.default_rng(seed).standard_normal((p, n))
    k = min(p, n) // 3 + 1
    direct = sym_eig(x @ x.T / n)
    via = top_eig_via_gram(x, k)
    assert np.allclose(via.values, direct.values.clip(0), atol=1e-8)
    gap = np.min(np.abs(np.diff(direct.values[: k + 1])))
    if gap > 1e-3:
        assert np.allclose(via.vectors, direct.vectors[:, :k], atol=1e-8 / gap + 1e-9)
