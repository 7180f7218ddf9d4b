import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from triscale.errors import NotNormal, NotSelfAdjoint
from triscale.linalg import (SELF_ADJOINT, SKEW_ADJOINT, adjointness, herm_eig,
                             null_projection, operator_norm, projection_defects,
                             pseudo_inverse, spectral_split, to_mp)


def random_hermitian(rng, n):
    g = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (g + g.conj().T) / 2


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_herm_eig_matches_lapack(n, seed):
    a = random_hermitian(np.random.default_rng(seed), n)
    w, v = herm_eig(a)
    np.testing.assert_allclose(w, np.linalg.eigvalsh(a), atol=1e-11)
    np.testing.assert_allclose(v.conj().T @ v, np.eye(n), atol=1e-12)
    np.testing.assert_allclose(a @ v, v * w, atol=1e-11)


def test_herm_eig_batched_agrees_with_single():
    rng = np.random.default_rng(3)
    stack = np.stack([random_hermitian(rng, 3) for _ in range(20)])
    w, v = herm_eig(stack)
    for i in range(20):
        wi, _ = herm_eig(stack[i])
        np.testing.assert_allclose(w[i], wi, atol=1e-12)
    np.testing.assert_allclose(stack @ v, v * w[:, None, :], atol=1e-11)


def test_herm_eig_multiprecision():
    rng = np.random.default_rng(5)
    a = random_hermitian(rng, 4)
    with mpmath.workdps(30):
        w, v = herm_eig(to_mp(a))
        w = np.array([float(x) for x in w])
    np.testing.assert_allclose(w, np.linalg.eigvalsh(a), atol=1e-13)


def test_herm_eig_rejects_non_hermitian():
    with pytest.raises(NotSelfAdjoint):
        herm_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_adjointness_classification():
    assert adjointness(np.diag([1.0, 2.0])) == SELF_ADJOINT
    assert adjointness(np.array([[0, 1], [-1, 0]])) == SKEW_ADJOINT
    assert adjointness(np.zeros((2, 2))) == SELF_ADJOINT
    assert adjointness(np.array([[0, 1], [0, 0]])) is None


def test_spectral_split_on_skew_matrix():
    a = np.array([[0, 2, 0], [-2, 0, 0], [0, 0, 0]], dtype=complex)
    P, pinv, kind = spectral_split(a)
    assert kind == SKEW_ADJOINT
    np.testing.assert_allclose(P, np.diag([0, 0, 1]), atol=1e-14)
    np.testing.assert_allclose(pinv, np.linalg.pinv(a), atol=1e-14)
    idem, sym = projection_defects(P)
    assert idem < 1e-14 and sym < 1e-14


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(0, 6), st.integers(0, 2**31 - 1))
def test_pseudo_inverse_penrose_conditions(n, rank_drop, seed):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    lam = rng.uniform(0.5, 2.0, n) * rng.choice([-1, 1], n)
    lam[: min(rank_drop, n)] = 0.0
    a = (q * lam) @ q.conj().T
    x = pseudo_inverse(a)
    np.testing.assert_allclose(a @ x @ a, a, atol=1e-11)
    np.testing.assert_allclose(x @ a @ x, x, atol=1e-11)
    np.testing.assert_allclose(x, np.linalg.pinv(a, rcond=1e-10), atol=1e-10)
    P = null_projection(a)
    np.testing.assert_allclose(a @ P, 0, atol=1e-11)
    assert round(np.trace(P).real) == min(rank_drop, n)


def test_zero_matrix_splits_to_identity():
    P, pinv, _ = spectral_split(np.zeros((3, 3)))
    np.testing.assert_array_equal(P, np.eye(3))
    np.testing.assert_array_equal(pinv, np.zeros((3, 3)))


def test_non_normal_rejected():
    with pytest.raises(NotNormal):
        spectral_split(np.array([[1.0, 1.0], [0.0, 2.0]]))


def test_operator_norm():
    a = np.array([[3.0, 4.0], [0.0, 0.0]])
    assert operator_norm(a) == pytest.approx(5.0, rel=1e-14)
