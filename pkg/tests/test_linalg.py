import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lmdkit.linalg import (
    SVDConvergenceError,
    eig_symmetric,
    frobenius_norm,
    matmul,
    pseudo_inverse,
    svd,
    truncated_svd,
)


def test_matmul_examples():
    np.testing.assert_array_equal(matmul(np.eye(2), np.eye(2)), np.eye(2))
    np.testing.assert_array_equal(matmul([[1, 2], [3, 4]], [[0], [0]]), [[0], [0]])
    # by hand: [[1*1+1*1, 1*0+1*1], [0*1+1*1, 0*0+1*1]]
    np.testing.assert_array_equal(matmul([[1, 1], [0, 1]], [[1, 0], [1, 1]]), [[2, 1], [1, 1]])


def test_matmul_mismatch_reports_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\) x \(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_frobenius_examples():
    assert frobenius_norm(np.zeros((2, 2))) == 0.0
    assert frobenius_norm(np.eye(2)) == pytest.approx(np.sqrt(2), abs=1e-15)
    assert frobenius_norm([[3, 4]]) == 5.0


def test_svd_diagonal():
    f = svd(np.diag([3.0, 2.0]))
    np.testing.assert_allclose(f.s, [3, 2], atol=1e-15)
    np.testing.assert_allclose(f.u, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(f.vt, np.eye(2), atol=1e-15)


def test_svd_permutation():
    np.testing.assert_allclose(svd([[0, 1], [1, 0]]).s, [1, 1], atol=1e-15)


def test_svd_shear_matches_characteristic_polynomial():
    # M^T M = [[1,1],[1,2]]: lambda^2 - 3 lambda + 1 = 0
    lam = np.array([(3 + np.sqrt(5)) / 2, (3 - np.sqrt(5)) / 2])
    np.testing.assert_allclose(svd([[1, 1], [0, 1]]).s, np.sqrt(lam), rtol=1e-14)


def _check_svd(a, f):
    m, n = a.shape
    assert np.all(np.diff(f.s) <= 0) and np.all(f.s >= 0)
    assert frobenius_norm(f.u.T @ f.u - np.eye(m)) <= 1e-10 * m
    assert frobenius_norm(f.vt @ f.vt.T - np.eye(n)) <= 1e-10 * n
    assert frobenius_norm(f.reconstruct() - a) <= 1e-8 * max(1.0, frobenius_norm(a))


@pytest.mark.parametrize("shape", [(1, 1), (1, 5), (5, 1), (3, 7), (7, 3), (16, 16)])
def test_svd_invariants_and_numpy_agreement(rng, shape):
    a = rng.standard_normal(shape)
    f = svd(a)
    _check_svd(a, f)
    np.testing.assert_allclose(f.s, np.linalg.svd(a, compute_uv=False), rtol=1e-12, atol=1e-13)


def test_svd_rank_deficient_and_zero(rng):
    a = rng.standard_normal((9, 2)) @ rng.standard_normal((2, 6))
    f = svd(a)
    _check_svd(a, f)
    assert np.count_nonzero(f.s) == 2
    z = svd(np.zeros((3, 4)))
    np.testing.assert_array_equal(z.s, 0)
    _check_svd(np.zeros((3, 4)), z)


def test_svd_sign_convention(rng):
    f = svd(rng.standard_normal((6, 4)))
    idx = np.argmax(np.abs(f.u), axis=0)
    assert np.all(f.u[idx, np.arange(6)] >= 0)


def test_svd_tied_values_compared_by_projector():
    a = np.diag([2.0, 2.0, 1.0])
    f = svd(a)
    np.testing.assert_allclose(f.s, [2, 2, 1])
    proj = f.u[:, :2] @ f.u[:, :2].T
    np.testing.assert_allclose(proj, np.diag([1.0, 1.0, 0.0]), atol=1e-14)


def test_svd_iteration_cap_reports_shape():
    with pytest.raises(SVDConvergenceError, match=r"\(4, 3\).*1 sweeps"):
        svd(np.random.default_rng(0).standard_normal((4, 3)), max_sweeps=1)


def test_svd_rejects_nonfinite():
    with pytest.raises(ValueError):
        svd([[1.0, np.nan]])


def test_truncated_diagonal():
    t = truncated_svd(np.diag([3.0, 2.0]), 1)
    np.testing.assert_allclose(t.reconstruct(), np.diag([3.0, 0.0]), atol=1e-15)
    assert frobenius_norm(np.diag([3.0, 2.0]) - t.reconstruct()) == pytest.approx(2.0)


def test_truncated_full_rank_is_exact(rng):
    a = rng.standard_normal((5, 3))
    t = truncated_svd(a, 3)
    assert frobenius_norm(a - t.reconstruct()) <= 1e-8 * frobenius_norm(a)


def test_truncated_error_equals_third_singular_value(rng):
    a = rng.standard_normal((4, 3))
    sigma = svd(a).s
    err = frobenius_norm(a - truncated_svd(a, 2).reconstruct())
    assert err == pytest.approx(sigma[2], rel=1e-8)
    assert t_shapes(truncated_svd(a, 2)) == ((4, 2), (2,), (2, 3))


def t_shapes(t):
    return t.u.shape, t.s.shape, t.vt.shape


@pytest.mark.parametrize("k", [0, 4])
def test_truncated_rejects_bad_k(k):
    with pytest.raises(ValueError):
        truncated_svd(np.ones((3, 3)), k)


def penrose_residuals(a, p):
    return [
        frobenius_norm(a @ p @ a - a),
        frobenius_norm(p @ a @ p - p),
        frobenius_norm((a @ p).T - a @ p),
        frobenius_norm((p @ a).T - p @ a),
    ]


def test_pinv_examples():
    np.testing.assert_allclose(pseudo_inverse(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]), atol=1e-16)
    np.testing.assert_allclose(pseudo_inverse(np.eye(3)), np.eye(3), atol=1e-15)


def test_pinv_matches_normal_equations(rng):
    a = rng.standard_normal((3, 2))
    g = a.T @ a
    det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    g_inv = np.array([[g[1, 1], -g[0, 1]], [-g[1, 0], g[0, 0]]]) / det
    np.testing.assert_allclose(pseudo_inverse(a), g_inv @ a.T, atol=1e-12)


@pytest.mark.parametrize("shape,rank", [((4, 4), 4), ((3, 6), 3), ((6, 3), 3), ((5, 5), 2)])
def test_pinv_penrose(rng, shape, rank):
    a = rng.standard_normal((shape[0], rank)) @ rng.standard_normal((rank, shape[1]))
    tol = 1e-8 * max(1.0, frobenius_norm(a))
    assert max(penrose_residuals(a, pseudo_inverse(a))) <= tol


def test_eig_examples():
    np.testing.assert_allclose(eig_symmetric(np.eye(3)).values, [1, 1, 1])
    e = eig_symmetric([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(e.values, [3, 1], atol=1e-14)
    r = 1 / np.sqrt(2)
    np.testing.assert_allclose(np.abs(e.vectors), [[r, r], [r, r]], atol=1e-14)
    assert e.vectors[:, 1] @ np.array([1.0, -1.0]) != 0
    np.testing.assert_allclose(eig_symmetric(np.diag([5.0, -1.0])).values, [5, -1])


def test_eig_rejects_asymmetric():
    with pytest.raises(ValueError, match="not symmetric"):
        eig_symmetric([[1.0, 2.0], [0.0, 1.0]])


def test_eig_residuals(rng):
    b = rng.standard_normal((20, 20))
    a = b + b.T
    e = eig_symmetric(a)
    assert np.all(np.diff(e.values) <= 0)
    res = np.linalg.norm(a @ e.vectors - e.vectors * e.values, axis=0)
    assert np.all(res <= 1e-8 * frobenius_norm(a))
    assert frobenius_norm(e.vectors.T @ e.vectors - np.eye(20)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)),
              elements=st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)))
def test_svd_property(a):
    _check_svd(a, svd(a))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)),
              elements=st.floats(-100, 100, allow_nan=False, allow_infinity=False)))
def test_pinv_property(a):
    tol = 1e-8 * max(1.0, frobenius_norm(a))
    assert max(penrose_residuals(a, pseudo_inverse(a))) <= tol * max(1.0, frobenius_norm(pseudo_inverse(a)))
