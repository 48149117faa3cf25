import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lqer.errors import ArgumentError, ShapeError
from lqer.linalg import as_matrix, frobenius_norm, low_rank, matmul, svd, truncate


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for p in range(a.shape[1]):
                acc += a[i, p] * b[p, j]
            out[i, j] = acc
    return out


def assert_svd_invariants(m, res):
    rows, cols = m.shape
    assert res.u.shape == (rows, rows)
    assert res.v.shape == (cols, cols)
    assert res.sigma.shape == (min(rows, cols),)
    assert np.all(res.sigma >= 0)
    assert np.all(np.diff(res.sigma) <= 0)
    assert np.abs(res.u.T @ res.u - np.eye(rows)).max() <= 1e-10
    assert np.abs(res.v.T @ res.v - np.eye(cols)).max() <= 1e-10
    assert np.linalg.norm(res.reconstruct() - m) <= 1e-8 * max(1.0, np.linalg.norm(m))


def test_as_matrix_rejects_bad_input():
    with pytest.raises(ShapeError):
        as_matrix([1.0, 2.0])
    with pytest.raises(ShapeError):
        as_matrix(np.zeros((0, 3)))
    with pytest.raises(ArgumentError):
        as_matrix([[1.0, np.nan]])
    with pytest.raises(ArgumentError):
        as_matrix([[np.inf]])


def test_matmul_identity():
    m = np.array([[1.5, -2.0], [0.25, 3.0]])
    assert np.array_equal(matmul(np.eye(2), m), m)


def test_matmul_hand_example():
    assert matmul([[1, 2], [3, 4]], [[0], [1]]).tolist() == [[2.0], [4.0]]


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(7)
    a, b = rng.standard_normal((7, 5)), rng.standard_normal((5, 3))
    assert np.abs(matmul(a, b) - naive_matmul(a, b)).max() <= 1e-12


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_frobenius_examples():
    assert frobenius_norm(np.zeros((3, 2))) == 0.0
    assert frobenius_norm([[3.0, 4.0]]) == 5.0
    rng = np.random.default_rng(3)
    m = rng.standard_normal((6, 6))
    oracle = 0.0
    for v in m.ravel():
        oracle += v * v
    oracle = oracle**0.5
    assert abs(frobenius_norm(m) - oracle) / oracle <= 1e-14


def test_svd_identity_and_diagonal():
    assert np.allclose(svd(np.eye(2)).sigma, [1.0, 1.0], rtol=0, atol=1e-15)
    assert np.allclose(svd(np.diag([3.0, 1.0])).sigma, [3.0, 1.0], rtol=0, atol=1e-15)
    # unsorted diagonal comes back sorted
    assert np.allclose(svd(np.diag([1.0, 3.0])).sigma, [3.0, 1.0], rtol=0, atol=1e-15)


def test_svd_against_gram_eigen_oracle():
    rng = np.random.default_rng(11)
    m = rng.standard_normal((5, 4))
    eig = np.linalg.eigvalsh(m.T @ m)[::-1]
    oracle = np.sqrt(np.clip(eig, 0, None))
    assert np.max(np.abs(svd(m).sigma - oracle) / oracle) <= 1e-8


@pytest.mark.parametrize("shape", [(1, 1), (1, 5), (5, 1), (2, 2), (5, 4), (4, 5), (7, 7), (33, 20), (20, 33)])
def test_svd_invariants_across_shapes(shape):
    rng = np.random.default_rng(sum(shape))
    m = rng.uniform(-10, 10, shape)
    assert_svd_invariants(m, svd(m))


def test_svd_rank_deficient_and_zero():
    rng = np.random.default_rng(5)
    m = rng.standard_normal((9, 2)) @ rng.standard_normal((2, 6))
    res = svd(m)
    assert_svd_invariants(m, res)
    assert res.sigma[2] <= 1e-12 * res.sigma[0]
    z = np.zeros((4, 3))
    rz = svd(z)
    assert_svd_invariants(z, rz)
    assert np.all(rz.sigma == 0)


def test_svd_sign_convention():
    rng = np.random.default_rng(2)
    res = svd(rng.standard_normal((6, 4)))
    for j in range(res.u.shape[1]):
        col = res.u[:, j]
        assert col[np.argmax(np.abs(col))] > 0


def test_svd_is_deterministic():
    rng = np.random.default_rng(9)
    m = rng.standard_normal((16, 12))
    a, b = svd(m), svd(m.copy())
    assert a.sigma.tobytes() == b.sigma.tobytes()
    assert a.u.tobytes() == b.u.tobytes()


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.floats(-10, 10)))
def test_svd_invariants_property(m):
    assert_svd_invariants(m, svd(m))


def test_truncate_rank_one_exact():
    u = np.array([1.0, -2.0, 0.5])
    v = np.array([3.0, 1.0, 0.0, -1.0])
    m = np.outer(u, v)
    res = svd(m)
    assert np.linalg.norm(m - low_rank(res, 1)) <= 1e-10


def test_truncate_full_rank():
    rng = np.random.default_rng(4)
    m = rng.standard_normal((6, 5))
    assert np.linalg.norm(m - low_rank(svd(m), 5)) <= 1e-8 * np.linalg.norm(m)


def test_truncate_discarded_spectrum_identity():
    rng = np.random.default_rng(8)
    m = rng.standard_normal((8, 6))
    res = svd(m)
    u_k, s_k, v_k = truncate(res, 2)
    assert u_k.shape == (8, 2) and s_k.shape == (2,) and v_k.shape == (6, 2)
    resid2 = np.linalg.norm(m - (u_k * s_k) @ v_k.T) ** 2
    expected = np.sum(res.sigma[2:] ** 2)
    assert abs(resid2 - expected) / expected <= 1e-8


@pytest.mark.parametrize("k", [0, 5, -1, 1.5])
def test_truncate_rejects_bad_rank(k):
    res = svd(np.ones((4, 4)))
    with pytest.raises(ArgumentError):
        truncate(res, k)


def test_truncation_residual_non_increasing():
    rng = np.random.default_rng(12)
    for _ in range(5):
        m = rng.standard_normal((10, 8))
        res = svd(m)
        resid = [np.linalg.norm(m - low_rank(res, k)) for k in range(1, 9)]
        assert all(b <= a + 1e-12 for a, b in zip(resid, resid[1:]))
