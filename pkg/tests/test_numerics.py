import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from grae.numerics import (
    NumericsError,
    jacobi_eigen,
    least_squares,
    pairwise_distances,
    pairwise_sq_distances,
    symmetric_eigen,
    symmetric_eigenvalues,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def brute_sq(a):
    n = a.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = sum((a[i, k] - a[j, k]) ** 2 for k in range(a.shape[1]))
    return out


def test_sq_distances_345_triangle():
    np.testing.assert_array_equal(pairwise_sq_distances([[0, 0], [3, 4]]), [[0, 25], [25, 0]])


def test_sq_distances_single_row():
    np.testing.assert_array_equal(pairwise_sq_distances([[1, 2, 3]]), [[0.0]])


def test_sq_distances_match_double_loop(rng):
    a = rng.normal(size=(5, 3))
    np.testing.assert_allclose(pairwise_sq_distances(a), brute_sq(a), rtol=0, atol=1e-12)


def test_sq_distances_wide_input_matches_double_loop(rng):
    # more columns than the direct-difference cutoff, exercising the Gram path
    a = rng.normal(size=(12, 40))
    a[3] = a[7] + 1e-9
    d = pairwise_sq_distances(a)
    np.testing.assert_allclose(d, brute_sq(a), rtol=1e-10, atol=1e-12)
    assert d[3, 7] > 0


def test_sq_distances_empty_raises():
    with pytest.raises(NumericsError, match="empty matrix"):
        pairwise_sq_distances(np.zeros((0, 3)))


@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 12)), elements=finite))
def test_sq_distances_symmetric_zero_diagonal(a):
    d = pairwise_sq_distances(a)
    np.testing.assert_array_equal(d, d.T)
    np.testing.assert_array_equal(np.diag(d), 0.0)
    assert np.all(d >= 0)


def test_distances_are_roots(rng):
    a = rng.normal(size=(6, 2))
    np.testing.assert_allclose(pairwise_distances(a) ** 2, pairwise_sq_distances(a), atol=1e-12)


def test_eigen_identity():
    w, v = symmetric_eigen(np.eye(3))
    np.testing.assert_allclose(w, [1, 1, 1])
    np.testing.assert_allclose(v.T @ v, np.eye(3), atol=1e-12)


def test_eigen_diagonal_sorted_with_axis_vectors():
    w, v = symmetric_eigen(np.diag([2.0, 5.0, -1.0]))
    np.testing.assert_allclose(w, [5, 2, -1])
    np.testing.assert_allclose(np.abs(v), [[0, 1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-12)


@pytest.mark.parametrize("method", ["lapack", "jacobi"])
def test_eigen_reconstruction_random_8x8(rng, method):
    m = rng.normal(size=(8, 8))
    s = m + m.T
    w, v = symmetric_eigen(s, method=method)
    np.testing.assert_allclose(v @ np.diag(w) @ v.T, s, atol=1e-8)
    np.testing.assert_allclose(v.T @ v, np.eye(8), atol=1e-8)
    assert np.all(np.diff(w) <= 0)
    res = np.linalg.norm(s @ v - v * w, axis=0)
    assert res.max() <= 1e-8 * np.linalg.norm(s)


def test_jacobi_agrees_with_lapack(rng):
    m = rng.normal(size=(10, 10))
    s = m @ m.T
    w_j, _ = jacobi_eigen(s)
    np.testing.assert_allclose(np.sort(w_j)[::-1], symmetric_eigenvalues(s), rtol=1e-10, atol=1e-10)


@given(arrays(np.float64, st.tuples(st.integers(1, 7), st.integers(1, 7)), elements=st.floats(-10, 10)))
def test_eigen_trace_and_orthonormality(m):
    if m.shape[0] != m.shape[1]:
        m = m[: min(m.shape), : min(m.shape)]
    s = m + m.T
    w, v = symmetric_eigen(s)
    tr = np.trace(s)
    assert abs(w.sum() - tr) <= 1e-8 * max(abs(tr), 1.0) + 1e-10
    np.testing.assert_allclose(v.T @ v, np.eye(s.shape[0]), atol=1e-8)


def test_eigen_rejects_nonsquare_and_asymmetric():
    with pytest.raises(NumericsError):
        symmetric_eigen(np.zeros((2, 3)))
    with pytest.raises(NumericsError, match="not symmetric"):
        symmetric_eigen([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(NumericsError):
        symmetric_eigen(np.eye(2), method="bogus")


def test_eigen_tolerates_tiny_asymmetry():
    s = np.array([[2.0, 1.0], [1.0 + 1e-12, 3.0]])
    w, _ = symmetric_eigen(s)
    assert w[0] > w[1]


def test_least_squares_identity_design():
    y = np.array([3.0, -1.0, 2.0])
    np.testing.assert_allclose(least_squares(np.eye(3), y), y, atol=1e-8)


def test_least_squares_exact_line():
    x = np.linspace(-2, 5, 20)
    design = np.column_stack([np.ones_like(x), x])
    np.testing.assert_allclose(least_squares(design, 2 * x + 1), [1.0, 2.0], atol=1e-10)


def test_least_squares_residual_orthogonal(rng):
    a = rng.normal(size=(50, 3))
    y = rng.normal(size=50)
    beta = least_squares(a, y)
    np.testing.assert_allclose(a.T @ (y - a @ beta), 0.0, atol=1e-8)


def test_least_squares_matrix_targets(rng):
    a = rng.normal(size=(30, 4))
    y = rng.normal(size=(30, 2))
    beta = least_squares(a, y)
    assert beta.shape == (4, 2)
    np.testing.assert_allclose(beta, np.linalg.lstsq(a, y, rcond=None)[0], atol=1e-8)


@given(
    arrays(np.float64, st.tuples(st.integers(3, 12), st.integers(1, 3)), elements=st.floats(-5, 5)),
    st.integers(0, 2**31),
)
def test_least_squares_never_worse_than_zero(a, seed):
    y = np.random.default_rng(seed).normal(size=a.shape[0])
    try:
        beta = least_squares(a, y)
    except NumericsError:
        return
    assert np.sum((a @ beta - y) ** 2) <= np.sum(y**2) + 1e-12


def test_least_squares_singular_design():
    with pytest.raises(NumericsError, match="singular design"):
        least_squares(np.zeros((4, 2)), np.ones(4))


def test_least_squares_shape_errors():
    with pytest.raises(NumericsError):
        least_squares(np.ones((2, 3)), np.ones(2))
    with pytest.raises(NumericsError):
        least_squares(np.ones((4, 2)), np.ones(3))
