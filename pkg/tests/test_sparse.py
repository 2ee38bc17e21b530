import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spdnn.sparse import (
    DimensionError,
    SparseMatrix,
    gradient_update,
    mse_grad,
    mse_loss,
    sigmoid,
    sigmoid_deriv,
    spmv,
    spmv_subset,
    spmv_transpose_contrib,
)

from conftest import random_sparse


def dense_matvec(A, x):
    out = np.zeros(A.shape[0])
    for i in range(A.shape[0]):
        for j in range(A.shape[1]):
            out[i] += A[i, j] * x[j]
    return out


def test_spmv_identity():
    W = SparseMatrix.from_dense(np.eye(2))
    assert np.array_equal(spmv(W, [3, 5]), [3, 5])


def test_spmv_single_entry():
    W = SparseMatrix.from_coo(2, 2, [1], [0], [2.0])
    assert np.array_equal(spmv(W, [7, 0]), [0, 14])


@pytest.mark.parametrize("seed", range(5))
def test_spmv_dense_oracle(seed):
    W = random_sparse(8, 8, 0.25, seed)
    x = np.random.default_rng(seed + 100).uniform(-1, 1, 8)
    ref = dense_matvec(W.to_dense(), x)
    np.testing.assert_allclose(spmv(W, x), ref, rtol=1e-12, atol=1e-15)


def test_spmv_rectangular_and_bad_length():
    W = random_sparse(3, 5, 0.5, 0)
    assert spmv(W, np.ones(5)).shape == (3,)
    with pytest.raises(DimensionError):
        spmv(W, np.ones(3))


def test_spmv_subset_partitions_the_product():
    W = random_sparse(6, 6, 0.5, 1, integer=True)
    x = np.arange(6.0)
    cut = W.nnz // 2
    a = spmv_subset(W, x, np.arange(cut))
    b = spmv_subset(W, x, np.arange(cut, W.nnz))
    np.testing.assert_array_equal(a + b, spmv(W, x))


def test_from_coo_rejects_duplicates_and_out_of_range():
    with pytest.raises(ValueError):
        SparseMatrix.from_coo(2, 2, [0, 0], [1, 1], [1.0, 2.0])
    with pytest.raises(ValueError):
        SparseMatrix.from_coo(2, 2, [2], [0], [1.0])
    with pytest.raises(ValueError):
        SparseMatrix.from_coo(2, 2, [0], [5], [1.0])


def test_validate_catches_unsorted_columns():
    W = SparseMatrix(1, 3, [0, 2], [2, 0], [1.0, 1.0])
    with pytest.raises(ValueError, match="strictly increase"):
        W.validate()


def test_select_rows_and_degrees():
    W = random_sparse(5, 4, 0.5, 2)
    B = W.select_rows([1, 3])
    np.testing.assert_array_equal(B.to_dense(), W.to_dense()[[1, 3]])
    assert W.row_degrees().sum() == W.col_degrees().sum() == W.nnz


def test_transpose_contrib_empty_block():
    B = SparseMatrix(0, 4, [0], [], [])
    c = spmv_transpose_contrib(B, np.zeros(0), np.zeros(0, dtype=int))
    assert len(c) == 0


def test_transpose_contrib_full_matrix():
    W = random_sparse(8, 8, 0.3, 4)
    d = np.random.default_rng(0).normal(size=8)
    c = spmv_transpose_contrib(W, d, np.arange(8))
    ref = W.to_dense().T @ d
    nonzero_cols = np.flatnonzero(W.col_degrees())
    np.testing.assert_array_equal(c.indices, nonzero_cols)
    np.testing.assert_allclose(c.values, ref[nonzero_cols], rtol=1e-12)
    np.testing.assert_allclose(c.to_dense(8), ref, rtol=1e-12, atol=1e-15)


def test_transpose_contrib_rejects_unsorted_rows():
    W = random_sparse(2, 3, 0.5, 0)
    with pytest.raises(ValueError):
        spmv_transpose_contrib(W, np.ones(2), [1, 0])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), parts=st.integers(1, 6))
def test_split_sum_is_exact(seed, parts):
    """Row blocks summed in ascending order reproduce the whole product.

    Integer-valued data keeps every partial sum exact, so equality is bitwise.
    """
    rng = np.random.default_rng(seed)
    W = random_sparse(12, 10, 0.3, seed, integer=True)
    d = rng.integers(-4, 5, 12).astype(float)
    owner = rng.integers(0, parts, 12)
    total = np.zeros(10)
    for m in range(parts):
        rows = np.flatnonzero(owner == m)
        c = spmv_transpose_contrib(W.select_rows(rows), d[rows], rows)
        total[c.indices] += c.values
    np.testing.assert_array_equal(total, W.to_dense().T @ d)


def test_split_sum_float_close():
    W = random_sparse(16, 16, 0.3, 9)
    d = np.random.default_rng(9).normal(size=16)
    total = np.zeros(16)
    for rows in np.array_split(np.arange(16), 4):
        c = spmv_transpose_contrib(W.select_rows(rows), d[rows], rows)
        total[c.indices] += c.values
    np.testing.assert_allclose(total, W.to_dense().T @ d, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize(
    "z, f, df",
    [(0.0, 0.5, 0.25), (np.log(3.0), 0.75, 0.1875)],
)
def test_sigmoid_values(z, f, df):
    assert sigmoid(z) == pytest.approx(f, abs=1e-15)
    assert sigmoid_deriv(z) == pytest.approx(df, abs=1e-15)


def test_sigmoid_saturates_without_overflow():
    assert abs(sigmoid(40.0) - 1.0) < 1e-12
    with np.errstate(over="raise"):
        out = sigmoid(np.array([-1000.0, 1000.0]))
    np.testing.assert_array_equal(out, [0.0, 1.0])


def test_mse_cases():
    assert mse_loss([1, 2], [1, 2]) == 0
    np.testing.assert_array_equal(mse_grad([1, 2], [1, 2]), [0, 0])
    assert mse_loss([1, 0], [0, 0]) == 0.5
    np.testing.assert_array_equal(mse_grad([1, 0], [0, 0]), [1, 0])
    with pytest.raises(DimensionError):
        mse_loss([1, 2], [1])


@pytest.mark.parametrize("seed", range(3))
def test_mse_grad_finite_difference(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(-1, 1, 6), rng.uniform(-1, 1, 6)
    h = 1e-6
    fd = np.array([
        (mse_loss(x + h * e, y) - mse_loss(x - h * e, y)) / (2 * h) for e in np.eye(6)
    ])
    np.testing.assert_allclose(mse_grad(x, y), fd, atol=1e-6)


def test_gradient_update_hand_value():
    W = SparseMatrix.from_coo(3, 3, [1], [2], [1.0])
    delta = np.array([0.0, 0.5, 0.0])
    x = np.array([0.0, 0.0, 2.0])
    gradient_update(W, delta, x, 0.1)
    assert W.to_dense()[1, 2] == pytest.approx(0.9, abs=1e-15)


@pytest.mark.parametrize("delta_scale, eta", [(0.0, 0.1), (1.0, 0.0)])
def test_gradient_update_noop(delta_scale, eta):
    W = random_sparse(5, 5, 0.4, 0)
    before = W.copy()
    gradient_update(W, delta_scale * np.ones(5), np.ones(5), eta)
    assert W == before


def test_gradient_update_keeps_pattern():
    W = random_sparse(6, 6, 0.3, 5)
    before = W.copy()
    rng = np.random.default_rng(1)
    gradient_update(W, rng.normal(size=6), rng.normal(size=6), 0.5)
    assert W.same_pattern(before)
    assert not np.array_equal(W.values, before.values)
