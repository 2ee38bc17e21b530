"""Compressed-row sparse kernels and the elementwise network math.

Every reduction here runs through ``np.bincount`` over arrays in stored
(row-major) order, so per-output sums are accumulated left to right and
results are reproducible bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Operand shapes do not line up."""


@dataclass
class SparseMatrix:
    """CSR matrix with 0-based indices and float64 values.

    Column indices are strictly increasing within each row.  ``values`` is
    the only field mutated after construction (by :func:`gradient_update`).
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.row_offsets = np.asarray(self.row_offsets, dtype=np.int64)
        self.col_indices = np.asarray(self.col_indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self._row_ids = None

    @property
    def nnz(self) -> int:
        return int(self.col_indices.size)

    @property
    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry (cached expansion of row_offsets)."""
        if self._row_ids is None:
            self._row_ids = np.repeat(
                np.arange(self.n_rows, dtype=np.int64), np.diff(self.row_offsets)
            )
        return self._row_ids

    def validate(self) -> None:
        ro, ci = self.row_offsets, self.col_indices
        if ro.shape != (self.n_rows + 1,):
            raise ValueError("row_offsets must have n_rows + 1 entries")
        if ro[0] != 0 or ro[-1] != ci.size or np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must be nondecreasing from 0 to nnz")
        if self.values.shape != ci.shape:
            raise ValueError("values and col_indices differ in length")
        if ci.size and (ci.min() < 0 or ci.max() >= self.n_cols):
            raise ValueError("column index out of range")
        if ci.size > 1:
            step = np.diff(ci)
            # a decrease is only allowed where a new row starts
            starts = np.zeros(ci.size - 1, dtype=bool)
            inner = ro[1:-1]
            starts[inner[(inner > 0) & (inner < ci.size)] - 1] = True
            if np.any((step <= 0) & ~starts):
                raise ValueError("column indices must strictly increase within a row")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")

    @classmethod
    def from_coo(cls, n_rows, n_cols, rows, cols, values) -> "SparseMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows):
            raise ValueError("row index out of range")
        if rows.size > 1 and np.any((np.diff(rows) == 0) & (np.diff(cols) == 0)):
            raise ValueError("duplicate coordinates")
        offsets = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_rows), out=offsets[1:])
        m = cls(n_rows, n_cols, offsets, cols, values)
        m.validate()
        return m

    @classmethod
    def from_dense(cls, dense) -> "SparseMatrix":
        dense = np.asarray(dense, dtype=np.float64)
        rows, cols = np.nonzero(dense)
        return cls.from_coo(dense.shape[0], dense.shape[1], rows, cols, dense[rows, cols])

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols))
        out[self.row_ids, self.col_indices] = self.values
        return out

    def row_degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def col_degrees(self) -> np.ndarray:
        return np.bincount(self.col_indices, minlength=self.n_cols)

    def positions_of_rows(self, rows) -> np.ndarray:
        """Indices into the stored arrays covering ``rows``, in the given order."""
        rows = np.asarray(rows, dtype=np.int64)
        if rows.size > 1 and np.any(np.diff(rows) <= 0):
            return np.concatenate(
                [np.arange(self.row_offsets[r], self.row_offsets[r + 1]) for r in rows]
            ).astype(np.int64)
        mask = np.zeros(self.n_rows, dtype=bool)
        mask[rows] = True
        return np.flatnonzero(mask[self.row_ids])

    def select_rows(self, rows) -> "SparseMatrix":
        """Row block holding ``rows`` (in the given order), all columns kept."""
        rows = np.asarray(rows, dtype=np.int64)
        lengths = self.row_offsets[rows + 1] - self.row_offsets[rows]
        offsets = np.zeros(rows.size + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        take = self.positions_of_rows(rows)
        return SparseMatrix(
            rows.size, self.n_cols, offsets, self.col_indices[take], self.values[take].copy()
        )

    def copy(self) -> "SparseMatrix":
        return SparseMatrix(
            self.n_rows,
            self.n_cols,
            self.row_offsets.copy(),
            self.col_indices.copy(),
            self.values.copy(),
        )

    def same_pattern(self, other: "SparseMatrix") -> bool:
        return (
            self.n_rows == other.n_rows
            and self.n_cols == other.n_cols
            and np.array_equal(self.row_offsets, other.row_offsets)
            and np.array_equal(self.col_indices, other.col_indices)
        )

    def __eq__(self, other):
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return self.same_pattern(other) and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class SparseContribution:
    """Sorted (index, value) pairs of a partial transpose product."""

    indices: np.ndarray
    values: np.ndarray

    def __len__(self):
        return int(self.indices.size)

    def to_dense(self, length: int) -> np.ndarray:
        out = np.zeros(length)
        out[self.indices] = self.values
        return out


def _as_vector(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def spmv(W: SparseMatrix, x) -> np.ndarray:
    """Return ``W @ x`` as a dense vector of length ``W.n_rows``."""
    x = _as_vector(x)
    if x.shape != (W.n_cols,):
        raise DimensionError(f"x has length {x.size}, matrix has {W.n_cols} columns")
    return np.bincount(W.row_ids, weights=W.values * x[W.col_indices], minlength=W.n_rows)


def spmv_subset(W: SparseMatrix, x, positions) -> np.ndarray:
    """``W @ x`` using only the stored entries at ``positions`` (ascending)."""
    x = _as_vector(x)
    if x.shape != (W.n_cols,):
        raise DimensionError(f"x has length {x.size}, matrix has {W.n_cols} columns")
    return np.bincount(
        W.row_ids[positions],
        weights=W.values[positions] * x[W.col_indices[positions]],
        minlength=W.n_rows,
    )


def spmv_transpose_contrib(W_block: SparseMatrix, delta_local, local_rows) -> SparseContribution:
    """Partial product ``W_block.T @ delta_local`` restricted to touched columns.

    ``local_rows`` names the global rows the block's rows stand for; it is
    only checked for consistency since contributions are keyed by column.
    """
    delta_local = _as_vector(delta_local)
    local_rows = np.asarray(local_rows, dtype=np.int64)
    if delta_local.shape != (W_block.n_rows,) or local_rows.shape != (W_block.n_rows,):
        raise DimensionError("delta and local_rows must match the block's row count")
    if local_rows.size > 1 and np.any(np.diff(local_rows) <= 0):
        raise ValueError("local_rows must be strictly increasing")
    dense = np.bincount(
        W_block.col_indices,
        weights=W_block.values * delta_local[W_block.row_ids],
        minlength=W_block.n_cols,
    )
    touched = np.flatnonzero(np.bincount(W_block.col_indices, minlength=W_block.n_cols))
    return SparseContribution(touched, dense[touched])


def sigmoid(z) -> np.ndarray:
    z = _as_vector(z)
    # exp of a non-positive argument never overflows
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_deriv(z) -> np.ndarray:
    f = sigmoid(z)
    return f * (1.0 - f)


def mse_loss(x_L, y) -> float:
    x_L, y = _as_vector(x_L), _as_vector(y)
    if x_L.shape != y.shape:
        raise DimensionError("output and label lengths differ")
    d = x_L - y
    return float(np.dot(d, d) / d.size)


def mse_grad(x_L, y, n: int | None = None) -> np.ndarray:
    """Gradient of :func:`mse_loss`; ``n`` overrides the averaging length
    when only a slice of the output is at hand."""
    x_L, y = _as_vector(x_L), _as_vector(y)
    if x_L.shape != y.shape:
        raise DimensionError("output and label lengths differ")
    n = x_L.size if n is None else n
    return (2.0 / n) * (x_L - y)


def gradient_update(W: SparseMatrix, delta, x_prev, eta: float) -> None:
    """In place ``W -= eta * outer(delta, x_prev)`` on the stored pattern only."""
    delta, x_prev = _as_vector(delta), _as_vector(x_prev)
    if delta.shape != (W.n_rows,) or x_prev.shape != (W.n_cols,):
        raise DimensionError("delta/x_prev do not match the matrix shape")
    W.values -= eta * (delta[W.row_ids] * x_prev[W.col_indices])
