"""Canonical CSR matrix type and the sparse kernels used by every level of setup.

Storage is plain CSR (sorted column indices, no duplicates, no explicit
zeros).  Block systems keep scalar CSR and carry ``block_size`` as metadata.
Arithmetic is delegated to ``scipy.sparse``; every kernel reports its
multiply count to the active :class:`~rnamg.complexity.WorkLedger`.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .complexity import charge

__all__ = [
    "SparseMatrix",
    "spmv",
    "transpose",
    "matmul",
    "galerkin_product",
    "filter_matrix",
]


def _canonical(M) -> sp.csr_matrix:
    M = sp.csr_matrix(M, dtype=np.float64, copy=True)
    M.sum_duplicates()
    M.eliminate_zeros()
    M.sort_indices()
    return M


class SparseMatrix:
    """Immutable compressed sparse-row matrix.

    Parameters
    ----------
    n_rows, n_cols : int
        Matrix dimensions.
    row_offsets, col_indices, values : array_like
        CSR arrays.  They are normalized on construction: duplicates summed,
        explicit zeros dropped, columns sorted within each row.
    block_size : int
        Number of unknowns per node (1 for scalar problems).
    """

    __slots__ = ("n_rows", "n_cols", "row_offsets", "col_indices", "values",
                 "block_size", "_csr")

    def __init__(self, n_rows, n_cols, row_offsets, col_indices, values, block_size=1):
        M = sp.csr_matrix((np.asarray(values, dtype=np.float64),
                           np.asarray(col_indices), np.asarray(row_offsets)),
                          shape=(int(n_rows), int(n_cols)))
        self._set(_canonical(M), block_size)

    def _set(self, M: sp.csr_matrix, block_size: int):
        block_size = int(block_size)
        if block_size < 1:
            raise ValueError("block_size must be a positive integer")
        if block_size > 1 and (M.shape[0] % block_size or M.shape[1] % block_size):
            raise ValueError(f"shape {M.shape} not divisible by block_size {block_size}")
        M.indptr = M.indptr.astype(np.int64, copy=False)
        M.indices = M.indices.astype(np.int64, copy=False)
        for arr in (M.indptr, M.indices, M.data):
            arr.flags.writeable = False
        self.n_rows, self.n_cols = M.shape
        self.row_offsets = M.indptr
        self.col_indices = M.indices
        self.values = M.data
        self.block_size = block_size
        self._csr = M

    # -- constructors -----------------------------------------------------
    @classmethod
    def from_scipy(cls, M, block_size=1) -> "SparseMatrix":
        obj = cls.__new__(cls)
        obj._set(_canonical(M), block_size)
        return obj

    @classmethod
    def _trusted(cls, M: sp.csr_matrix, block_size=1) -> "SparseMatrix":
        # caller guarantees canonical form and ownership of the arrays
        obj = cls.__new__(cls)
        obj._set(M, block_size)
        return obj

    @classmethod
    def from_dense(cls, D, block_size=1) -> "SparseMatrix":
        return cls.from_scipy(sp.csr_matrix(np.atleast_2d(np.asarray(D, dtype=float))), block_size)

    @classmethod
    def from_triplets(cls, rows, cols, vals, shape, block_size=1) -> "SparseMatrix":
        return cls.from_scipy(sp.coo_matrix((vals, (rows, cols)), shape=shape), block_size)

    @classmethod
    def identity(cls, n, block_size=1) -> "SparseMatrix":
        return cls._trusted(sp.identity(n, format="csr", dtype=np.float64), block_size)

    # -- views ------------------------------------------------------------
    @property
    def csr(self) -> sp.csr_matrix:
        """Read-only scipy view sharing this matrix' arrays."""
        return self._csr

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    @property
    def T(self) -> "SparseMatrix":
        return transpose(self)

    def toarray(self) -> np.ndarray:
        return self._csr.toarray()

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def row_lengths(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def row_indices(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_rows), self.row_lengths())

    def pattern(self) -> "SparseMatrix":
        """Same structure with all stored values set to one."""
        M = sp.csr_matrix((np.ones(self.nnz), self.col_indices.copy(),
                           self.row_offsets.copy()), shape=self.shape)
        return SparseMatrix._trusted(M, self.block_size)

    def with_values(self, values) -> "SparseMatrix":
        M = sp.csr_matrix((np.asarray(values, dtype=float), self.col_indices.copy(),
                           self.row_offsets.copy()), shape=self.shape)
        return SparseMatrix.from_scipy(M, self.block_size)

    def with_block_size(self, m) -> "SparseMatrix":
        return SparseMatrix._trusted(self._csr, m)

    def equals(self, other: "SparseMatrix") -> bool:
        """Bitwise equality of shape, structure and values."""
        return (self.shape == other.shape
                and np.array_equal(self.row_offsets, other.row_offsets)
                and np.array_equal(self.col_indices, other.col_indices)
                and np.array_equal(self.values, other.values))

    def is_symmetric(self, rtol=1e-12) -> bool:
        if self.n_rows != self.n_cols:
            return False
        if self.nnz == 0:
            return True
        diff = abs(self._csr - self._csr.T)
        return diff.nnz == 0 or diff.max() <= rtol * np.abs(self.values).max()

    def __repr__(self):
        return (f"SparseMatrix({self.n_rows}x{self.n_cols}, nnz={self.nnz}, "
                f"block_size={self.block_size})")


def _check_mul(a_cols, b_rows):
    if a_cols != b_rows:
        raise ValueError(f"dimension mismatch: {a_cols} columns vs {b_rows} rows")


def spmv(A: SparseMatrix, x) -> np.ndarray:
    """``y = A x``; charges ``|A|`` operations."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != A.n_cols:
        raise ValueError(f"dimension mismatch: len(x)={x.shape[0]}, A has {A.n_cols} columns")
    charge(A.nnz * (1 if x.ndim == 1 else x.shape[1]))
    return A.csr @ x


def transpose(A: SparseMatrix) -> SparseMatrix:
    return SparseMatrix._trusted(A.csr.T.tocsr().sorted_indices(), A.block_size)


def matmul_ops(A: SparseMatrix, B: SparseMatrix) -> int:
    """Multiply count of ``A @ B``: sum over stored A_ik of nnz(row k of B)."""
    return int(B.row_lengths()[A.col_indices].sum())


def matmul(A: SparseMatrix, B: SparseMatrix) -> SparseMatrix:
    """Exact sparse product with explicit zeros dropped."""
    _check_mul(A.n_cols, B.n_rows)
    charge(matmul_ops(A, B))
    M = A.csr @ B.csr
    M.sum_duplicates()
    M.eliminate_zeros()
    M.sort_indices()
    blk = A.block_size if A.block_size == B.block_size else 1
    if M.shape[0] % blk or M.shape[1] % blk:
        blk = 1
    return SparseMatrix._trusted(M.tocsr(), blk)


def galerkin_product(R: SparseMatrix, A: SparseMatrix, P: SparseMatrix) -> SparseMatrix:
    """Coarse operator ``R A P`` formed as ``(R A) P``."""
    _check_mul(R.n_cols, A.n_rows)
    _check_mul(A.n_cols, P.n_rows)
    Ac = matmul(matmul(R, A), P)
    return Ac.with_block_size(P.block_size if Ac.n_rows % P.block_size == 0 else 1)


def filter_matrix(G: SparseMatrix, theta=None, k=None, protect=None, min_keep=0,
                  retain=None) -> SparseMatrix:
    """Drop small entries row by row.

    With ``k``, entries smaller in magnitude than the k-th largest candidate
    of their row are dropped; with ``theta``, entries below ``theta`` times
    the row's largest candidate are dropped.  Comparisons are strict, so ties
    with the threshold survive.  When both are given ``k`` is applied first.

    Parameters
    ----------
    protect : bool array aligned with ``G.values``, optional
        Entries that are never dropped and do not take part in the ranking.
        Defaults to the diagonal for square matrices and nothing otherwise.
    min_keep : int
        Always keep at least this many of the largest candidates per row.
    retain : bool array aligned with ``G.values``, optional
        Entries that take part in the ranking but are never dropped.
    """
    if theta is not None and not (0.0 <= theta <= 1.0):
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    if k is not None and int(k) < 1:
        raise ValueError("k must be a positive integer")
    if protect is None:
        if G.n_rows == G.n_cols:
            protect = G.row_indices() == G.col_indices
        else:
            protect = np.zeros(G.nnz, dtype=bool)
    protect = np.asarray(protect, dtype=bool)
    charge(G.nnz)
    keep = _kernels.filter_rows(G.row_offsets, np.abs(G.values), protect,
                                -1.0 if theta is None else float(theta),
                                0 if k is None else int(k), int(min_keep))
    if retain is not None:
        keep |= np.asarray(retain, dtype=bool)
    if keep.all():
        return G
    rows = G.row_indices()[keep]
    M = sp.csr_matrix((G.values[keep], G.col_indices[keep],
                       np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=G.n_rows))])),
                      shape=G.shape)
    return SparseMatrix._trusted(M, G.block_size)
