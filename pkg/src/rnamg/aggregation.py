"""Greedy aggregation and nodal/DOF (un)amalgamation of patterns and roots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .complexity import charge
from .sparse import SparseMatrix


@dataclass(frozen=True)
class Aggregation:
    """Partition of unity ``pattern`` (n x n_agg) plus one root per aggregate."""

    pattern: SparseMatrix
    roots: np.ndarray
    labels: np.ndarray
    unaggregated: np.ndarray

    @property
    def n_aggregates(self) -> int:
        return self.pattern.n_cols


def aggregation_from_labels(labels, roots) -> Aggregation:
    labels = np.asarray(labels, dtype=np.int64)
    roots = np.asarray(roots, dtype=np.int64)
    n = labels.shape[0]
    C = SparseMatrix.from_scipy(sp.csr_matrix((np.ones(n), labels, np.arange(n + 1)),
                                              shape=(n, roots.shape[0])))
    return Aggregation(C, roots, labels, np.empty(0, dtype=np.int64))


def greedy_aggregate(S: SparseMatrix) -> Aggregation:
    """Two-pass greedy aggregation on a normalized strength matrix.

    Pass 1 visits nodes in ascending order; a node whose strong neighbours are
    all still free becomes a root and takes them with it.  Pass 2 attaches
    every remaining node to the pass-1 aggregate behind its strongest edge
    (lowest aggregate index on ties).  Nodes that still have no aggregate
    become singletons rooted at themselves.
    """
    if S.n_rows != S.n_cols:
        raise ValueError("aggregation needs a square strength matrix")
    charge(2 * S.nnz)
    labels, roots = _kernels.greedy_aggregate(S.row_offsets, S.col_indices, S.values)
    return aggregation_from_labels(labels, roots)


def unamalgamate(N: SparseMatrix, roots, m: int):
    """Expand a nodal pattern and nodal roots to degrees of freedom.

    Entry ``(i, j)`` of the result equals nodal entry ``(i // m, j // m)``;
    root ``r`` becomes DOFs ``m*r, ..., m*r + m - 1``.
    """
    m = int(m)
    roots = np.asarray(roots, dtype=np.int64)
    if m == 1:
        return N, roots
    block = sp.csr_matrix(np.ones((m, m)))
    M = sp.kron(N.csr, block, format="csr")
    charge(M.nnz)
    dof_roots = (m * roots[:, None] + np.arange(m)[None, :]).ravel()
    return SparseMatrix.from_scipy(M, m), dof_roots
