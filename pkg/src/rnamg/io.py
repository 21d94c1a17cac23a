"""Matrix Market and plain-text vector I/O."""

from __future__ import annotations

import numpy as np
import scipy.io as sio
import scipy.sparse as sp

from .sparse import SparseMatrix


def read_matrix(path, block_size=1) -> SparseMatrix:
    M = sio.mmread(path)
    if not sp.issparse(M):
        M = sp.csr_matrix(M)
    return SparseMatrix.from_scipy(M, block_size)


def write_matrix(path, A: SparseMatrix, symmetric=False) -> None:
    """Coordinate format; ``symmetric=True`` stores the lower triangle only."""
    # through a handle: mmwrite appends ".mtx" to bare paths without one
    with open(path, "wb") as fh:
        sio.mmwrite(fh, A.csr.tocoo(), symmetry="symmetric" if symmetric else "general",
                    precision=17)


def read_vector(path) -> np.ndarray:
    with open(path) as fh:
        head = fh.readline()
    if head.startswith("%%MatrixMarket"):
        return np.asarray(sio.mmread(path)).ravel()
    return np.loadtxt(path, dtype=float, ndmin=1)


def write_vector(path, x, matrix_market=False) -> None:
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    if matrix_market:
        with open(path, "wb") as fh:
            sio.mmwrite(fh, x, precision=17)
    else:
        np.savetxt(path, x.ravel(), fmt="%.17g")
