"""Strength-of-connection matrices.

All measures return raw, non-negative magnitudes with the diagonal stored;
:func:`normalize_strength` rescales rows so that the diagonal and the
largest off-diagonal both equal one before the matrix is used for
aggregation or pattern growth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .complexity import charge
from .relaxation import spectral_radius
from .sparse import SparseMatrix, matmul

MEASURES = ("classical", "symmetric", "evolution")


@dataclass(frozen=True)
class StrengthConfig:
    """Strength measure selection.

    ``drop_tol`` is the theta of the classical and symmetric measures and the
    magnitude ratio of the evolution measure (connections weaker than
    ``1/drop_tol`` of the row's strongest are dropped).
    """

    measure: str = "evolution"
    drop_tol: float = 4.0
    evolution_steps: int = 2
    evolution_weighting: str = "spectral"
    evolution_weight: float = 1.0

    def __post_init__(self):
        if self.measure not in MEASURES:
            raise ValueError(f"unknown strength measure {self.measure!r}")
        if self.drop_tol < 0:
            raise ValueError("drop_tol must be non-negative")
        if self.evolution_steps < 1:
            raise ValueError("evolution_steps must be >= 1")
        if self.evolution_weighting not in ("spectral", "l1jacobi"):
            raise ValueError(f"unknown evolution weighting {self.evolution_weighting!r}")


def _assemble(n, rows, cols, vals, diag_vals):
    r = np.concatenate([rows, np.arange(n)])
    c = np.concatenate([cols, np.arange(n)])
    v = np.concatenate([vals, diag_vals])
    return SparseMatrix.from_scipy(sp.coo_matrix((v, (r, c)), shape=(n, n)))


def _square(A):
    if A.n_rows != A.n_cols:
        raise ValueError("strength of connection needs a square matrix")


def _row_max(n, rows, vals, fill=0.0):
    out = np.full(n, fill)
    np.maximum.at(out, rows, vals)
    return out


def classical_strength(A: SparseMatrix, theta: float) -> SparseMatrix:
    """Ruge-Stueben measure on negative couplings.

    ``j`` is strong for ``i`` iff ``-A_ij >= theta * max_k(-A_ik)`` with the
    maximum taken over off-diagonals; positive couplings are never strong.
    """
    _square(A)
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    n = A.n_rows
    rows, cols, vals = A.row_indices(), A.col_indices, A.values
    off = rows != cols
    neg = np.where(off, -vals, 0.0)
    rmax = _row_max(n, rows[off], neg[off])
    strong = off & (neg > 0) & (neg >= theta * rmax[rows])
    charge(2 * A.nnz)
    diag = np.abs(A.diagonal())
    diag[diag == 0] = 1.0
    return _assemble(n, rows[strong], cols[strong], neg[strong], diag)


def symmetric_strength(A: SparseMatrix, theta: float) -> SparseMatrix:
    """Scaled magnitude ``|A_ij| / sqrt(A_ii A_jj) >= theta``."""
    _square(A)
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    d = A.diagonal()
    if np.any(d <= 0):
        raise ValueError(f"non-positive diagonal at row {int(np.flatnonzero(d <= 0)[0])}")
    rows, cols = A.row_indices(), A.col_indices
    s = np.abs(A.values) / np.sqrt(d[rows] * d[cols])
    keep = (rows != cols) & (s >= theta)
    charge(2 * A.nnz)
    return _assemble(A.n_rows, rows[keep], cols[keep], s[keep], np.ones(A.n_rows))


def evolution_strength(A: SparseMatrix, cfg: StrengthConfig) -> SparseMatrix:
    """Strength from locally evolved unit vectors.

    The unit vector at ``i`` is relaxed ``cfg.evolution_steps`` times with
    ``G = I - w W^-1 A``, where ``W = rho(D^-1 A) D`` (spectral weighting)
    or the l1 row sums of ``A`` (l1jacobi weighting).  For ``j`` in the
    stencil of row ``i`` let ``v_j = z_j * sign(z_i)``; only components that
    kept the sign of the centre (smooth, constant-like coupling) count, and
    ``j`` is strong iff ``v_j >= max_k v_k / cfg.drop_tol``.  The stored
    value is ``v_j``.
    """
    _square(A)
    n = A.n_rows
    d = A.diagonal()
    if np.any(d == 0):
        raise ValueError(f"zero diagonal at row {int(np.flatnonzero(d == 0)[0])}")
    if cfg.evolution_weighting == "spectral":
        winv = 1.0 / (spectral_radius(A) * d)
    else:
        winv = 1.0 / np.asarray(abs(A.csr).sum(axis=1)).ravel()
        charge(A.nnz)
    winv = cfg.evolution_weight * winv
    charge(A.nnz)
    # z_i = G^k e_i is column i of G^k, i.e. row i of (G^T)^k
    Gt = SparseMatrix.from_scipy(sp.identity(n, format="csr") - A.csr.T.multiply(winv[None, :]))
    Z = Gt
    for _ in range(cfg.evolution_steps - 1):
        Z = matmul(Z, Gt)
    centre = np.sign(Z.diagonal())
    centre[centre == 0] = 1.0
    # both stencil directions, so one-sided (upwind) couplings are still seen
    mask = A.pattern().csr
    mask = mask + mask.T
    Zs = Z.csr.multiply(mask).tocsr()
    Zs.sort_indices()
    charge(Z.nnz)
    rows = np.repeat(np.arange(n), np.diff(Zs.indptr))
    cols = Zs.indices
    vals = Zs.data * centre[rows]
    off = (rows != cols) & (vals > 0)
    rmax = _row_max(n, rows[off], vals[off])
    tol = cfg.drop_tol
    thresh = rmax / tol if tol > 0 else np.full(n, np.inf)
    strong = off & (vals >= thresh[rows])
    return _assemble(n, rows[strong], cols[strong], vals[strong], np.ones(n))


def strength_of_connection(A: SparseMatrix, cfg: StrengthConfig) -> SparseMatrix:
    if cfg.measure == "classical":
        return classical_strength(A, cfg.drop_tol)
    if cfg.measure == "symmetric":
        return symmetric_strength(A, cfg.drop_tol)
    return evolution_strength(A, cfg)


def normalize_strength(S: SparseMatrix) -> SparseMatrix:
    """Scale rows so the diagonal and the largest off-diagonal are both 1."""
    if np.any(S.values < 0):
        raise ValueError("strength values must be non-negative")
    n = S.n_rows
    rows, cols, vals = S.row_indices(), S.col_indices, S.values
    off = rows != cols
    rmax = _row_max(n, rows[off], vals[off])
    # divide rather than scale by the reciprocal so the row max is exactly 1
    denom = np.where(rmax > 0, rmax, 1.0)
    charge(S.nnz)
    out = _assemble(n, rows[off], cols[off], vals[off] / denom[rows[off]], np.ones(n))
    return out.with_block_size(S.block_size)


def amalgamate(S: SparseMatrix, m: int) -> SparseMatrix:
    """Collapse m x m blocks to single entries holding the block's max |S|."""
    m = int(m)
    if m == 1:
        return S
    if S.n_rows % m or S.n_cols % m:
        raise ValueError(f"size {S.shape} not divisible by block size {m}")
    nr, nc = S.n_rows // m, S.n_cols // m
    I = S.row_indices() // m
    J = S.col_indices // m
    key = I * nc + J
    order = np.argsort(key, kind="stable")
    key = key[order]
    vals = np.abs(S.values)[order]
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    charge(S.nnz)
    if key.size == 0:
        return SparseMatrix.from_scipy(sp.csr_matrix((nr, nc)))
    bmax = np.maximum.reduceat(vals, starts)
    uk = key[starts]
    return SparseMatrix.from_triplets(uk // nc, uk % nc, bmax, (nr, nc))
