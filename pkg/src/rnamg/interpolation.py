"""Root-node interpolation: pattern growth, tentative injection, constraint
projection and energy-minimizing smoothing of the interpolation operator.

All iterative work is done on value arrays aligned with a fixed sparsity
pattern ``N`` so that entries which pass through zero are not lost; a
:class:`~rnamg.sparse.SparseMatrix` is only formed at the end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .complexity import charge
from .relaxation import RelaxConfig, Smoother
from .sparse import SparseMatrix, filter_matrix, matmul, matmul_ops, transpose

KRYLOV = ("cg", "gmres")

# relative eigenvalue cut-off for the per-row Gram systems
GRAM_TOL = 1e-12


class CandidateSet:
    """Dense block of near-null-space vectors, one candidate per column."""

    __slots__ = ("vectors",)

    def __init__(self, vectors):
        V = np.array(vectors, dtype=float, copy=True)
        if V.ndim == 1:
            V = V[:, None]
        if V.ndim != 2 or V.shape[1] < 1:
            raise ValueError("candidates must be a non-empty n x k block")
        zero = np.flatnonzero(~np.any(V != 0, axis=0))
        if zero.size:
            raise ValueError(f"candidate column {int(zero[0])} is identically zero")
        V.flags.writeable = False
        self.vectors = V

    @property
    def k(self) -> int:
        return self.vectors.shape[1]

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    def __repr__(self):
        return f"CandidateSet(n={self.n}, k={self.k})"


def _arr(B) -> np.ndarray:
    if isinstance(B, CandidateSet):
        return B.vectors
    B = np.asarray(B, dtype=float)
    return B[:, None] if B.ndim == 1 else B


def _filter_pair(spec):
    """Normalize a filter spec to ``(theta, k)`` or None."""
    if spec is None:
        return None
    if isinstance(spec, dict):
        theta, k = spec.get("theta"), spec.get("k")
    elif isinstance(spec, (int, float)) and not isinstance(spec, bool):
        theta, k = float(spec), None
    else:
        theta, k = spec
    if theta is None and k is None:
        return None
    if theta is not None and not 0.0 <= theta <= 1.0:
        raise ValueError(f"filter theta must lie in [0, 1], got {theta}")
    if k is not None and int(k) < 1:
        raise ValueError("filter k must be positive")
    return (None if theta is None else float(theta), None if k is None else int(k))


@dataclass(frozen=True)
class InterpConfig:
    """Interpolation settings.

    ``prefilter``/``postfilter`` are ``(theta, k)`` pairs (either may be None)
    or a bare theta.  ``energy_iters=None`` selects ``ceil(1.5 * degree)``.
    ``krylov=None`` picks ``'cg'`` for symmetric and ``'gmres'`` otherwise.
    """

    degree: int = 1
    prefilter: tuple | None = None
    postfilter: tuple | None = None
    energy_iters: int | None = None
    krylov: str | None = None
    candidate_relax: RelaxConfig = field(default_factory=lambda: RelaxConfig("gauss_seidel"))

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be non-negative")
        if self.krylov is not None and self.krylov not in KRYLOV:
            raise ValueError(f"unknown krylov variant {self.krylov!r}")
        if self.energy_iters is not None and self.energy_iters < 1:
            raise ValueError("energy_iters must be >= 1")
        object.__setattr__(self, "prefilter", _filter_pair(self.prefilter))
        object.__setattr__(self, "postfilter", _filter_pair(self.postfilter))

    @property
    def iterations(self) -> int:
        if self.energy_iters is not None:
            return self.energy_iters
        return max(1, math.ceil(1.5 * self.degree))


# -- pattern helpers ----------------------------------------------------------

def _keys(M: SparseMatrix) -> np.ndarray:
    return M.row_indices() * M.n_cols + M.col_indices


def values_on_pattern(P: SparseMatrix, N: SparseMatrix) -> np.ndarray:
    """Values of P scattered onto the (superset) structure of N."""
    if P.shape != N.shape:
        raise ValueError(f"shape mismatch {P.shape} vs {N.shape}")
    kn, kp = _keys(N), _keys(P)
    pos = np.searchsorted(kn, kp)
    if kp.size and (pos.max() >= kn.size or np.any(kn[pos] != kp)):
        raise ValueError("sparsity of P is not contained in the pattern")
    out = np.zeros(N.nnz)
    out[pos] = P.values
    return out


def _root_mask(n, roots) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    if roots is not None:
        mask[np.asarray(roots, dtype=np.int64)] = True
    return mask


def sparsity_pattern(S: SparseMatrix, C: SparseMatrix, d: int) -> SparseMatrix:
    """``N = S^d C``; larger values mean stronger paths back to the root."""
    if d < 0:
        raise ValueError("degree must be non-negative")
    N = C
    for _ in range(d):
        N = matmul(S, N)
    return N


def root_node_pattern(N: SparseMatrix, roots) -> SparseMatrix:
    """Replace row ``roots[j]`` of N by the unit row ``e_j``."""
    roots = np.asarray(roots, dtype=np.int64)
    if np.unique(roots).size != roots.size:
        raise ValueError("duplicate root indices")
    if roots.size != N.n_cols:
        raise ValueError(f"{roots.size} roots for {N.n_cols} coarse columns")
    if roots.size and (roots.min() < 0 or roots.max() >= N.n_rows):
        raise ValueError("root index out of range")
    is_root = _root_mask(N.n_rows, roots)
    rows = N.row_indices()
    keep = ~is_root[rows]
    r = np.concatenate([rows[keep], roots])
    c = np.concatenate([N.col_indices[keep], np.arange(roots.size)])
    v = np.concatenate([N.values[keep], np.ones(roots.size)])
    return SparseMatrix.from_triplets(r, c, v, N.shape, N.block_size)


# -- candidates and tentative operator -------------------------------------

def improve_candidates(A: SparseMatrix, B, sweeps: int,
                       relax: RelaxConfig | None = None, collapsed: list | None = None
                       ) -> CandidateSet:
    """Relax every candidate on ``A x = 0`` and rescale to unit 2-norm.

    A column that relaxation wipes out (Gauss-Seidel solves a triangular
    system exactly) is kept unrelaxed; its index is appended to
    ``collapsed`` when a list is given.
    """
    if sweeps < 0:
        raise ValueError("sweeps must be non-negative")
    B0 = _arr(B)
    X = np.array(B0, dtype=float, copy=True)
    if sweeps > 0:
        smoother = Smoother(relax or RelaxConfig("gauss_seidel"), A)
        zero = np.zeros(A.n_rows)
        for j in range(X.shape[1]):
            col = np.ascontiguousarray(X[:, j])
            smoother(col, zero, sweeps=sweeps)
            if np.linalg.norm(col) <= 1e-8 * np.linalg.norm(B0[:, j]):
                col = B0[:, j].astype(float)
                if collapsed is not None:
                    collapsed.append(j)
            X[:, j] = col
    norms = np.linalg.norm(X, axis=0)
    charge(2 * X.size)
    norms[norms == 0] = 1.0
    return CandidateSet(X / norms)


@dataclass(frozen=True)
class Tentative:
    T: SparseMatrix
    Bc: CandidateSet
    roots: np.ndarray
    degenerate: np.ndarray
    inconsistent: np.ndarray


def dof_roots(roots, m: int) -> np.ndarray:
    roots = np.asarray(roots, dtype=np.int64)
    return (m * roots[:, None] + np.arange(m)[None, :]).ravel()


def inject_tentative(agg, N: SparseMatrix, B, m: int = 1) -> Tentative:
    """Tentative operator whose root rows carry the identity.

    Row ``i`` of aggregate ``a`` receives ``B[i, :m] @ inv(B[R_a, :m])``
    where ``R_a`` are the root DOFs of ``a``.  The coarse candidates are
    injected at roots, ``B_c = B[R, :]``.  Candidates beyond the first ``m``
    are fitted afterwards by :func:`enforce_constraints` on ``N``.
    """
    B = _arr(B)
    n, k = B.shape
    if k < m:
        raise ValueError(f"need at least {m} candidates, got {k}")
    if n != N.n_rows:
        raise ValueError("candidate length does not match the pattern")
    nagg = agg.roots.shape[0]
    droots = dof_roots(agg.roots, m)
    labels = np.asarray(agg.labels)[np.arange(n) // m]
    blocks = B[droots, :m].reshape(nagg, m, m)
    s = np.linalg.svd(blocks, compute_uv=False)
    degenerate = np.flatnonzero(s[:, -1] <= 1e-10 * np.maximum(s[:, 0], 1e-300))
    if degenerate.size:
        inv = np.linalg.pinv(blocks, rcond=1e-10)
    else:
        inv = np.linalg.inv(blocks)
    vals = np.einsum("ik,ikl->il", B[:, :m], inv[labels])
    charge(n * m * m)
    rows = np.repeat(np.arange(n), m)
    cols = (m * labels[:, None] + np.arange(m)[None, :]).ravel()
    vals = vals.ravel()
    is_root = _root_mask(n, droots)
    keep = ~is_root[rows]
    rows = np.concatenate([rows[keep], droots])
    cols = np.concatenate([cols[keep], np.arange(droots.size)])
    vals = np.concatenate([vals[keep], np.ones(droots.size)])
    T = SparseMatrix.from_triplets(rows, cols, vals, (n, nagg * m), N.block_size)
    Bc = CandidateSet(B[droots])
    inconsistent = np.empty(0, dtype=np.int64)
    if k > m:
        T, inconsistent = enforce_constraints(T, B, Bc, pattern=N, roots=droots,
                                              return_flagged=True)
    return Tentative(T, Bc, droots, degenerate, inconsistent)


# -- constraint projection ----------------------------------------------------

def _enforce_values(N, vals, is_root, B, Bc):
    k = B.shape[1]
    charge(k * k * N.nnz)
    return _kernels.enforce_rows(N.row_offsets, N.col_indices, is_root,
                                 np.ascontiguousarray(vals), np.ascontiguousarray(Bc),
                                 np.ascontiguousarray(B), GRAM_TOL)


def enforce_constraints(P: SparseMatrix, B, Bc, pattern: SparseMatrix | None = None,
                        roots=None, return_flagged=False):
    """Minimal-norm row updates so that ``P @ Bc == B``.

    Each non-root row ``i`` is corrected by the smallest ``u`` supported on
    the row's allowed columns (``pattern`` if given, else the row of P) with
    ``(p_i + u) Bc = B_i``.  Rows where no such ``u`` exists get the
    least-squares update and are reported when ``return_flagged`` is set.
    """
    B, Bc = _arr(B), _arr(Bc)
    if B.shape[0] != P.n_rows or Bc.shape[0] != P.n_cols or B.shape[1] != Bc.shape[1]:
        raise ValueError("candidate shapes do not match P")
    N = P if pattern is None else pattern
    vals = P.values.copy() if pattern is None else values_on_pattern(P, N)
    is_root = _root_mask(P.n_rows, roots)
    new, resid = _enforce_values(N, vals, is_root, B, Bc)
    scale = max(np.abs(B).max(), 1e-300)
    flagged = np.flatnonzero(resid > 1e-10 * scale)
    out = N.with_values(new)
    return (out, flagged) if return_flagged else out


# -- energy minimization ------------------------------------------------------

class _Pattern:
    """Pattern ``N`` together with the per-row constraint bases."""

    def __init__(self, N: SparseMatrix, is_root, Bc):
        self.N = N
        self.ptr, self.idx = N.row_offsets, N.col_indices
        self.is_root = is_root
        Bc = np.ascontiguousarray(Bc)
        self.k = Bc.shape[1]
        self.Q = _kernels.row_bases(self.ptr, self.idx, is_root, Bc, GRAM_TOL)
        charge(self.k * self.k * N.nnz)

    def project(self, X):
        charge(2 * self.k * self.N.nnz)
        return _kernels.project_rows(self.ptr, self.is_root, self.Q, X)

    def column_sums(self, x):
        return np.bincount(self.idx, weights=x, minlength=self.N.n_cols)


def _restricted_product(A: SparseMatrix, ptr, idx, vals, pat: _Pattern):
    charge(_kernels.pattern_product_ops(A.row_offsets, A.col_indices, ptr))
    return _kernels.pattern_product(A.row_offsets, A.col_indices, A.values,
                                    ptr, idx, vals, pat.ptr, pat.idx, pat.N.n_cols)


def _cg_energy(A, pat: _Pattern, vals, iters, history):
    # minimize sum_j p_j^T A p_j over the affine set {T + U : U Bc = 0, U on N}
    ptr, idx = pat.ptr, pat.idx
    AP = _restricted_product(A, ptr, idx, vals, pat)
    if history is not None:
        history.append(pat.column_sums(vals * AP))
    r = -pat.project(AP)
    p = r.copy()
    rr = r @ r
    floor = (1e-14) ** 2 * max(AP @ AP, 1e-300)
    for _ in range(iters):
        if rr <= floor:
            break
        Ap = _restricted_product(A, ptr, idx, p, pat)
        pAp = p @ Ap
        if not pAp > 0:
            break
        alpha = rr / pAp
        vals = vals + alpha * p
        AP += alpha * Ap
        if history is not None:
            history.append(pat.column_sums(vals * AP))
        r -= alpha * pat.project(Ap)
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    return vals


def _cgnr_energy(A, At, pat: _Pattern, vals, iters, history):
    # minimize ||A P||_F^2 over the same affine set (normal-equation CG)
    N = pat.N
    Ncsr = lambda v: sp.csr_matrix((v, pat.idx, pat.ptr), shape=N.shape)
    ops = matmul_ops(A, N)

    def apply(v):
        charge(ops)
        Y = (A.csr @ Ncsr(v)).tocsr()
        return Y

    def grad(Y):
        ip = Y.indptr.astype(np.int64)
        ix = Y.indices.astype(np.int64)
        charge(_kernels.pattern_product_ops(At.row_offsets, At.col_indices, ip))
        return _kernels.pattern_product(At.row_offsets, At.col_indices, At.values,
                                        ip, ix, Y.data, pat.ptr, pat.idx, N.n_cols)

    def col_energy(Y):
        return np.bincount(Y.indices, weights=Y.data ** 2, minlength=N.n_cols)

    Y = apply(vals)
    if history is not None:
        history.append(col_energy(Y))
    g = grad(Y)
    r = -pat.project(g)
    p = r.copy()
    rr = r @ r
    floor = (1e-14) ** 2 * max(g @ g, 1e-300)
    for _ in range(iters):
        if rr <= floor:
            break
        Z = apply(p)
        zz = Z.data @ Z.data
        if not zz > 0:
            break
        alpha = rr / zz
        vals = vals + alpha * p
        Y = (Y + alpha * Z).tocsr()
        if history is not None:
            history.append(col_energy(Y))
        r -= alpha * pat.project(grad(Z))
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    return vals


def _check_spd_like(A: SparseMatrix):
    if not A.is_symmetric():
        raise ValueError("cg energy minimization needs a symmetric matrix; use krylov='gmres'")
    if np.any(A.diagonal() <= 0):
        raise ValueError("cg energy minimization needs a positive diagonal")


def energy_minimize(A: SparseMatrix, T: SparseMatrix, B, Bc, N: SparseMatrix,
                    cfg: InterpConfig, roots=None, iterations=None, history=None,
                    At: SparseMatrix | None = None) -> SparseMatrix:
    """Smooth T inside pattern N while keeping ``P @ Bc == B`` and root rows fixed.

    ``cfg.krylov == 'cg'`` minimizes the summed A-energy of the columns;
    ``'gmres'`` minimizes ``||A P||_F`` (the ``A^T A`` energy) and is the
    variant for non-symmetric A.  A fixed number of iterations is taken,
    stopping early on breakdown.  When ``history`` is a list, the per-column
    energies are appended after every iteration (index 0 is T).
    """
    Bc = _arr(Bc)
    iters = cfg.iterations if iterations is None else int(iterations)
    if T.shape != N.shape or A.n_rows != N.n_rows:
        raise ValueError("dimension mismatch between A, T and N")
    krylov = cfg.krylov or ("cg" if A.is_symmetric() else "gmres")
    if krylov == "cg":
        _check_spd_like(A)
    is_root = _root_mask(N.n_rows, roots)
    vals = values_on_pattern(T, N)
    pat = _Pattern(N, is_root, Bc)
    if krylov == "cg":
        vals = _cg_energy(A, pat, vals, iters, history)
    else:
        vals = _cgnr_energy(A, transpose(A) if At is None else At, pat, vals, iters, history)
    # one more row correction removes the constraint drift of the Krylov updates
    vals, _ = _enforce_values(N, vals, is_root, _arr(B), Bc)
    return N.with_values(vals)


def postfilter_pipeline(P: SparseMatrix, A: SparseMatrix, B, Bc, cfg: InterpConfig,
                        roots=None, At: SparseMatrix | None = None) -> SparseMatrix:
    """Filter P (root rows untouched), restore ``P @ Bc == B``, re-smooth once.

    Rows whose filtered pattern cannot satisfy the constraints are left
    unfiltered.
    """
    if cfg.postfilter is None:
        raise ValueError("no postfilter configured")
    theta, k = cfg.postfilter
    B, Bc = _arr(B), _arr(Bc)
    is_root = _root_mask(P.n_rows, roots)
    protect = is_root[P.row_indices()]
    Pf = filter_matrix(P, theta=theta, k=k, protect=protect, min_keep=B.shape[1])
    Pe, flagged = enforce_constraints(Pf, B, Bc, roots=roots, return_flagged=True)
    if flagged.size:
        # rows whose filtered pattern cannot carry B keep all their entries
        keep = np.zeros(P.n_rows, dtype=bool)
        keep[flagged] = True
        protect = protect | keep[P.row_indices()]
        Pf = filter_matrix(P, theta=theta, k=k, protect=protect, min_keep=B.shape[1])
        Pe = enforce_constraints(Pf, B, Bc, roots=roots)
    Nf = Pf.pattern()
    return energy_minimize(A, Pe, B, Bc, Nf, cfg, roots=roots, iterations=1, At=At)
