"""Setup drivers: root-node (RN), smoothed aggregation (SA) and classical
C/F (CF) hierarchies, each charging its work to a :class:`WorkLedger`."""

from __future__ import annotations

import heapq
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .aggregation import Aggregation, greedy_aggregate, unamalgamate
from .complexity import WorkLedger, charge, cycle_complexity, ledger_scope, operator_complexity
from .interpolation import (
    InterpConfig,
    _arr,
    energy_minimize,
    improve_candidates,
    inject_tentative,
    postfilter_pipeline,
    root_node_pattern,
    sparsity_pattern,
)
from .relaxation import spectral_radius
from .sparse import SparseMatrix, filter_matrix, galerkin_product, matmul, transpose
from .strength import (
    StrengthConfig,
    amalgamate,
    classical_strength,
    normalize_strength,
    strength_of_connection,
)

log = logging.getLogger(__name__)

METHODS = ("rn", "sa", "cf")


@dataclass(frozen=True)
class SetupOptions:
    """Options shared by the three setup drivers.

    ``vector_flag`` selects nodal strength/aggregation on blocks of
    ``A.block_size`` unknowns.  ``sa_smoothing_steps`` and ``cf_theta`` only
    affect the SA and CF drivers.
    """

    max_size: int = 20
    max_levels: int = 25
    method: str = "rn"
    strength: StrengthConfig = field(default_factory=StrengthConfig)
    interp: InterpConfig = field(default_factory=InterpConfig)
    candidate_sweeps: int = 4
    vector_flag: bool = False
    sa_smoothing_steps: int = 1
    cf_theta: float = 0.25

    def __post_init__(self):
        if self.max_size < 1:
            raise ValueError("max_size must be >= 1")
        if self.max_levels < 1:
            raise ValueError("max_levels must be >= 1")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.candidate_sweeps < 0:
            raise ValueError("candidate_sweeps must be >= 0")
        if self.sa_smoothing_steps < 0:
            raise ValueError("sa_smoothing_steps must be >= 0")


@dataclass
class Level:
    """One grid level.

    ``B`` holds the candidates the level's interpolation was built from
    (after relaxation for root-node setups) and ``Bc`` their coarse
    counterparts, so that ``P @ Bc`` reproduces ``B`` for root-node levels.
    """

    A: SparseMatrix
    P: SparseMatrix | None = None
    R: SparseMatrix | None = None
    B: np.ndarray | None = None
    roots: np.ndarray | None = None
    Bc: np.ndarray | None = None
    info: dict = field(default_factory=dict)


@dataclass
class Hierarchy:
    levels: list
    ledger: WorkLedger
    symmetric: bool
    block_size: int = 1
    method: str = "rn"
    warnings: list = field(default_factory=list)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def operator_complexity(self) -> float:
        return operator_complexity(self)

    def cycle_complexity(self, nu_pre=1, nu_post=1) -> float:
        return cycle_complexity(self, nu_pre, nu_post)

    def summary(self) -> dict:
        lv = []
        for L in self.levels:
            lv.append({
                "n": L.A.n_rows,
                "nnz_A": L.A.nnz,
                "nnz_P": None if L.P is None else L.P.nnz,
                "nnz_R": None if L.R is None else L.R.nnz,
                "block_size": L.A.block_size,
            })
        return {
            "method": self.method,
            "symmetric": self.symmetric,
            "levels": lv,
            "ledger": self.ledger.snapshot(),
            "setup_complexity": self.ledger.setup_total(),
            "operator_complexity": operator_complexity(self),
            "warnings": list(self.warnings),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.summary(), **kw)


def _candidates(A, B, m):
    if B is None:
        # one constant per unknown of a node (translations for elasticity)
        B = np.ones((A.n_rows, 1)) if m == 1 else np.kron(np.ones((A.n_rows // m, 1)), np.eye(m))
    B = np.array(_arr(B), dtype=float)
    if B.shape[0] != A.n_rows:
        raise ValueError(f"candidates have {B.shape[0]} rows, A has {A.n_rows}")
    return B


def _prepare(A: SparseMatrix, opts: SetupOptions):
    if A.n_rows != A.n_cols:
        raise ValueError("A must be square")
    m = A.block_size if opts.vector_flag else 1
    if not opts.vector_flag:
        A = A.with_block_size(1) if A.block_size != 1 else A
    return A, m


def _stop(A, opts, levels):
    return A.n_rows <= opts.max_size or len(levels) >= opts.max_levels


def _stagnated(H, n, nc, lvl):
    if nc >= n or nc == 0:
        H.warnings.append(f"coarsening stagnated at level {lvl} ({n} -> {nc})")
        log.warning(H.warnings[-1])
        return True
    return False


# -- root-node ----------------------------------------------------------------

def _widen(S, N, need, roots, max_hops=3):
    """Grow rows of N with fewer than ``need`` columns by extra hops through S."""
    is_root = np.zeros(N.n_rows, dtype=bool)
    is_root[roots] = True
    for _ in range(max_hops):
        short = (N.row_lengths() < need) & ~is_root
        if not short.any():
            break
        keep = short[S.row_indices()]
        Ss = SparseMatrix.from_scipy(sp.csr_matrix((S.values[keep], (S.row_indices()[keep],
                                                                     S.col_indices[keep])),
                                                   shape=S.shape))
        N = SparseMatrix.from_scipy(N.csr + matmul(Ss, N).csr)
    return N


def _rn_pattern(S, agg: Aggregation, opts: SetupOptions, m: int, k: int):
    cfg = opts.interp
    need = math.ceil(k / m)
    N = sparsity_pattern(S, agg.pattern, cfg.degree)
    if cfg.prefilter is not None:
        theta, kk = cfg.prefilter
        own = N.col_indices == agg.labels[N.row_indices()]
        N = filter_matrix(N, theta=theta, k=kk, protect=np.zeros(N.nnz, dtype=bool),
                          retain=own, min_keep=need)
    if need > 1:
        # rows must see enough coarse columns to satisfy every constraint
        N = _widen(S, N, need, agg.roots)
    N, droots = unamalgamate(N, agg.roots, m)
    return root_node_pattern(N.pattern(), droots), droots


def _rn_interp(A, At, B, agg, N, opts, ledger, krylov, collapsed=None):
    cfg = opts.interp
    if krylov != cfg.krylov:
        cfg = InterpConfig(cfg.degree, cfg.prefilter, cfg.postfilter, cfg.energy_iters,
                           krylov, cfg.candidate_relax)
    with ledger_scope(ledger, "Candidates"):
        Bi = improve_candidates(A, B, opts.candidate_sweeps, cfg.candidate_relax,
                                collapsed).vectors
    with ledger_scope(ledger, "P"):
        m = N.block_size
        tent = inject_tentative(agg, N, Bi, m)
        P = energy_minimize(A, tent.T, Bi, tent.Bc, N, cfg, roots=tent.roots, At=At)
        if cfg.postfilter is not None:
            P = postfilter_pipeline(P, A, Bi, tent.Bc, cfg, roots=tent.roots, At=At)
    return P, tent, Bi


def rn_setup(A: SparseMatrix, B=None, B_hat=None, opts: SetupOptions | None = None) -> Hierarchy:
    """Root-node hierarchy with energy-minimized interpolation.

    For non-symmetric A the restriction is built by the same procedure on
    ``A^T`` with candidates ``B_hat`` (defaulting to ``B``) and the
    normal-equation energy; symmetric A uses ``R = P^T``.  Without ``B`` the
    candidates are the constant, or one constant per node unknown when
    ``opts.vector_flag`` is set.
    """
    opts = opts or SetupOptions()
    A, m = _prepare(A, opts)
    B = _candidates(A, B, m)
    symmetric = A.is_symmetric()
    Bh = None if symmetric else _candidates(A, B if B_hat is None else B_hat, m)
    H = Hierarchy([Level(A, B=B)], WorkLedger(max(A.nnz, 1)), symmetric, m, "rn")
    krylov = opts.interp.krylov or ("cg" if symmetric else "gmres")
    while not _stop(A, opts, H.levels):
        lvl = len(H.levels) - 1
        with ledger_scope(H.ledger, "Aggregation"):
            S = strength_of_connection(A, opts.strength)
            if m > 1:
                S = amalgamate(S, m)
            S = normalize_strength(S)
            agg = greedy_aggregate(S)
        if _stagnated(H, A.n_rows, agg.n_aggregates * m, lvl):
            break
        with ledger_scope(H.ledger, "P"):
            N, droots = _rn_pattern(S, agg, opts, m, B.shape[1])
            N = N.with_block_size(m)
        At = None if symmetric else transpose(A)
        collapsed = []
        P, tent, Bi = _rn_interp(A, At, B, agg, N, opts, H.ledger, krylov, collapsed)
        if collapsed:
            H.warnings.append(f"candidate relaxation annihilated columns {collapsed} at level "
                              f"{len(H.levels) - 1}; kept them unrelaxed")
            log.warning(H.warnings[-1])
        if symmetric:
            R = transpose(P)
            Bh_c = None
        else:
            Rt, tent_h, _ = _rn_interp(At, A, Bh, agg, N, opts, H.ledger, "gmres")
            R = transpose(Rt)
            Bh_c = tent_h.Bc.vectors
        with ledger_scope(H.ledger, "RAP"):
            Ac = galerkin_product(R, A, P)
        cur = H.levels[-1]
        # keep the improved candidates: they are what P reproduces
        cur.P, cur.R, cur.roots, cur.B, cur.Bc = P, R, droots, Bi, tent.Bc.vectors
        cur.info = {"n_aggregates": agg.n_aggregates, "degenerate": tent.degenerate.tolist(),
                    "inconsistent_rows": tent.inconsistent.tolist()}
        A, B, Bh = Ac, tent.Bc.vectors, Bh_c
        H.levels.append(Level(A, B=B))
    return H


# -- smoothed aggregation ------------------------------------------------------

def sa_tentative(agg: Aggregation, B, m: int = 1):
    """Block-diagonal tentative operator with orthonormal aggregate blocks.

    Returns ``(T, Bc, dropped)`` with ``T @ Bc == B``.  Candidates that are
    linearly dependent on an aggregate are dropped there, which changes that
    aggregate's number of coarse unknowns; ``dropped`` lists those aggregates.
    """
    B = _arr(B)
    n, k = B.shape
    labels = np.asarray(agg.labels)[np.arange(n) // m]
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(agg.n_aggregates + 1))
    rows, cols, vals, bc_rows = [], [], [], []
    dropped = []
    col = 0
    for a in range(agg.n_aggregates):
        idx = order[bounds[a]:bounds[a + 1]]
        Q, Rf = np.linalg.qr(B[idx])
        sgn = np.where(np.diag(Rf) < 0, -1.0, 1.0)
        Q, Rf = Q * sgn, Rf * sgn[:, None]
        d = np.abs(np.diag(Rf))
        ok = d > 1e-10 * max(d.max(initial=0), 1e-300)
        if not ok.all():
            dropped.append(a)
            Q, Rf = Q[:, ok], Rf[ok]
        nc = Q.shape[1]
        rows.append(np.repeat(idx, nc))
        cols.append(np.tile(np.arange(col, col + nc), idx.size))
        vals.append(Q.ravel())
        bc_rows.append(Rf)
        col += nc
    T = SparseMatrix.from_triplets(np.concatenate(rows), np.concatenate(cols),
                                   np.concatenate(vals), (n, col))
    return T, np.vstack(bc_rows), dropped


def jacobi_smooth(A: SparseMatrix, T: SparseMatrix, steps: int) -> SparseMatrix:
    """``(I - w D^-1 A)^steps T`` with ``w = 4 / (3 rho(D^-1 A))``."""
    if steps == 0:
        return T
    w = 4.0 / (3.0 * spectral_radius(A))
    Dinv = SparseMatrix.from_scipy(sp.diags(w / A.diagonal()))
    P = T
    for _ in range(steps):
        AP = matmul(A, P)
        P = SparseMatrix.from_scipy(P.csr - Dinv.csr @ AP.csr)
    return P.with_block_size(T.block_size)


def sa_setup(A: SparseMatrix, B=None, opts: SetupOptions | None = None, B_hat=None) -> Hierarchy:
    """Smoothed-aggregation hierarchy (non-symmetric A smooths ``A^T`` for R)."""
    opts = opts or SetupOptions(method="sa")
    A, m = _prepare(A, opts)
    B = _candidates(A, B, m)
    symmetric = A.is_symmetric()
    Bh = None if symmetric else _candidates(A, B if B_hat is None else B_hat, m)
    H = Hierarchy([Level(A, B=B)], WorkLedger(max(A.nnz, 1)), symmetric, m, "sa")
    while not _stop(A, opts, H.levels):
        lvl = len(H.levels) - 1
        with ledger_scope(H.ledger, "Aggregation"):
            S = strength_of_connection(A, opts.strength)
            bs = A.block_size if opts.vector_flag else 1
            if bs > 1:
                S = amalgamate(S, bs)
            S = normalize_strength(S)
            agg = greedy_aggregate(S)
        with ledger_scope(H.ledger, "P"):
            T, Bc, dropped = sa_tentative(agg, B, bs)
        if _stagnated(H, A.n_rows, T.n_cols, lvl):
            break
        with ledger_scope(H.ledger, "P"):
            P = jacobi_smooth(A, T, opts.sa_smoothing_steps)
            if symmetric:
                R = transpose(P)
                Bh_c = None
            else:
                At = transpose(A)
                Th, Bh_c, _ = sa_tentative(agg, Bh, bs)
                if Th.n_cols != T.n_cols:
                    raise ValueError("restriction and interpolation coarse sizes differ")
                R = transpose(jacobi_smooth(At, Th, opts.sa_smoothing_steps))
        with ledger_scope(H.ledger, "RAP"):
            Ac = galerkin_product(R, A, P)
        k = B.shape[1]
        if opts.vector_flag and not dropped and Ac.n_rows % k == 0:
            Ac = Ac.with_block_size(k)
        cur = H.levels[-1]
        cur.P, cur.R, cur.Bc = P, R, Bc
        cur.info = {"n_aggregates": agg.n_aggregates, "rank_deficient": dropped}
        A, B, Bh = Ac, Bc, Bh_c
        H.levels.append(Level(A, B=B))
    return H


# -- classical C/F --------------------------------------------------------------

def rs_split(S: SparseMatrix):
    """First-pass Ruge-Stueben C/F splitting.

    Row ``i`` of S lists the points ``i`` strongly depends on.  Points are
    taken as C in order of decreasing influence count (lowest index on
    ties); the points depending on a new C-point become F and raise the
    count of their other dependencies.
    """
    if S.n_rows != S.n_cols:
        raise ValueError("splitting needs a square strength matrix")
    n = S.n_rows
    off = S.row_indices() != S.col_indices
    Soff = sp.csr_matrix((np.ones(int(off.sum())), S.col_indices[off],
                          np.concatenate([[0], np.cumsum(np.bincount(S.row_indices()[off],
                                                                     minlength=n))])),
                         shape=(n, n))
    St = Soff.T.tocsr()
    lam = np.asarray(Soff.sum(axis=0)).ravel().astype(np.int64)
    state = np.zeros(n, dtype=np.int8)  # 0 free, 1 C, 2 F
    heap = [(-int(lam[i]), i) for i in range(n)]
    heapq.heapify(heap)
    while heap:
        negl, i = heapq.heappop(heap)
        if state[i] or -negl != lam[i]:
            continue
        state[i] = 1
        for j in St.indices[St.indptr[i]:St.indptr[i + 1]]:
            if state[j]:
                continue
            state[j] = 2
            for q in Soff.indices[Soff.indptr[j]:Soff.indptr[j + 1]]:
                if state[q] == 0:
                    lam[q] += 1
                    heapq.heappush(heap, (-int(lam[q]), int(q)))
        for j in Soff.indices[Soff.indptr[i]:Soff.indptr[i + 1]]:
            if state[j] == 0:
                lam[j] -= 1
                heapq.heappush(heap, (-int(lam[j]), int(j)))
    C = np.flatnonzero(state == 1)
    F = np.flatnonzero(state == 2)
    return C, F


def _promote_orphans(S: SparseMatrix, C, F):
    n = S.n_rows
    isC = np.zeros(n, dtype=bool)
    isC[C] = True
    rows, cols = S.row_indices(), S.col_indices
    link = (rows != cols) & isC[cols]
    has = np.bincount(rows[link], minlength=n) > 0
    orphans = np.asarray(F)[~has[np.asarray(F)]]
    if orphans.size:
        isC[orphans] = True
    return np.flatnonzero(isC), np.flatnonzero(~isC)


def direct_interpolation(A: SparseMatrix, S: SparseMatrix, C, F) -> SparseMatrix:
    """Classical direct interpolation with separate negative/positive scaling.

    ``w_ij = -alpha_i a_ij / a_ii`` for negative and ``-beta_i a_ij / a_ii``
    for positive strong C-couplings, where alpha (beta) is the ratio of the
    row's full negative (positive) off-diagonal sum to its strong-C part.
    Positive couplings without a strong positive C-neighbour are lumped into
    the diagonal.
    """
    n = A.n_rows
    C = np.asarray(C, dtype=np.int64)
    isC = np.zeros(n, dtype=bool)
    isC[C] = True
    cidx = np.full(n, -1, dtype=np.int64)
    cidx[C] = np.arange(C.size)
    rows, cols, a = A.row_indices(), A.col_indices, A.values
    off = rows != cols
    strong = np.zeros(A.nnz, dtype=bool)
    pos = np.searchsorted(rows * n + cols, S.row_indices() * n + S.col_indices)
    hit = pos < A.nnz
    hit[hit] = (rows[pos[hit]] * n + cols[pos[hit]]) == (S.row_indices() * n + S.col_indices)[hit]
    strong[pos[hit]] = True
    sc = off & strong & isC[cols]
    neg, posv = off & (a < 0), off & (a > 0)
    bc = lambda mask: np.bincount(rows[mask], weights=a[mask], minlength=n)
    sum_n, sum_p = bc(neg), bc(posv)
    sum_cn, sum_cp = bc(sc & (a < 0)), bc(sc & (a > 0))
    diag = A.diagonal().copy()
    lump = (sum_cp == 0)
    diag[lump] += sum_p[lump]
    Fm = ~isC
    bad = np.flatnonzero(Fm & (sum_cn == 0) & (sum_cp == 0))
    if bad.size:
        raise ValueError(f"F-point {int(bad[0])} has no strong C-neighbour")
    bad = np.flatnonzero(Fm & (diag == 0))
    if bad.size:
        raise ValueError(f"zero diagonal at F-point {int(bad[0])}")
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(sum_cn != 0, sum_n / sum_cn, 0.0)
        beta = np.where(sum_cp != 0, sum_p / sum_cp, 0.0)
    e = sc & Fm[rows]
    r = rows[e]
    w = np.where(a[e] < 0, alpha[r], beta[r]) * (-a[e] / diag[r])
    prow = np.concatenate([r, C])
    pcol = np.concatenate([cidx[cols[e]], np.arange(C.size)])
    pval = np.concatenate([w, np.ones(C.size)])
    charge(4 * A.nnz)
    return SparseMatrix.from_triplets(prow, pcol, pval, (n, C.size))


def cf_setup(A: SparseMatrix, opts: SetupOptions | None = None) -> Hierarchy:
    """Classical AMG with direct interpolation and ``R = P^T``."""
    opts = opts or SetupOptions(method="cf")
    if A.n_rows != A.n_cols:
        raise ValueError("A must be square")
    A = A.with_block_size(1)
    H = Hierarchy([Level(A)], WorkLedger(max(A.nnz, 1)), A.is_symmetric(), 1, "cf")
    while not _stop(A, opts, H.levels):
        lvl = len(H.levels) - 1
        with ledger_scope(H.ledger, "Aggregation"):
            S = classical_strength(A, opts.cf_theta)
            C, F = rs_split(S)
            C, F = _promote_orphans(S, C, F)
        if _stagnated(H, A.n_rows, C.size, lvl):
            break
        with ledger_scope(H.ledger, "P"):
            P = direct_interpolation(A, S, C, F)
            R = transpose(P)
        with ledger_scope(H.ledger, "RAP"):
            Ac = galerkin_product(R, A, P)
        cur = H.levels[-1]
        cur.P, cur.R, cur.roots = P, R, C
        cur.info = {"n_coarse": int(C.size)}
        A = Ac
        H.levels.append(Level(A))
    return H


def setup(A: SparseMatrix, B=None, B_hat=None, opts: SetupOptions | None = None) -> Hierarchy:
    """Dispatch on ``opts.method``."""
    opts = opts or SetupOptions()
    if opts.method == "rn":
        return rn_setup(A, B, B_hat, opts)
    if opts.method == "sa":
        return sa_setup(A, B, opts, B_hat)
    return cf_setup(A, opts)
