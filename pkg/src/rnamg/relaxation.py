"""Relaxation schemes and the spectral-radius estimate used to weight them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import _kernels
from .complexity import charge
from .sparse import SparseMatrix, spmv, transpose

SCHEMES = ("jacobi", "gauss_seidel", "sym_gauss_seidel", "gsne", "block_sym_gauss_seidel")

# passes over the matrix per sweep, used for work accounting
SWEEP_COST = {
    "jacobi": 1,
    "gauss_seidel": 1,
    "sym_gauss_seidel": 2,
    "gsne": 2,
    "block_sym_gauss_seidel": 2,
}


@dataclass(frozen=True)
class RelaxConfig:
    """Relaxation scheme, weight and sweep count.

    ``weight=None`` means ``4 / (3 rho(D^-1 A))`` for Jacobi and 1 otherwise.
    """

    scheme: str = "jacobi"
    weight: float | None = None
    sweeps: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown relaxation scheme {self.scheme!r}")
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")
        if self.weight is not None and self.weight <= 0:
            raise ValueError("relaxation weight must be positive")


def spectral_radius(A: SparseMatrix, steps: int = 15, scale_by_diagonal=True, seed=0) -> float:
    """Estimate of rho(D^-1 A) (or rho(A)) from ``steps`` matvecs.

    Symmetric matrices with positive diagonal are symmetrized as
    D^-1/2 A D^-1/2, which has the same spectrum as D^-1 A, and handled by
    Lanczos; everything else goes through Arnoldi.
    """
    n = A.n_rows
    if n == 0:
        return 0.0
    d = A.diagonal()
    if scale_by_diagonal and np.any(d == 0):
        raise ValueError(f"zero diagonal at row {int(np.flatnonzero(d == 0)[0])}")
    sym = A.is_symmetric() and (not scale_by_diagonal or np.all(d > 0))
    if not scale_by_diagonal:
        left = right = np.ones(n)
    elif sym:
        left = right = 1.0 / np.sqrt(d)
    else:
        left, right = 1.0 / d, np.ones(n)
    steps = min(steps, n)
    rng = np.random.default_rng(seed)
    if sym:
        return _lanczos(A, left, steps, rng)
    V = np.zeros((steps + 1, n))
    H = np.zeros((steps + 1, steps))
    v = rng.uniform(-1, 1, n)
    V[0] = v / np.linalg.norm(v)
    m = steps
    for j in range(steps):
        w = left * spmv(A, right * V[j])
        for i in range(j + 1):
            H[i, j] = V[i] @ w
            w -= H[i, j] * V[i]
        charge(2 * (j + 1) * n)
        H[j + 1, j] = np.linalg.norm(w)
        if H[j + 1, j] <= 1e-14 * abs(H[: j + 1, j]).max(initial=1e-300):
            m = j + 1
            break
        V[j + 1] = w / H[j + 1, j]
    ev = sla.eigvals(H[:m, :m])
    return float(np.abs(ev).max())


def _lanczos(A, s, steps, rng):
    # three-term recurrence on the symmetric operator diag(s) A diag(s);
    # only the matvecs are charged
    n = A.n_rows
    alpha, beta = np.zeros(steps), np.zeros(steps)
    v = rng.uniform(-1, 1, n)
    v /= np.linalg.norm(v)
    v_old = np.zeros(n)
    m = steps
    for j in range(steps):
        w = s * spmv(A, s * v)
        alpha[j] = v @ w
        w -= alpha[j] * v + (beta[j - 1] if j else 0.0) * v_old
        b = np.linalg.norm(w)
        if b <= 1e-14 * max(abs(alpha[j]), 1e-300):
            m = j + 1
            break
        beta[j] = b
        v_old, v = v, w / b
    ev = sla.eigvalsh_tridiagonal(alpha[:m], beta[: m - 1])
    return float(np.abs(ev).max())


class Smoother:
    """Relaxation bound to one matrix, with its diagonal data precomputed."""

    def __init__(self, cfg: RelaxConfig, A: SparseMatrix):
        self.cfg = cfg
        self.A = A
        self.scheme = cfg.scheme
        csr = A.csr
        self._arrays = (A.row_offsets, A.col_indices, A.values)
        if cfg.scheme == "jacobi":
            d = A.diagonal()
            bad = np.flatnonzero(d == 0)
            if bad.size:
                raise ValueError(f"zero diagonal at row {int(bad[0])}")
            w = cfg.weight
            if w is None:
                w = 4.0 / (3.0 * spectral_radius(A))
            self.weight = w
            self.dinv = w / d
        elif cfg.scheme in ("gauss_seidel", "sym_gauss_seidel"):
            d = A.diagonal()
            bad = np.flatnonzero(d == 0)
            if bad.size:
                raise ValueError(f"zero diagonal at row {int(bad[0])}")
        elif cfg.scheme == "gsne":
            At = transpose(A)
            self._t = (At.row_offsets, At.col_indices, At.values)
            self.colnorm2 = np.asarray(csr.multiply(csr).sum(axis=0)).ravel()
            bad = np.flatnonzero(self.colnorm2 == 0)
            if bad.size:
                raise ValueError(f"zero column {int(bad[0])}")
        elif cfg.scheme == "block_sym_gauss_seidel":
            m = A.block_size
            nb = A.n_rows // m
            blocks = np.zeros((nb, m, m))
            rows = A.row_indices()
            cols = A.col_indices
            sel = rows // m == cols // m
            blocks[rows[sel] // m, rows[sel] % m, cols[sel] % m] = A.values[sel]
            try:
                self.dinv_blocks = np.linalg.inv(blocks)
            except np.linalg.LinAlgError:
                dets = np.linalg.det(blocks)
                raise ValueError(f"singular diagonal block {int(np.flatnonzero(dets == 0)[0])}")
            self.m = m

    @property
    def sweep_cost(self) -> int:
        return SWEEP_COST[self.scheme]

    def __call__(self, x, b, sweeps=None, backward=False):
        """Relax in place and return ``x``."""
        sweeps = self.cfg.sweeps if sweeps is None else sweeps
        if sweeps <= 0:
            return x
        A = self.A
        ip, ix, dv = self._arrays
        charge(self.sweep_cost * sweeps * A.nnz)
        s = self.scheme
        if s == "jacobi":
            csr = A.csr
            for _ in range(sweeps):
                x += self.dinv * (b - csr @ x)
        elif s == "gauss_seidel":
            self._check(_kernels.gauss_seidel(ip, ix, dv, x, b, sweeps, -1 if backward else 1))
        elif s == "sym_gauss_seidel":
            for _ in range(sweeps):
                self._check(_kernels.gauss_seidel(ip, ix, dv, x, b, 1, 1))
                self._check(_kernels.gauss_seidel(ip, ix, dv, x, b, 1, -1))
        elif s == "block_sym_gauss_seidel":
            for _ in range(sweeps):
                _kernels.block_gauss_seidel(ip, ix, dv, x, b, self.dinv_blocks, self.m, 1, 1)
                _kernels.block_gauss_seidel(ip, ix, dv, x, b, self.dinv_blocks, self.m, 1, -1)
        elif s == "gsne":
            tp, ti, tv = self._t
            self._check(_kernels.gsne(ip, ix, dv, tp, ti, tv, self.colnorm2, x, b, sweeps))
        return x

    @staticmethod
    def _check(code):
        if code >= 0:
            raise ValueError(f"zero diagonal at row {int(code)}")


def relax(cfg: RelaxConfig, A: SparseMatrix, x, b) -> np.ndarray:
    """Apply ``cfg.sweeps`` sweeps of the scheme to ``A x = b``; returns a new vector."""
    x = np.array(x, dtype=float, copy=True)
    b = np.asarray(b, dtype=float)
    if x.shape[0] != A.n_cols or b.shape[0] != A.n_rows:
        raise ValueError("dimension mismatch between A, x and b")
    return Smoother(cfg, A)(x, b)
