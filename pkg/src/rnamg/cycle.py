"""Multigrid cycles and the (optionally Krylov-accelerated) solve driver."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .complexity import WorkLedger, charge, cycle_complexity, ledger_scope, operator_complexity
from .relaxation import RelaxConfig, Smoother
from .sparse import spmv

ACCEL = ("none", "cg", "gmres")
DIVERGENCE = 1e6


@dataclass
class SolveReport:
    residual_history: list
    iterations: int
    converged: bool
    rho: float
    chi_oc: float
    chi_cc: float
    work_units_solve: float
    work_units_other: float = 0.0
    diverged: bool = False
    x: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "diverged": self.diverged,
            "rho": self.rho,
            "chi_oc": self.chi_oc,
            "chi_cc": self.chi_cc,
            "work_units_solve": self.work_units_solve,
            "work_units_other": self.work_units_other,
            "residual_history": [float(r) for r in self.residual_history],
        }


def convergence_factor(residual_history) -> float:
    """Geometric mean of the last ``min(5, len - 1)`` residual ratios."""
    r = np.asarray(residual_history, dtype=float)
    if r.size < 2:
        raise ValueError("need at least two residuals")
    w = min(5, r.size - 1)
    tail = r[-(w + 1):]
    if np.any(tail == 0):
        return 0.0
    ratios = tail[1:] / tail[:-1]
    return float(np.exp(np.mean(np.log(ratios))))


class _CoarseSolver:
    def __init__(self, A):
        n = A.n_rows
        self.n = n
        if n == 0:
            self.kind = "empty"
        elif n <= 4000:
            D = A.toarray()
            lu, piv = sla.lu_factor(D, check_finite=False)
            d = np.abs(np.diag(lu))
            if d.min() <= 1e-13 * max(d.max(), 1e-300):
                warnings.warn("singular coarsest matrix; using a pseudo-inverse solve")
                self.kind, self.pinv = "pinv", np.linalg.pinv(D)
            else:
                self.kind, self.lu = "lu", (lu, piv)
        else:
            self.kind, self.lu = "splu", spla.splu(A.csr.tocsc())

    def __call__(self, b):
        if self.kind == "empty":
            return b.copy()
        if self.kind == "lu":
            return sla.lu_solve(self.lu, b, check_finite=False)
        if self.kind == "pinv":
            return self.pinv @ b
        return self.lu.solve(b)


class Cycler:
    """Per-hierarchy solve data: smoothers on every level and the coarse solver."""

    def __init__(self, H, relax: RelaxConfig | None = None):
        self.H = H
        self.relax = relax or RelaxConfig()
        with ledger_scope(None, "SolveOther"):
            self.smoothers = [Smoother(self.relax, L.A) for L in H.levels[:-1]]
        self.coarse = _CoarseSolver(H.levels[-1].A)
        self._backward_post = self.relax.scheme == "gauss_seidel"

    def cycle(self, x, b, nu_pre=1, nu_post=1, kind="V", level=0):
        """Apply one cycle in place to ``x``; returns ``x``."""
        if kind not in ("V", "W"):
            raise ValueError(f"unknown cycle kind {kind!r}")
        H = self.H
        if level == len(H.levels) - 1:
            x[:] = self.coarse(b)
            return x
        L = H.levels[level]
        sm = self.smoothers[level]
        sm(x, b, sweeps=nu_pre)
        r = b - spmv(L.A, x)
        rc = spmv(L.R, r)
        ec = np.zeros(L.R.n_rows)
        visits = 1 if kind == "V" or level + 1 == len(H.levels) - 1 else 2
        for _ in range(visits):
            self.cycle(ec, rc, nu_pre, nu_post, kind, level + 1)
        x += spmv(L.P, ec)
        sm(x, b, sweeps=nu_post, backward=self._backward_post)
        return x


def cycle(H, x, b, nu_pre=1, nu_post=1, kind="V", relax: RelaxConfig | None = None):
    """One multigrid cycle on ``A_0 x = b``; returns a new vector."""
    x = np.array(x, dtype=float, copy=True)
    return Cycler(H, relax).cycle(x, np.asarray(b, dtype=float), nu_pre, nu_post, kind)


def solve(H, b, x0=None, tol=1e-8, max_iters=100, accel="none", nu=(1, 1), kind="V",
          relax: RelaxConfig | None = None, cycler: Cycler | None = None) -> SolveReport:
    """Solve ``A_0 x = b`` by cycling, or with a cycle-preconditioned Krylov method.

    ``accel='cg'`` runs preconditioned CG and needs a symmetric hierarchy;
    ``accel='gmres'`` runs flexible GMRES with restart length ``max_iters``.
    ``work_units_solve`` counts the work of the multigrid cycles only; Krylov
    vector updates and residual checks go to ``work_units_other``.
    """
    if accel not in ACCEL:
        raise ValueError(f"unknown accel {accel!r}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if accel == "cg" and not H.symmetric:
        raise ValueError("accel='cg' needs a symmetric hierarchy")
    A = H.levels[0].A
    b = np.asarray(b, dtype=float)
    if b.shape[0] != A.n_rows:
        raise ValueError("right-hand side length does not match A")
    x = np.zeros(A.n_rows) if x0 is None else np.array(x0, dtype=float, copy=True)
    cyc = cycler or Cycler(H, relax)
    nu_pre, nu_post = nu
    cyc_led = WorkLedger(max(A.nnz, 1))
    oth_led = WorkLedger(max(A.nnz, 1))

    def precond(r):
        with ledger_scope(cyc_led, "SolveOther"):
            return cyc.cycle(np.zeros_like(r), r, nu_pre, nu_post, kind)

    with ledger_scope(oth_led, "SolveOther"):
        r = b - spmv(A, x)
    bnorm = np.linalg.norm(b)
    r0 = np.linalg.norm(r)
    ref = bnorm if bnorm > 0 else r0
    hist = [r0]
    it, diverged = 0, False
    if r0 == 0 or (ref > 0 and r0 / ref <= tol):
        pass
    elif accel == "none":
        while it < max_iters:
            with ledger_scope(cyc_led, "SolveOther"):
                cyc.cycle(x, b, nu_pre, nu_post, kind)
            it += 1
            with ledger_scope(oth_led, "SolveOther"):
                r = b - spmv(A, x)
            rn = np.linalg.norm(r)
            hist.append(rn)
            if not np.isfinite(rn) or rn > DIVERGENCE * r0:
                diverged = True
                break
            if rn / ref <= tol:
                break
    elif accel == "cg":
        x, it, diverged = _pcg(A, b, x, r, precond, tol * ref, max_iters, hist, oth_led)
    else:
        x, it = _fgmres(A, b, x, r, precond, tol * ref, max_iters, hist, oth_led)
    converged = (not diverged) and ref >= 0 and (hist[-1] <= tol * ref or hist[-1] == 0)
    rho = convergence_factor(hist) if len(hist) >= 2 else 0.0
    return SolveReport(
        residual_history=[float(h) for h in hist],
        iterations=it,
        converged=bool(converged),
        rho=rho,
        chi_oc=operator_complexity(H),
        chi_cc=cycle_complexity(H, nu_pre, nu_post),
        work_units_solve=cyc_led.total(),
        work_units_other=oth_led.total(),
        diverged=diverged,
        x=x,
    )


def _pcg(A, b, x, r, precond, atol, max_iters, hist, led):
    z = precond(r)
    p = z.copy()
    rz = r @ z
    r0 = hist[0]
    it = 0
    while it < max_iters:
        with ledger_scope(led, "SolveOther"):
            Ap = spmv(A, p)
            charge(6 * A.n_rows)
        pAp = p @ Ap
        if not pAp > 0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        rn = np.linalg.norm(r)
        hist.append(rn)
        if not np.isfinite(rn) or rn > DIVERGENCE * r0:
            return x, it, True
        if rn <= atol:
            break
        z = precond(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, it, False


def _fgmres(A, b, x, r, precond, atol, max_iters, hist, led):
    n = A.n_rows
    m = max_iters
    V = np.zeros((m + 1, n))
    Z = np.zeros((m, n))
    Hm = np.zeros((m + 1, m))
    cs, sn = np.zeros(m), np.zeros(m)
    beta = np.linalg.norm(r)
    g = np.zeros(m + 1)
    g[0] = beta
    V[0] = r / beta
    k = 0
    for j in range(m):
        Z[j] = precond(V[j])
        with ledger_scope(led, "SolveOther"):
            w = spmv(A, Z[j])
            charge(2 * (j + 2) * n)
        for i in range(j + 1):
            Hm[i, j] = V[i] @ w
            w -= Hm[i, j] * V[i]
        Hm[j + 1, j] = np.linalg.norm(w)
        if Hm[j + 1, j] > 0:
            V[j + 1] = w / Hm[j + 1, j]
        for i in range(j):
            t = cs[i] * Hm[i, j] + sn[i] * Hm[i + 1, j]
            Hm[i + 1, j] = -sn[i] * Hm[i, j] + cs[i] * Hm[i + 1, j]
            Hm[i, j] = t
        den = np.hypot(Hm[j, j], Hm[j + 1, j])
        if den == 0:
            break
        cs[j], sn[j] = Hm[j, j] / den, Hm[j + 1, j] / den
        Hm[j, j] = den
        Hm[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        k = j + 1
        hist.append(abs(g[j + 1]))
        if abs(g[j + 1]) <= atol or Hm[j + 1, j] == 0 and abs(g[j + 1]) == 0:
            break
    if k:
        y = sla.solve_triangular(Hm[:k, :k], g[:k])
        x = x + Z[:k].T @ y
        with ledger_scope(led, "SolveOther"):
            hist[-1] = float(np.linalg.norm(b - spmv(A, x)))
    return x, k
