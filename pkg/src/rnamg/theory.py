"""Dense small-scale oracles for interpolation quality and two-grid behaviour.

Everything here works on dense numpy arrays and is meant for problems of a
few hundred unknowns at most.  The oracles are independent of the sparse
setup code so they can be used to check it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla

DENSE_MAX = 2000


def _dense(M) -> np.ndarray:
    if hasattr(M, "toarray"):
        M = M.toarray()
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError("expected a matrix")
    if max(M.shape) > DENSE_MAX:
        raise ValueError(f"dense oracles are limited to n <= {DENSE_MAX}")
    return M


def _spd(A) -> np.ndarray:
    A = _dense(A)
    if A.shape[0] != A.shape[1] or not np.allclose(A, A.T, rtol=0, atol=1e-12 * abs(A).max()):
        raise ValueError("matrix is not symmetric")
    try:
        sla.cholesky(A)
    except sla.LinAlgError:
        raise ValueError("matrix is not positive definite") from None
    return A


@dataclass(frozen=True)
class CFPartition:
    """Disjoint split of ``0..n-1`` into C-points and F-points."""

    c_points: np.ndarray
    f_points: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c_points, dtype=np.int64).ravel()
        f = np.asarray(self.f_points, dtype=np.int64).ravel()
        n = c.size + f.size
        seen = np.zeros(n, dtype=int)
        allidx = np.concatenate([c, f])
        if allidx.size and (allidx.min() < 0 or allidx.max() >= n):
            raise ValueError("C/F indices must cover 0..n-1 exactly")
        np.add.at(seen, allidx, 1)
        if np.any(seen != 1):
            raise ValueError("C and F points must be disjoint and cover 0..n-1")
        object.__setattr__(self, "c_points", c)
        object.__setattr__(self, "f_points", f)

    @property
    def n(self) -> int:
        return self.c_points.size + self.f_points.size

    @property
    def n_c(self) -> int:
        return self.c_points.size

    @classmethod
    def from_c_points(cls, c_points, n: int) -> "CFPartition":
        c = np.asarray(c_points, dtype=np.int64).ravel()
        if c.size and (c.min() < 0 or c.max() >= n):
            raise ValueError("C-point index out of range")
        mask = np.ones(n, dtype=bool)
        mask[c] = False
        return cls(c, np.flatnonzero(mask))

    @classmethod
    def random(cls, n: int, rng, fraction=0.35) -> "CFPartition":
        n_c = min(n - 1, max(1, int(round(fraction * n))))
        c = np.sort(rng.choice(n, size=n_c, replace=False))
        return cls.from_c_points(c, n)

    def blocks(self, A):
        """``(A_ff, A_fc, A_cf, A_cc)``."""
        A = _dense(A)
        f, c = self.f_points, self.c_points
        return A[np.ix_(f, f)], A[np.ix_(f, c)], A[np.ix_(c, f)], A[np.ix_(c, c)]

    def assemble(self, W) -> np.ndarray:
        """``P = [W; I]`` with rows returned to the natural ordering."""
        W = np.asarray(W, dtype=float).reshape(self.f_points.size, self.n_c)
        P = np.zeros((self.n, self.n_c))
        P[self.f_points] = W
        P[self.c_points, np.arange(self.n_c)] = 1.0
        return P

    def restrict(self, u) -> np.ndarray:
        return np.asarray(u)[self.c_points]


class IdealInterpolation(NamedTuple):
    P: np.ndarray
    W: np.ndarray
    schur: np.ndarray


def ideal_interpolation(A, part: CFPartition) -> IdealInterpolation:
    """``W = -A_ff^-1 A_fc`` and the Schur complement ``A_cc - A_cf A_ff^-1 A_fc``.

    ``P`` has its rows in the natural (unpermuted) ordering; columns follow
    ``part.c_points``.  Works for any matrix with nonsingular ``A_ff``.
    """
    Aff, Afc, Acf, Acc = part.blocks(A)
    if Aff.size:
        try:
            lu = sla.lu_factor(Aff, check_finite=False)
        except (sla.LinAlgError, ValueError):
            raise ValueError("A_ff is singular") from None
        d = np.abs(np.diag(lu[0]))
        if d.min() <= 1e-14 * max(d.max(), 1e-300):
            raise ValueError("A_ff is singular")
        W = -sla.lu_solve(lu, Afc)
    else:
        W = np.zeros((0, part.n_c))
    S = Acc + Acf @ W
    return IdealInterpolation(part.assemble(W), W, S)


def _injection_error(P, part: CFPartition) -> np.ndarray:
    # (I - P Pi_c), Pi_c picking the C entries of u
    P = _dense(P)
    E = np.eye(part.n)
    E[:, part.c_points] -= P
    return E


def wap_measure(A, P, part: CFPartition) -> float:
    """``max_u ||u - P u_c||^2 / ||u||_A^2`` for SPD A."""
    A = _spd(A)
    E = _injection_error(P, part)
    return float(sla.eigh(E.T @ E, A, eigvals_only=True)[-1])


def sap_measure(A, P, part: CFPartition) -> float:
    """``max_u ||u - P u_c||_A^2 / ||A u||^2`` for SPD A."""
    A = _spd(A)
    E = _injection_error(P, part)
    return float(sla.eigh(E.T @ A @ E, A @ A, eigvals_only=True)[-1])


def sap_ideal_closed_form(A, part: CFPartition) -> np.ndarray:
    """F-rows of the SAP-optimal interpolation from the block formula.

    ``W = -(A_ff^2 + A_fc A_cf)^-1 (A_ff A_fc + A_fc A_cc)``, i.e. ideal
    interpolation for ``A^2``.
    """
    Aff, Afc, Acf, Acc = part.blocks(A)
    return -np.linalg.solve(Aff @ Aff + Afc @ Acf, Aff @ Afc + Afc @ Acc)


def sap_minimizer(A, part: CFPartition) -> np.ndarray:
    """F-rows of ``[W; I]`` minimizing the SAP quotient, found numerically.

    The max-quotient is replaced by its trace (Frobenius) form
    ``||A^1/2 (I - P Pi_c) A^-1||_F``, which is a linear least-squares
    problem in W with a unique minimizer.  It is solved through a symmetric
    square root of ``A^-2``, without using the block formula.
    """
    A = _spd(A)
    lam, V = np.linalg.eigh(A)
    L = (V / lam) @ V.T  # A^-1, a square root of A^-2
    Lf, Lc = L[part.f_points], L[part.c_points]
    # min_W ||Lf - W Lc||_F
    Wt, *_ = np.linalg.lstsq(Lc.T, Lf.T, rcond=None)
    return Wt.T


def optimal_wap_constant(A, P) -> float:
    """``max_u min_w ||u - P w||^2 / ||u||_A^2`` (l2-orthogonal projection)."""
    A = _spd(A)
    P = _dense(P)
    Q, _ = np.linalg.qr(P)
    E = np.eye(A.shape[0]) - Q @ Q.T
    return float(sla.eigh(E, A, eigvals_only=True)[-1])


def optimal_sap_constant(A, P) -> float:
    """``max_u min_w ||u - P w||_A^2 / ||A u||^2`` (A-orthogonal projection)."""
    A = _spd(A)
    P = _dense(P)
    E = np.eye(A.shape[0]) - P @ np.linalg.solve(P.T @ A @ P, P.T @ A)
    M = E.T @ A @ E
    return float(sla.eigh((M + M.T) / 2, A @ A, eigvals_only=True)[-1])


def jacobi_propagator(A, omega=2.0 / 3.0) -> np.ndarray:
    A = _dense(A)
    return np.eye(A.shape[0]) - omega * A / np.diag(A)[:, None]


def gauss_seidel_propagator(A, backward=False) -> np.ndarray:
    A = _dense(A)
    M = np.triu(A) if backward else np.tril(A)
    return np.eye(A.shape[0]) - np.linalg.solve(M, A)


def two_grid_operator(A, P, G=None, nu=(1, 1), R=None, G_post=None) -> np.ndarray:
    """Error propagator ``G_post^nu2 (I - P (RAP)^-1 R A) G^nu1``.

    ``R`` defaults to ``P^T`` and ``G_post`` to ``G``.
    """
    A = _dense(A)
    P = _dense(P)
    R = P.T if R is None else _dense(R)
    n = A.shape[0]
    Ac = R @ A @ P
    try:
        lu = sla.lu_factor(Ac, check_finite=False)
    except (sla.LinAlgError, ValueError):
        raise ValueError("coarse operator RAP is singular") from None
    d = np.abs(np.diag(lu[0]))
    if d.size and d.min() <= 1e-14 * max(d.max(), 1e-300):
        raise ValueError("coarse operator RAP is singular")
    E = np.eye(n) - P @ sla.lu_solve(lu, R @ A)
    if G is not None:
        G = _dense(G)
        Gp = G if G_post is None else _dense(G_post)
        E = np.linalg.matrix_power(Gp, nu[1]) @ E @ np.linalg.matrix_power(G, nu[0])
    return E


def two_grid_error_norm(A, P, G=None, nu=(1, 1), G_post=None) -> float:
    """``||E_TG||_A`` for SPD A with ``R = P^T``."""
    A = _spd(A)
    E = two_grid_operator(A, P, G, nu, G_post=G_post)
    lam, V = np.linalg.eigh(A)
    s = np.sqrt(lam)
    return float(np.linalg.norm((V * s) @ V.T @ E @ (V / s) @ V.T, 2))


def constraint_error(P, B, rcond=1e-12) -> np.ndarray:
    """Part of B outside range(P): ``(I - P P^+) B``."""
    P = _dense(P)
    B = np.asarray(getattr(B, "vectors", B), dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    return B - P @ (np.linalg.pinv(P, rcond=rcond) @ B)


def verify_energymin_equivalence(A, part: CFPartition, pattern, tol=1e-8) -> dict:
    """Compare two characterizations of pattern-restricted interpolation.

    ``pattern[l]`` lists the F-points (natural indices) allowed in column
    ``l``.  Each column is computed (a) by minimizing its A-energy over the
    pattern and (b) by minimizing its A-distance to the ideal column; both
    are dense solves.  Columns whose restricted system is singular are
    reported as degenerate.
    """
    A = _spd(A)
    if len(pattern) != part.n_c:
        raise ValueError("need one pattern entry per C-point")
    fset = np.zeros(part.n, dtype=bool)
    fset[part.f_points] = True
    Pid = ideal_interpolation(A, part).P
    Lt = sla.cholesky(A)  # A = Lt^T Lt, ||x||_A = ||Lt x||
    worst = 0.0
    degenerate, columns = [], []
    for l, J in enumerate(pattern):
        J = np.unique(np.asarray(J, dtype=np.int64))
        if J.size and not np.all(fset[J]):
            raise ValueError(f"pattern of column {l} contains C-points")
        c = part.c_points[l]
        if J.size == 0:
            columns.append(0.0)
            continue
        AJJ = A[np.ix_(J, J)]
        if np.linalg.cond(AJJ) > 1e14:
            degenerate.append(l)
            continue
        w_energy = -np.linalg.solve(AJJ, A[J, c])
        # distance form: min_w || Lt (E_J w + e_c - q) ||
        q = Pid[:, l].copy()
        q[c] -= 1.0
        w_dist, *_ = np.linalg.lstsq(Lt[:, J], Lt @ q, rcond=None)
        gap = float(np.abs(w_energy - w_dist).max() / max(1.0, np.abs(w_energy).max()))
        columns.append(gap)
        worst = max(worst, gap)
    return {
        "passed": bool(worst <= tol),
        "max_discrepancy": worst,
        "column_discrepancy": columns,
        "degenerate_columns": degenerate,
        "tol": tol,
    }


class AsymptoticFit(NamedTuple):
    rho_bar: float
    a: float
    residual: float


def asymptotic_fit(h, rho, q: int = 1) -> AsymptoticFit:
    """Fit ``rho = rho_bar (1 - a h^q)`` through ``-log rho ~ -log rho_bar + a h^q``.

    A least-squares line is fitted to all samples given (pass the smallest
    step sizes only if that is what should be fitted).  ``residual`` is the
    largest relative misfit of the line in ``-log rho``.
    """
    h = np.asarray(h, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if h.shape != rho.shape or h.size < 3:
        raise ValueError("need at least three (h, rho) samples")
    if np.any(h <= 0):
        raise ValueError("step sizes must be positive")
    if np.any(rho <= 0) or np.any(rho >= 1):
        raise ValueError("convergence factors must lie in (0, 1)")
    x = h**q
    y = -np.log(rho)
    a, c = np.polyfit(x, y, 1)
    fit = c + a * x
    resid = float(np.max(np.abs(fit - y) / np.abs(y)))
    return AsymptoticFit(float(math.exp(-c)), float(a), resid)


def _sqrt_ata(A):
    # (A^T A)^(1/4) and its inverse, from the SVD of A
    _, s, Vt = np.linalg.svd(A)
    if s.min() <= 1e-14 * s.max():
        raise ValueError("matrix is singular")
    r = np.sqrt(s)
    return (Vt.T * r) @ Vt, (Vt.T / r) @ Vt


def sqrt_ata_norm(A, E) -> float:
    """Operator norm of E in the ``sqrt(A^T A)`` inner product."""
    A = _dense(A)
    F, Finv = _sqrt_ata(A)
    return float(np.linalg.norm(F @ _dense(E) @ Finv, 2))


def stability_constant(A, P, R) -> float:
    """``||P (RAP)^-1 R A||`` in the ``sqrt(A^T A)`` norm (1 for A-orthogonal projections)."""
    A = _dense(A)
    P, R = _dense(P), _dense(R)
    C = P @ np.linalg.solve(R @ A @ P, R @ A)
    return sqrt_ata_norm(A, C)


def ideal_pair_nonsymmetric(A, part: CFPartition):
    """``P = P_ideal(A^T A)`` and ``R = P_ideal(A A^T)^T``."""
    A = _dense(A)
    P = ideal_interpolation(A.T @ A, part).P
    R = ideal_interpolation(A @ A.T, part).P.T
    return P, R


# -- suite -----------------------------------------------------------------

def random_spd(n, rng, density=0.3, shift=0.1) -> np.ndarray:
    """Random sparse-ish SPD matrix with a modest condition number."""
    X = rng.standard_normal((n, n)) * (rng.random((n, n)) < density)
    A = X @ X.T + shift * n * np.eye(n)
    return (A + A.T) / 2


def random_pattern(part: CFPartition, rng, density=0.4):
    pattern = []
    for _ in range(part.n_c):
        keep = rng.random(part.f_points.size) < density
        pattern.append(part.f_points[keep])
    return pattern


def check_energymin_equivalence(n_instances=50, seed=0, max_n=40) -> dict:
    rng = np.random.default_rng(seed)
    worst, failed = 0.0, 0
    for _ in range(n_instances):
        n = int(rng.integers(6, max_n + 1))
        A = random_spd(n, rng)
        part = CFPartition.random(n, rng, fraction=rng.uniform(0.2, 0.5))
        rep = verify_energymin_equivalence(A, part, random_pattern(part, rng, rng.uniform(0.2, 0.8)))
        worst = max(worst, rep["max_discrepancy"])
        failed += not rep["passed"]
    return {"passed": failed == 0, "instances": n_instances, "max_discrepancy": worst}


def check_sap_ideal(n_instances=20, seed=1, max_n=20) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        n = int(rng.integers(5, max_n + 1))
        A = random_spd(n, rng)
        part = CFPartition.random(n, rng)
        W_num = sap_minimizer(A, part)
        W_cf = sap_ideal_closed_form(A, part)
        worst = max(worst, float(np.abs(W_num - W_cf).max() / max(1.0, np.abs(W_cf).max())))
    return {"passed": worst <= 1e-6, "instances": n_instances, "max_discrepancy": worst}


def check_wap_sap_bounds(n_instances=20, seed=2, max_n=30) -> dict:
    """WAP(A^2) and SAP(A) constants bound each other through the spectrum of A."""
    rng = np.random.default_rng(seed)
    ok = True
    for _ in range(n_instances):
        n = int(rng.integers(5, max_n + 1))
        A = random_spd(n, rng)
        P = rng.standard_normal((n, max(1, n // 3)))
        lam = np.linalg.eigvalsh(A)
        wap2 = optimal_wap_constant(A @ A, P)
        sap = optimal_sap_constant(A, P)
        ok &= lam[0] * wap2 <= sap * (1 + 1e-8) and sap <= lam[-1] * wap2 * (1 + 1e-8)
    return {"passed": bool(ok), "instances": n_instances}


def check_two_grid_exactness(n_instances=10, seed=3, max_n=40) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        n = int(rng.integers(8, max_n + 1))
        A = random_spd(n, rng)
        part = CFPartition.random(n, rng)
        P = part.assemble(rng.standard_normal((part.f_points.size, part.n_c)))
        e = P @ rng.standard_normal(part.n_c)
        e1 = two_grid_operator(A, P, nu=(0, 0)) @ e
        worst = max(worst, float(np.linalg.norm(e1) / np.linalg.norm(e)))
    return {"passed": worst <= 1e-12, "instances": n_instances, "max_relative_error": worst}


def measure_stability(sizes=(8, 12, 16), eps=0.005) -> dict:
    """Stability constant of the ideal non-symmetric pair on the recirculating flow."""
    from .aggregation import greedy_aggregate
    from .problems import ProblemSpec, generate
    from .strength import StrengthConfig, normalize_strength, strength_of_connection

    out = []
    for n in sizes:
        A = generate(ProblemSpec("recirc_flow", n, eps=eps)).A
        S = normalize_strength(strength_of_connection(A, StrengthConfig("evolution", 3.0)))
        roots = greedy_aggregate(S).roots
        part = CFPartition.from_c_points(np.sort(roots), A.n_rows)
        P, R = ideal_pair_nonsymmetric(A.toarray(), part)
        out.append({"n": n, "h": 1.0 / n, "constant": stability_constant(A.toarray(), P, R)})
    return {"measured": out}


def verify_suite(seed=0) -> dict:
    """Run every oracle check; returns a JSON-serializable report."""
    report = {
        "energymin_equivalence": check_energymin_equivalence(seed=seed),
        "sap_ideal": check_sap_ideal(seed=seed + 1),
        "wap_sap_bounds": check_wap_sap_bounds(seed=seed + 2),
        "two_grid_exactness": check_two_grid_exactness(seed=seed + 3),
        "stability": measure_stability(),
    }
    report["passed"] = all(v.get("passed", True) for v in report.values() if isinstance(v, dict))
    return report


def quick_suite(seed=0) -> dict:
    """Smaller version of :func:`verify_suite` for smoke checks."""
    report = {
        "energymin_equivalence": check_energymin_equivalence(10, seed=seed, max_n=20),
        "sap_ideal": check_sap_ideal(5, seed=seed + 1, max_n=12),
        "wap_sap_bounds": check_wap_sap_bounds(5, seed=seed + 2, max_n=12),
        "two_grid_exactness": check_two_grid_exactness(3, seed=seed + 3, max_n=20),
    }
    report["passed"] = all(v["passed"] for v in report.values())
    return report


def report_json(report: dict, **kw) -> str:
    return json.dumps(report, indent=kw.pop("indent", 2), sort_keys=True, **kw)
