"""Deterministic model problems on structured grids.

Unless stated otherwise ``n`` is the number of interior nodes per dimension
on the unit square/cube, ``h = 1/(n+1)``, and Dirichlet nodes are eliminated
from the system.  Finite-difference kinds are scaled by ``h^-2``; finite
element kinds are plain stiffness matrices.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from .sparse import SparseMatrix

KINDS = ("poisson1d", "poisson2d", "poisson3d", "aniso3d", "rotated_aniso2d",
         "recirc_flow", "upwind_transport", "elasticity2d")
NONSYMMETRIC = ("recirc_flow", "upwind_transport")

_DEFAULT_EPS = {"aniso3d": 0.001, "rotated_aniso2d": 0.001, "recirc_flow": 0.005}


@dataclass(frozen=True)
class ProblemSpec:
    """Problem parameters.

    ``eps`` is the anisotropy (aniso3d, rotated_aniso2d) or the diffusion
    coefficient (recirc_flow); None picks the kind's default.  For
    elasticity2d ``n`` is the number of cells across the beam and the beam
    is ``aspect`` times longer.
    """

    kind: str
    n: int
    eps: float | None = None
    psi: float = 0.0
    nu: float = 0.3
    E: float = 1.0
    flow: str = "angle"
    angle: float = 2 * math.pi / 7
    material: str = "constant"
    aspect: int = 8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.eps is not None and self.eps < 0:
            raise ValueError("eps must be non-negative")
        if not 0.0 <= self.psi < math.pi:
            raise ValueError("psi must lie in [0, pi)")
        if not 0.0 <= self.nu < 0.5:
            raise ValueError("nu must lie in [0, 0.5)")
        if self.E <= 0:
            raise ValueError("E must be positive")
        if self.aspect < 1:
            raise ValueError("aspect must be >= 1")
        if self.kind == "recirc_flow" and self.epsilon == 0:
            raise ValueError("recirc_flow needs eps > 0")
        if self.kind == "upwind_transport":
            flow_fields(self.flow, self.angle)
            materials(self.material)

    @property
    def epsilon(self) -> float:
        return _DEFAULT_EPS.get(self.kind, 0.0) if self.eps is None else float(self.eps)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Problem:
    spec: ProblemSpec
    A: SparseMatrix
    B: np.ndarray
    B_hat: np.ndarray | None
    rhs: np.ndarray

    def __iter__(self):
        return iter((self.A, self.B, self.B_hat))


# -- coefficient fields -----------------------------------------------------

def flow_fields(name: str, angle: float = 2 * math.pi / 7):
    """Velocity fields ``b(x, y)`` returning a pair of arrays."""
    if name == "angle":
        c, s = math.cos(angle), math.sin(angle)
        return lambda x, y: (np.full_like(np.asarray(x, float), c),
                             np.full_like(np.asarray(y, float), s))
    if name == "yx":
        return lambda x, y: (np.asarray(y, float), np.asarray(x, float))
    if name == "ycos":
        return lambda x, y: (np.asarray(y, float), np.cos(np.pi * np.asarray(x, float) / 2))
    if name == "double_glazing":
        return lambda x, y: (2 * np.asarray(y, float) * (1 - np.asarray(x, float) ** 2),
                             -2 * np.asarray(x, float) * (1 - np.asarray(y, float) ** 2))
    raise ValueError(f"unknown flow field {name!r}")


def materials(name: str):
    """Reaction coefficients ``c(x, y)``: constant, sns (square in square) or split."""
    if name == "constant":
        return lambda x, y: np.ones(np.broadcast(np.asarray(x), np.asarray(y)).shape)
    if name == "sns":
        def c(x, y):
            x, y = np.asarray(x, float), np.asarray(y, float)
            inside = (x >= 0.25) & (x <= 0.75) & (y >= 0.25) & (y <= 0.75)
            return np.where(inside, 1e4, 1e-4)
        return c
    if name == "split":
        return lambda x, y: np.where(np.asarray(x, float) < 0.5, 1e-4, 1e4) + 0 * np.asarray(y, float)
    raise ValueError(f"unknown material {name!r}")


def half_grid_reynolds(b_magnitude: float, h: float, eps: float) -> float:
    """Cell Reynolds number ``|b| h / (2 eps)``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return b_magnitude * h / (2.0 * eps)


# -- finite differences ---------------------------------------------------------

def _lap1d(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


def _fd(n, coeffs):
    h2 = (n + 1) ** 2
    L, I = _lap1d(n), sp.identity(n, format="csr")
    if len(coeffs) == 1:
        return coeffs[0] * L * h2
    if len(coeffs) == 2:
        return (coeffs[0] * sp.kron(I, L) + coeffs[1] * sp.kron(L, I)) * h2
    return (coeffs[0] * sp.kron(I, sp.kron(I, L)) + coeffs[1] * sp.kron(I, sp.kron(L, I))
            + coeffs[2] * sp.kron(L, sp.kron(I, I))) * h2


# -- bilinear quadrilaterals ------------------------------------------------------

def bilinear_element(K) -> np.ndarray:
    """Stiffness of ``-div(K grad u)`` on a square Q1 element (size independent).

    Local node order is (0,0), (1,0), (0,1), (1,1) on the reference square.
    """
    K = np.asarray(K, dtype=float)
    g = np.array([0.5 - 0.5 / math.sqrt(3), 0.5 + 0.5 / math.sqrt(3)])
    Ke = np.zeros((4, 4))
    for s in g:
        for t in g:
            # gradients of (1-s)(1-t), s(1-t), (1-s)t, st
            G = np.array([[-(1 - t), -(1 - s)], [1 - t, -s], [-t, 1 - s], [t, s]])
            Ke += 0.25 * G @ K @ G.T
    return Ke


def rotated_tensor(eps: float, psi: float) -> np.ndarray:
    c, s = math.cos(psi), math.sin(psi)
    Q = np.array([[c, -s], [s, c]])
    return Q.T @ np.diag([1.0, eps]) @ Q


def _interior_map(nn, n):
    # node (i, j) on an (nn x nn) grid with boundary -> interior index or -1
    idx = -np.ones((nn, nn), dtype=np.int64)
    idx[1:-1, 1:-1] = np.arange(n * n).reshape(n, n)
    return idx  # indexed [j, i]


def _rotated_aniso(n, eps, psi):
    Ke = bilinear_element(rotated_tensor(eps, psi))
    nn = n + 2
    idx = _interior_map(nn, n)
    j, i = np.meshgrid(np.arange(nn - 1), np.arange(nn - 1), indexing="ij")
    local = np.stack([idx[j, i], idx[j, i + 1], idx[j + 1, i], idx[j + 1, i + 1]], -1).reshape(-1, 4)
    return _assemble(local, np.broadcast_to(Ke, (local.shape[0], 4, 4)), n * n)


def _assemble(local, Ke, ndof):
    r = np.repeat(local, local.shape[1], axis=1).ravel()
    c = np.tile(local, (1, local.shape[1])).ravel()
    v = np.asarray(Ke).reshape(local.shape[0], -1).ravel()
    keep = (r >= 0) & (c >= 0)
    return sp.coo_matrix((v[keep], (r[keep], c[keep])), shape=(ndof, ndof)).tocsr()


# -- linear triangles ----------------------------------------------------------------

def _triangles(nx, ny):
    """Right-triangle split of an nx x ny cell grid; node id = i + (nx+1) j."""
    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    n00 = (i + (nx + 1) * j).ravel()
    n10, n01, n11 = n00 + 1, n00 + nx + 1, n00 + nx + 2
    lower = np.stack([n00, n10, n11], -1)
    upper = np.stack([n00, n11, n01], -1)
    return np.concatenate([lower, upper])


def _p1_geometry(xy, tri):
    p = xy[tri]  # (nt, 3, 2)
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    area = 0.5 * np.abs(det)
    # gradients of barycentric coordinates
    inv = np.empty((tri.shape[0], 2, 2))
    inv[:, 0, 0], inv[:, 0, 1] = d2[:, 1] / det, -d2[:, 0] / det
    inv[:, 1, 0], inv[:, 1, 1] = -d1[:, 1] / det, d1[:, 0] / det
    ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    grads = np.einsum("ka,tab->tkb", ref, inv)
    return area, grads, p.mean(axis=1)


def _recirc(n, eps):
    nn = n + 2
    h = 1.0 / (n + 1)
    g = np.arange(nn) * h
    X, Y = np.meshgrid(g, g, indexing="xy")
    xy = np.stack([X.ravel(), Y.ravel()], -1)
    tri = _triangles(nn - 1, nn - 1)
    area, grads, cen = _p1_geometry(xy, tri)
    bx, by = flow_fields("double_glazing")(cen[:, 0], cen[:, 1])
    diff = eps * area[:, None, None] * np.einsum("tka,tla->tkl", grads, grads)
    bgrad = bx[:, None] * grads[:, :, 0] + by[:, None] * grads[:, :, 1]  # (nt, trial)
    conv = (area / 3.0)[:, None, None] * np.broadcast_to(bgrad[:, None, :], diff.shape)
    Ke = diff + conv
    full = _assemble(tri, Ke, nn * nn)
    ii, jj = np.divmod(np.arange(nn * nn), nn)  # row j=ii, column i=jj
    interior = (ii > 0) & (ii < nn - 1) & (jj > 0) & (jj < nn - 1)
    east = (jj == nn - 1) & (ii > 0) & (ii < nn - 1)
    A = full[interior][:, interior]
    rhs = -np.asarray(full[interior][:, east].sum(axis=1)).ravel()
    return A, rhs


def _upwind(n, flow, angle, material):
    h = 1.0 / n
    g = np.arange(1, n + 1) * h
    X, Y = np.meshgrid(g, g, indexing="xy")
    x, y = X.ravel(), Y.ravel()
    bx, by = flow_fields(flow, angle)(x, y)
    bx, by = np.broadcast_to(bx, x.shape), np.broadcast_to(by, x.shape)
    c = materials(material)(x, y)
    idx = np.arange(n * n)
    i, j = idx % n, idx // n
    rows = [idx]
    cols = [idx]
    vals = [(np.abs(bx) + np.abs(by)) / h + c]
    for comp, pos, step, coord in ((bx, True, -1, i), (bx, False, 1, i),
                                   (by, True, -n, j), (by, False, n, j)):
        sel = comp > 0 if pos else comp < 0
        nb = coord + (-1 if pos else 1)
        ok = sel & (nb >= 0) & (nb < n)
        rows.append(idx[ok])
        cols.append(idx[ok] + step)
        vals.append(-np.abs(comp[ok]) / h)
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n * n, n * n)).tocsr()
    return A


# -- plane-strain elasticity -------------------------------------------------------

def lame(E: float, nu: float):
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    return lam, mu


def elasticity_stiffness(nx: int, ny: int, E=1.0, nu=0.3, length=8.0, height=1.0):
    """Unconstrained P1 plane-strain stiffness with interleaved (u, v) DOFs.

    Returns ``(K, xy)`` where xy are node coordinates, node id ``i + (nx+1) j``.
    """
    gx = np.linspace(0.0, length, nx + 1)
    gy = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(gx, gy, indexing="xy")
    xy = np.stack([X.ravel(), Y.ravel()], -1)
    tri = _triangles(nx, ny)
    area, grads, _ = _p1_geometry(xy, tri)
    lam, mu = lame(E, nu)
    D = np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])
    nt = tri.shape[0]
    Bm = np.zeros((nt, 3, 6))
    Bm[:, 0, 0::2] = grads[:, :, 0]
    Bm[:, 1, 1::2] = grads[:, :, 1]
    Bm[:, 2, 0::2] = grads[:, :, 1]
    Bm[:, 2, 1::2] = grads[:, :, 0]
    Ke = area[:, None, None] * np.einsum("tai,ab,tbj->tij", Bm, D, Bm)
    dofs = np.stack([2 * tri, 2 * tri + 1], -1).reshape(nt, 6)
    return _assemble(dofs, Ke, 2 * xy.shape[0]), xy


def rigid_body_modes(xy, center=None) -> np.ndarray:
    """x/y translations and the in-plane rotation about ``center``, interleaved."""
    xy = np.asarray(xy, dtype=float)
    c = xy.mean(axis=0) if center is None else np.asarray(center, dtype=float)
    nn = xy.shape[0]
    B = np.zeros((2 * nn, 3))
    B[0::2, 0] = 1.0
    B[1::2, 1] = 1.0
    B[0::2, 2] = -(xy[:, 1] - c[1])
    B[1::2, 2] = xy[:, 0] - c[0]
    return B


def _elasticity(spec):
    ny = spec.n
    nx = spec.aspect * ny
    K, xy = elasticity_stiffness(nx, ny, spec.E, spec.nu, length=float(spec.aspect), height=1.0)
    free_nodes = np.flatnonzero(~np.isclose(xy[:, 0], float(spec.aspect)))
    free = np.stack([2 * free_nodes, 2 * free_nodes + 1], -1).ravel()
    A = K[free][:, free]
    B = rigid_body_modes(xy, center=(spec.aspect / 2.0, 0.5))[free]
    return A, B


# -- driver ------------------------------------------------------------------------

def generate(spec: ProblemSpec) -> Problem:
    """Build the system matrix, candidates and a boundary-consistent right-hand side."""
    k, n, eps = spec.kind, spec.n, spec.epsilon
    rhs = None
    block = 1
    if k == "poisson1d":
        A = _fd(n, (1.0,))
    elif k == "poisson2d":
        A = _fd(n, (1.0, 1.0))
    elif k == "poisson3d":
        A = _fd(n, (1.0, 1.0, 1.0))
    elif k == "aniso3d":
        A = _fd(n, (1.0, 1.0, eps))
    elif k == "rotated_aniso2d":
        A = _rotated_aniso(n, eps, spec.psi)
    elif k == "recirc_flow":
        A, rhs = _recirc(n, eps)
    elif k == "upwind_transport":
        A = _upwind(n, spec.flow, spec.angle, spec.material)
    else:
        A, B = _elasticity(spec)
        block = 2
    M = SparseMatrix.from_scipy(A, block)
    if k != "elasticity2d":
        B = np.ones((M.n_rows, 1))
    B_hat = np.ones((M.n_rows, 1)) if k in NONSYMMETRIC else None
    if rhs is None:
        rhs = np.ones(M.n_rows)
    return Problem(spec, M, B, B_hat, rhs)


def export(problem: Problem, stem: str) -> tuple[str, str]:
    """Write ``<stem>.mtx`` and a ``<stem>.json`` sidecar with the spec."""
    from .io import write_matrix

    mtx, side = f"{stem}.mtx", f"{stem}.json"
    write_matrix(mtx, problem.A)
    with open(side, "w") as fh:
        json.dump({"spec": problem.spec.to_dict(), "n": problem.A.n_rows,
                   "nnz": problem.A.nnz, "block_size": problem.A.block_size}, fh, indent=2)
    return mtx, side
