"""Row-wise compiled kernels (numba) shared by the setup and solve phases."""

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def filter_rows(indptr, absval, protect, theta, k, min_keep):
    n = indptr.shape[0] - 1
    keep = np.ones(absval.shape[0], dtype=np.bool_)
    for i in range(n):
        lo, hi = indptr[i], indptr[i + 1]
        cnt = 0
        for q in range(lo, hi):
            if not protect[q]:
                cnt += 1
        if cnt == 0:
            continue
        pos = np.empty(cnt, dtype=np.int64)
        c = 0
        for q in range(lo, hi):
            if not protect[q]:
                pos[c] = q
                c += 1
        vals = absval[pos]
        order = np.argsort(-vals, kind="mergesort")
        thr = 0.0
        if k > 0 and cnt >= k:
            thr = vals[order[k - 1]]
        if theta >= 0.0:
            t = theta * vals[order[0]]
            if t > thr:
                thr = t
        for r in range(cnt):
            q = pos[order[r]]
            if absval[q] < thr and r >= min_keep:
                keep[q] = False
    return keep


@njit(**_JIT)
def pattern_product(a_ptr, a_idx, a_val, p_ptr, p_idx, p_val, n_ptr, n_idx, n_cols):
    """Entries of ``A @ P`` restricted to the structure ``(n_ptr, n_idx)``."""
    nrows = n_ptr.shape[0] - 1
    out = np.zeros(n_idx.shape[0])
    marker = np.full(n_cols, -1, dtype=np.int64)
    for i in range(nrows):
        for q in range(n_ptr[i], n_ptr[i + 1]):
            marker[n_idx[q]] = q
        for a in range(a_ptr[i], a_ptr[i + 1]):
            kk = a_idx[a]
            v = a_val[a]
            for b in range(p_ptr[kk], p_ptr[kk + 1]):
                q = marker[p_idx[b]]
                if q >= 0:
                    out[q] += v * p_val[b]
        for q in range(n_ptr[i], n_ptr[i + 1]):
            marker[n_idx[q]] = -1
    return out


@njit(**_JIT)
def pattern_product_ops(a_ptr, a_idx, p_ptr):
    ops = 0
    for a in range(a_idx.shape[0]):
        kk = a_idx[a]
        ops += p_ptr[kk + 1] - p_ptr[kk]
    return ops


# -- aggregation ------------------------------------------------------------

@njit(**_JIT)
def greedy_aggregate(indptr, indices, values):
    n = indptr.shape[0] - 1
    agg = np.full(n, -1, dtype=np.int64)
    roots = np.empty(n, dtype=np.int64)
    n_agg = 0
    # pass 1: a node whose strong neighbourhood is untouched seeds an aggregate
    for i in range(n):
        if agg[i] >= 0:
            continue
        free = True
        for q in range(indptr[i], indptr[i + 1]):
            j = indices[q]
            if j != i and agg[j] >= 0:
                free = False
                break
        if not free:
            continue
        agg[i] = n_agg
        for q in range(indptr[i], indptr[i + 1]):
            agg[indices[q]] = n_agg
        roots[n_agg] = i
        n_agg += 1
    # pass 2: attach leftovers through their strongest edge (pass-1 state only)
    first = agg.copy()
    for i in range(n):
        if first[i] >= 0:
            continue
        best = -1
        bestv = -1.0
        for q in range(indptr[i], indptr[i + 1]):
            j = indices[q]
            if j == i or first[j] < 0:
                continue
            v = values[q]
            if v > bestv or (v == bestv and first[j] < best):
                bestv = v
                best = first[j]
        agg[i] = best
    # leftovers with no aggregated neighbour become singletons
    for i in range(n):
        if agg[i] < 0:
            agg[i] = n_agg
            roots[n_agg] = i
            n_agg += 1
    return agg, roots[:n_agg].copy()


# -- constrained row updates ------------------------------------------------

@njit(**_JIT)
def row_bases(n_ptr, n_idx, is_root, Bc, tol):
    """Orthonormal basis of span(Bc[cols_i, :]) for every non-root row.

    Returned as an (nnz, k) array aligned with the pattern; columns beyond
    the numerical rank are zero.
    """
    nrows = n_ptr.shape[0] - 1
    k = Bc.shape[1]
    Q = np.zeros((n_idx.shape[0], k))
    for i in range(nrows):
        lo, hi = n_ptr[i], n_ptr[i + 1]
        if is_root[i] or hi == lo:
            continue
        M = np.ascontiguousarray(Bc[n_idx[lo:hi], :])
        U, sv, _ = np.linalg.svd(M, full_matrices=False)
        if sv.shape[0] == 0 or sv[0] <= 0.0:
            continue
        for r in range(sv.shape[0]):
            if sv[r] * sv[r] > tol * sv[0] * sv[0]:
                Q[lo:hi, r] = U[:, r]
    return Q


@njit(**_JIT)
def project_rows(n_ptr, is_root, Q, X):
    """Remove from each row of X its component along span(Bc restricted)."""
    nrows = n_ptr.shape[0] - 1
    k = Q.shape[1]
    out = X.copy()
    for i in range(nrows):
        lo, hi = n_ptr[i], n_ptr[i + 1]
        if is_root[i]:
            for q in range(lo, hi):
                out[q] = 0.0
            continue
        for r in range(k):
            s = 0.0
            for q in range(lo, hi):
                s += X[q] * Q[q, r]
            if s != 0.0:
                for q in range(lo, hi):
                    out[q] -= s * Q[q, r]
    return out


@njit(**_JIT)
def enforce_rows(n_ptr, n_idx, is_root, vals, Bc, B, tol):
    """Minimal-norm row updates so that row_i(P) @ Bc == B[i] on each pattern row.

    Returns the new values and the residual max-norm of every row after the
    update (non-zero only for inconsistent rows).
    """
    nrows = n_ptr.shape[0] - 1
    out = vals.copy()
    resid = np.zeros(nrows)
    for i in range(nrows):
        if is_root[i]:
            continue
        lo, hi = n_ptr[i], n_ptr[i + 1]
        cols = n_idx[lo:hi]
        M = Bc[cols, :]
        t = vals[lo:hi]
        r = B[i, :] - t @ M
        if hi > lo:
            # minimal-norm u with u @ M = r, from the thin SVD of M
            U, sv, Vt = np.linalg.svd(np.ascontiguousarray(M), full_matrices=False)
            u = np.zeros(hi - lo)
            if sv[0] > 0.0:
                for c in range(sv.shape[0]):
                    if sv[c] * sv[c] > tol * sv[0] * sv[0]:
                        u += (np.dot(np.ascontiguousarray(Vt[c, :]), r) / sv[c]) * U[:, c]
            for q in range(lo, hi):
                out[q] = t[q - lo] + u[q - lo]
            r = B[i, :] - out[lo:hi] @ M
        resid[i] = np.max(np.abs(r))
    return out, resid


# -- relaxation ---------------------------------------------------------------

@njit(**_JIT)
def gauss_seidel(indptr, indices, data, x, b, sweeps, direction):
    n = indptr.shape[0] - 1
    for _ in range(sweeps):
        if direction >= 0:
            start, stop, step = 0, n, 1
        else:
            start, stop, step = n - 1, -1, -1
        for i in range(start, stop, step):
            diag = 0.0
            s = b[i]
            for q in range(indptr[i], indptr[i + 1]):
                j = indices[q]
                if j == i:
                    diag = data[q]
                else:
                    s -= data[q] * x[j]
            if diag == 0.0:
                return i
            x[i] = s / diag
    return -1


@njit(**_JIT)
def block_gauss_seidel(indptr, indices, data, x, b, Dinv, m, sweeps, direction):
    nb = (indptr.shape[0] - 1) // m
    r = np.empty(m)
    for _ in range(sweeps):
        if direction >= 0:
            start, stop, step = 0, nb, 1
        else:
            start, stop, step = nb - 1, -1, -1
        for I in range(start, stop, step):
            for a in range(m):
                i = I * m + a
                s = b[i]
                for q in range(indptr[i], indptr[i + 1]):
                    j = indices[q]
                    if j // m != I:
                        s -= data[q] * x[j]
                r[a] = s
            for a in range(m):
                v = 0.0
                for c in range(m):
                    v += Dinv[I, a, c] * r[c]
                x[I * m + a] = v
    return -1


@njit(**_JIT)
def gsne(indptr, indices, data, t_ptr, t_idx, t_val, colnorm2, x, b, sweeps):
    """Gauss-Seidel on A^T A x = A^T b, visiting unknowns in ascending order.

    ``(t_ptr, t_idx, t_val)`` is A^T in CSR (columns of A).
    """
    n = indptr.shape[0] - 1
    r = b.copy()
    for i in range(n):
        for q in range(indptr[i], indptr[i + 1]):
            r[i] -= data[q] * x[indices[q]]
    for _ in range(sweeps):
        for j in range(t_ptr.shape[0] - 1):
            if colnorm2[j] == 0.0:
                return j
            s = 0.0
            for q in range(t_ptr[j], t_ptr[j + 1]):
                s += t_val[q] * r[t_idx[q]]
            delta = s / colnorm2[j]
            x[j] += delta
            for q in range(t_ptr[j], t_ptr[j + 1]):
                r[t_idx[q]] -= delta * t_val[q]
    return -1
