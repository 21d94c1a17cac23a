import sys

import numpy as np
import pytest
import scipy.sparse as sp

from rnamg import SparseMatrix


def tridiag(n, lo=-1.0, d=2.0, hi=-1.0) -> SparseMatrix:
    return SparseMatrix.from_scipy(sp.diags([lo * np.ones(n - 1), d * np.ones(n), hi * np.ones(n - 1)],
                                            [-1, 0, 1], format="csr"))


def laplace2d(n) -> SparseMatrix:
    L = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1])
    I = sp.identity(n)
    return SparseMatrix.from_scipy(sp.kron(I, L) + sp.kron(L, I))


def random_sparse(rng, n_rows, n_cols, density=0.3) -> SparseMatrix:
    M = sp.random(n_rows, n_cols, density=density, random_state=rng,
                  data_rvs=lambda k: rng.uniform(-1, 1, k))
    return SparseMatrix.from_scipy(M)


def random_spd_sparse(rng, n, density=0.2) -> SparseMatrix:
    M = sp.random(n, n, density=density, random_state=rng).toarray()
    A = M @ M.T + n * 0.1 * np.eye(n)
    A[np.abs(A) < 1e-3] = 0.0
    A = (A + A.T) / 2
    return SparseMatrix.from_dense(A)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        passed, detail = results[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {number:2d}: {detail}")
