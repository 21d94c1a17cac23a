import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from rnamg import SparseMatrix, StrengthConfig, WorkLedger
from rnamg.complexity import ledger_scope
from rnamg.strength import (amalgamate, classical_strength, evolution_strength,
                            normalize_strength, strength_of_connection, symmetric_strength)

from conftest import random_spd_sparse, tridiag


def offdiag_pattern(S):
    D = S.toarray() != 0
    np.fill_diagonal(D, False)
    return D


def aniso2d(n, eps):
    L = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1])
    I = sp.identity(n)
    # x varies fastest; eps weights the y direction
    return SparseMatrix.from_scipy(sp.kron(I, L) + eps * sp.kron(L, I))


class TestClassical:
    def test_poisson_all_neighbors_strong(self):
        S = classical_strength(tridiag(6), 0.25).toarray()
        for i in range(1, 5):
            assert S[i, i - 1] == 1.0 and S[i, i + 1] == 1.0

    def test_weak_coupling_dropped(self):
        A = SparseMatrix.from_dense([[2.0, -1.0, -0.2], [-1.0, 2.0, 0.0], [-0.2, 0.0, 2.0]])
        S = classical_strength(A, 0.5).toarray()
        assert S[0, 1] == 1.0 and S[0, 2] == 0.0

    def test_positive_couplings_never_strong(self):
        A = SparseMatrix.from_dense([[2.0, 1.0, 0.5], [1.0, 2.0, 1.0], [0.5, 1.0, 2.0]])
        S = classical_strength(A, 0.0)
        assert not offdiag_pattern(S).any()
        assert S.nnz == 3

    def test_bad_theta(self):
        with pytest.raises(ValueError):
            classical_strength(tridiag(3), -0.1)


class TestSymmetric:
    def test_theta_zero_keeps_pattern(self, rng):
        A = random_spd_sparse(rng, 20)
        S = symmetric_strength(A, 0.0)
        assert np.array_equal(S.toarray() != 0, A.toarray() != 0)

    def test_scaled_value_threshold(self):
        A = tridiag(4, d=4.0)
        assert not offdiag_pattern(symmetric_strength(A, 0.3)).any()
        S = symmetric_strength(A, 0.25).toarray()
        assert S[1, 0] == 0.25

    def test_identity(self):
        assert symmetric_strength(SparseMatrix.identity(5), 0.5).equals(SparseMatrix.identity(5))

    def test_nonpositive_diagonal(self):
        with pytest.raises(ValueError):
            symmetric_strength(SparseMatrix.from_dense([[1.0, 0.0], [0.0, -1.0]]), 0.1)


class TestEvolution:
    def test_poisson1d_neighbors(self):
        S = evolution_strength(tridiag(9), StrengthConfig("evolution", 4.0))
        P = offdiag_pattern(S)
        expect = np.zeros((9, 9), dtype=bool)
        i = np.arange(8)
        expect[i, i + 1] = expect[i + 1, i] = True
        assert np.array_equal(P, expect)

    def test_diagonal_matrix(self):
        A = SparseMatrix.from_dense(np.diag([1.0, 2.0, 3.0]))
        S = evolution_strength(A, StrengthConfig("evolution", 4.0))
        assert S.equals(SparseMatrix.identity(3))

    @pytest.mark.parametrize("weighting", ["spectral", "l1jacobi"])
    def test_grid_aligned_anisotropy(self, weighting):
        n = 8
        A = aniso2d(n, 0.001)
        S = evolution_strength(A, StrengthConfig("evolution", 4.0, evolution_weighting=weighting))
        rows, cols = np.nonzero(offdiag_pattern(S))
        assert rows.size > 0
        # strong connections only between x-neighbours (same y row)
        assert np.all(rows // n == cols // n)
        assert np.all(np.abs(rows - cols) == 1)

    def test_l1_weighting_skips_eigen_estimate(self):
        A = aniso2d(10, 0.01)
        costs = {}
        for w in ("spectral", "l1jacobi"):
            led = WorkLedger(A.nnz)
            with ledger_scope(led, "Aggregation"):
                evolution_strength(A, StrengthConfig("evolution", 4.0, evolution_weighting=w))
            costs[w] = led.buckets["Aggregation"]
        # the Lanczos estimate alone costs about 15 matvecs
        assert costs["spectral"] - costs["l1jacobi"] >= 14

    def test_one_sided_stencil_has_strong_couplings(self):
        # lower bidiagonal (pure upwind in 1D): every row but the outflow one sees a neighbour
        A = SparseMatrix.from_scipy(sp.diags([-np.ones(7), np.ones(8) * 1.0], [-1, 0]))
        S = evolution_strength(A, StrengthConfig("evolution", 4.0))
        assert offdiag_pattern(S)[:-1].any(axis=1).all()

    def test_zero_diagonal(self):
        with pytest.raises(ValueError):
            evolution_strength(SparseMatrix.from_dense([[0.0, 1.0], [1.0, 1.0]]), StrengthConfig())


class TestNormalize:
    def test_row_scaling(self):
        S = SparseMatrix.from_dense([[3.0, 2.0, 4.0], [0, 1, 0], [0, 0, 1]])
        assert normalize_strength(S).toarray()[0].tolist() == [1.0, 0.5, 1.0]

    def test_identity(self):
        assert normalize_strength(SparseMatrix.identity(4)).equals(SparseMatrix.identity(4))

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            normalize_strength(SparseMatrix.from_dense([[1.0, -1.0], [0.0, 1.0]]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 25), st.integers(0, 2**31 - 1))
    def test_output_range(self, n, seed):
        rng = np.random.default_rng(seed)
        M = sp.random(n, n, density=0.4, random_state=rng).toarray()
        N = normalize_strength(SparseMatrix.from_dense(M)).toarray()
        assert np.all(np.diag(N) == 1.0)
        assert N.min() >= 0 and N.max() <= 1.0
        off = N - np.diag(np.diag(N))
        for i in range(n):
            if off[i].any():
                assert off[i].max() == 1.0


class TestAmalgamate:
    def test_m1_unchanged(self, rng):
        S = random_spd_sparse(rng, 6)
        assert amalgamate(S, 1) is S

    def test_block_max(self):
        D = np.zeros((4, 4))
        D[:2, :2] = [[1.0, -3.0], [2.0, 0.5]]
        D[2:, 2:] = [[7.0, 1.0], [0.0, -2.0]]
        assert np.array_equal(amalgamate(SparseMatrix.from_dense(D), 2).toarray(), np.diag([3.0, 7.0]))

    def test_indivisible(self):
        with pytest.raises(ValueError):
            amalgamate(tridiag(5), 2)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 3), st.integers(0, 2**31 - 1))
    def test_pattern_covers_scalar_entries(self, nb, m, seed):
        rng = np.random.default_rng(seed)
        n = nb * m
        S = SparseMatrix.from_scipy(sp.random(n, n, density=0.3, random_state=rng))
        N = amalgamate(S, m).toarray()
        D = S.toarray()
        for i, j in zip(*np.nonzero(D)):
            assert N[i // m, j // m] >= abs(D[i, j]) > 0
        assert np.count_nonzero(N) == len({(i // m, j // m) for i, j in zip(*np.nonzero(D))})


@pytest.mark.parametrize("measure", ["classical", "symmetric"])
def test_patterns_monotone_in_theta(measure, rng):
    A = random_spd_sparse(rng, 30, 0.15)
    A = SparseMatrix.from_dense(-np.abs(A.toarray()) + 2 * np.diag(np.abs(A.diagonal())))
    prev = None
    for theta in np.linspace(0, 1, 6):
        P = strength_of_connection(A, StrengthConfig(measure, float(theta))).toarray() != 0
        if prev is not None:
            assert not (P & ~prev).any()
        prev = P


def test_config_validation():
    with pytest.raises(ValueError):
        StrengthConfig("distance")
    with pytest.raises(ValueError):
        StrengthConfig(drop_tol=-1)
    with pytest.raises(ValueError):
        StrengthConfig(evolution_steps=0)
    with pytest.raises(ValueError):
        StrengthConfig(evolution_weighting="chebyshev")
