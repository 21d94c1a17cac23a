import numpy as np
import pytest

from rnamg import (InterpConfig, ProblemSpec, SetupOptions, SparseMatrix, StrengthConfig,
                   cf_setup, generate, rn_setup, sa_setup, setup)
from rnamg.aggregation import aggregation_from_labels
from rnamg.complexity import SETUP_BUCKETS
from rnamg.hierarchy import direct_interpolation, rs_split, sa_tentative
from rnamg.sparse import galerkin_product, transpose
from rnamg.strength import classical_strength

from conftest import laplace2d, tridiag


def check_chain(H):
    for l, L in enumerate(H.levels[:-1]):
        nxt = H.levels[l + 1]
        assert L.P.shape == (L.A.n_rows, nxt.A.n_rows)
        assert L.R.shape == (nxt.A.n_rows, L.A.n_rows)
        assert nxt.A.n_rows < L.A.n_rows
        assert galerkin_product(L.R, L.A, L.P).equals(nxt.A)
    assert H.levels[-1].P is None and H.levels[-1].R is None


def check_spd_levels(H, rng):
    for L in H.levels:
        assert L.A.is_symmetric()
        X = rng.standard_normal((L.A.n_rows, 20))
        assert np.all(np.einsum("ij,ij->j", X, L.A.csr @ X) > 0)


class TestRootNode:
    def test_poisson8_two_levels(self):
        opts = SetupOptions(max_size=3, interp=InterpConfig(degree=1, energy_iters=2))
        H = rn_setup(tridiag(8), np.ones(8), opts=opts)
        assert [L.A.n_rows for L in H.levels] == [8, 3]
        P = H.levels[0].P.toarray()
        assert np.array_equal(P[H.levels[0].roots], np.eye(3))
        check_chain(H)

    def test_small_matrix_single_level(self):
        H = rn_setup(tridiag(10), np.ones(10))
        assert H.n_levels == 1
        assert H.operator_complexity() == 1.0

    def test_symmetric_restriction_is_transpose(self):
        pb = generate(ProblemSpec("poisson2d", 20))
        H = rn_setup(pb.A, pb.B)
        for L in H.levels[:-1]:
            assert L.R.equals(transpose(L.P))

    @pytest.mark.parametrize("kind,n,opts", [
        ("poisson2d", 24, SetupOptions()),
        ("aniso3d", 8, SetupOptions(interp=InterpConfig(degree=2, prefilter=0.2, postfilter=0.2))),
        ("rotated_aniso2d", 24, SetupOptions(interp=InterpConfig(degree=3, postfilter=(0.1, 4)))),
    ])
    def test_symmetric_levels(self, kind, n, opts, rng):
        pb = generate(ProblemSpec(kind, n))
        H = rn_setup(pb.A, pb.B, opts=opts)
        check_chain(H)
        check_spd_levels(H, rng)
        for L in H.levels[:-1]:
            err = np.abs(L.P.csr @ L.Bc - L.B).max()
            assert err <= 1e-10 * np.abs(L.B).max()

    def test_nonsymmetric_uses_its_own_restriction(self):
        pb = generate(ProblemSpec("recirc_flow", 24))
        H = rn_setup(pb.A, pb.B, pb.B_hat)
        assert not H.symmetric
        check_chain(H)
        L = H.levels[0]
        assert not L.R.equals(transpose(L.P))
        # R^T satisfies the dual constraint
        Rt = transpose(L.R).toarray()
        Rt_roots = Rt[L.roots]
        assert np.array_equal(Rt_roots, np.eye(Rt.shape[1]))

    def test_elasticity_vector_path(self):
        pb = generate(ProblemSpec("elasticity2d", 4))
        H = rn_setup(pb.A, pb.B, opts=SetupOptions(vector_flag=True,
                                                   strength=StrengthConfig("classical", 0.5),
                                                   interp=InterpConfig(degree=2)))
        check_chain(H)
        P = H.levels[0].P.toarray()
        roots = H.levels[0].roots
        assert np.array_equal(roots.reshape(-1, 2)[:, 1], roots.reshape(-1, 2)[:, 0] + 1)
        assert np.array_equal(P[roots], np.eye(roots.size))
        L = H.levels[0]
        assert L.info["inconsistent_rows"] == []
        assert np.abs(P @ L.Bc - L.B).max() <= 1e-10 * np.abs(L.B).max()

    def test_default_vector_candidates(self):
        A = generate(ProblemSpec("elasticity2d", 3)).A
        H = rn_setup(A, None, opts=SetupOptions(vector_flag=True))
        L = H.levels[0]
        assert L.Bc.shape[1] == 2
        assert np.array_equal(L.B.shape, (A.n_rows, 2))
        assert np.abs(L.P.toarray() @ L.Bc - L.B).max() <= 1e-10 * np.abs(L.B).max()

    def test_ledger_buckets(self):
        pb = generate(ProblemSpec("poisson2d", 30))
        H = rn_setup(pb.A, pb.B)
        assert H.ledger.setup_total() == pytest.approx(sum(H.ledger.buckets[b] for b in SETUP_BUCKETS))
        assert H.ledger.buckets["SolveOther"] == 0

    def test_prefilter_shrinks_setup(self):
        pb = generate(ProblemSpec("aniso3d", 10))
        base = SetupOptions(interp=InterpConfig(degree=3))
        filt = SetupOptions(interp=InterpConfig(degree=3, prefilter=0.2))
        H0, H1 = rn_setup(pb.A, pb.B, opts=base), rn_setup(pb.A, pb.B, opts=filt)
        assert H1.ledger.setup_total() < H0.ledger.setup_total()
        assert H1.operator_complexity() <= H0.operator_complexity()

    def test_stagnation_warns(self):
        # identity: every node is its own aggregate
        H = rn_setup(SparseMatrix.identity(30), np.ones(30))
        assert H.n_levels == 1
        assert any("stagnated" in w for w in H.warnings)

    def test_summary_json(self):
        import json
        pb = generate(ProblemSpec("poisson2d", 16))
        H = rn_setup(pb.A, pb.B)
        d = json.loads(H.to_json())
        assert d["levels"][0]["n"] == 256
        assert d["operator_complexity"] == H.operator_complexity()
        assert set(d["ledger"]) >= set(SETUP_BUCKETS)


class TestSmoothedAggregation:
    def test_tentative_two_candidates(self):
        x = np.arange(1, 9) / 9
        agg = aggregation_from_labels([0, 0, 1, 1, 1, 2, 2, 2], [0, 3, 6])
        T, Bc, dropped = sa_tentative(agg, np.column_stack([np.ones(8), x]))
        expect = np.zeros((8, 6))
        expect[0:2, 0:2] = [[1, -1], [1, 1]]
        expect[2:5, 2:4] = [[1, -1], [1, 0], [1, 1]]
        expect[5:8, 4:6] = [[1, -1], [1, 0], [1, 1]]
        expect = expect @ np.diag(np.array([2, 2, 3, 2, 3, 2], dtype=float) ** -0.5)
        assert np.allclose(T.toarray(), expect, rtol=0, atol=1e-15)
        assert np.allclose(T.toarray() @ Bc, np.column_stack([np.ones(8), x]), atol=1e-15)
        assert dropped == []

    def test_tentative_constant(self):
        agg = aggregation_from_labels([0, 0, 1, 1, 1, 2, 2, 2], [0, 3, 6])
        T, Bc, _ = sa_tentative(agg, np.ones(8))
        Td = T.toarray()
        assert np.allclose(Td.T @ Td, np.eye(3), atol=1e-15)
        assert np.allclose(Td[:, 1], [0, 0, 1, 1, 1, 0, 0, 0] / np.sqrt(3), atol=1e-15)
        assert np.allclose(T.toarray().T @ np.ones(8), Bc[:, 0], atol=1e-15)

    def test_rank_deficient_dropped(self):
        agg = aggregation_from_labels([0, 0, 1, 1], [0, 2])
        B = np.column_stack([np.ones(4), [1.0, 1.0, 2.0, 3.0]])
        T, Bc, dropped = sa_tentative(agg, B)
        assert dropped == [0] and T.n_cols == 3
        assert np.allclose(T.toarray() @ Bc, B, atol=1e-14)

    def test_hierarchy(self, rng):
        pb = generate(ProblemSpec("poisson2d", 24))
        H = sa_setup(pb.A, pb.B, SetupOptions(method="sa"))
        check_chain(H)
        check_spd_levels(H, rng)


class TestClassical:
    def test_split_alternates(self):
        C, F = rs_split(classical_strength(tridiag(7), 0.25))
        assert C.tolist() == [1, 3, 5] and F.tolist() == [0, 2, 4, 6]

    def test_split_diagonal(self):
        C, F = rs_split(SparseMatrix.identity(5))
        assert C.tolist() == list(range(5)) and F.size == 0

    def test_split_partitions(self):
        A = laplace2d(9)
        C, F = rs_split(classical_strength(A, 0.25))
        assert C.size + F.size == 81 and np.intersect1d(C, F).size == 0

    def test_direct_weights(self):
        A = tridiag(7)
        S = classical_strength(A, 0.25)
        P = direct_interpolation(A, S, [1, 3, 5], [0, 2, 4, 6]).toarray()
        assert P[2].tolist() == [0.5, 0.5, 0.0]
        assert np.array_equal(P[[1, 3, 5]], np.eye(3))

    def test_single_neighbour_zero_row_sum(self):
        A = SparseMatrix.from_dense([[1.0, -1.0], [-1.0, 2.0]])
        S = classical_strength(A, 0.25)
        assert direct_interpolation(A, S, [1], [0]).toarray().tolist() == [[1.0], [1.0]]

    def test_constant_reproduced_on_zero_row_sums(self):
        # periodic-free Neumann 1D Laplacian: every row sums to zero
        A = tridiag(9).toarray()
        A[0, 0] = A[-1, -1] = 1.0
        A = SparseMatrix.from_dense(A)
        S = classical_strength(A, 0.25)
        C, F = rs_split(S)
        P = direct_interpolation(A, S, C, F).toarray()
        assert np.allclose(P @ np.ones(C.size), 1.0, atol=1e-15)

    def test_orphan_raises(self):
        A = tridiag(3)
        with pytest.raises(ValueError):
            direct_interpolation(A, SparseMatrix.identity(3), [1], [0, 2])

    def test_identity_single_level(self):
        H = cf_setup(SparseMatrix.identity(30))
        assert H.n_levels == 1

    def test_hierarchy(self, rng):
        pb = generate(ProblemSpec("poisson2d", 24))
        H = cf_setup(pb.A, SetupOptions(method="cf"))
        check_chain(H)
        check_spd_levels(H, rng)
        P = H.levels[0].P.toarray()
        C = H.levels[0].roots
        assert np.array_equal(P[C], np.eye(C.size))


def test_dispatch():
    pb = generate(ProblemSpec("poisson2d", 16))
    for m in ("rn", "sa", "cf"):
        assert setup(pb.A, pb.B, opts=SetupOptions(method=m)).method == m
    with pytest.raises(ValueError):
        SetupOptions(method="pairwise")


def test_rectangular_rejected():
    with pytest.raises(ValueError):
        rn_setup(SparseMatrix.from_dense(np.ones((3, 2))))
