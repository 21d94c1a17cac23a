import numpy as np
import pytest

from rnamg import (ProblemSpec, RelaxConfig, WorkLedger, cycle_complexity, generate,
                   operator_complexity, setup, setup_report, solve)
from rnamg.complexity import SETUP_BUCKETS, bucket, charge, ledger_scope, rows_to_csv
from rnamg.hierarchy import Hierarchy, Level
from rnamg.sparse import SparseMatrix


def fake_hierarchy(nnz_A, nnz_P, nnz_R):
    """Hierarchy whose matrices only matter through their nonzero counts."""
    levels = []
    sizes = [max(a, 1) for a in nnz_A]
    for i, a in enumerate(nnz_A):
        n = sizes[0]
        A = SparseMatrix.from_triplets(np.arange(a) % n, np.arange(a) // n, np.ones(a), (n, n))
        P = R = None
        if i < len(nnz_A) - 1:
            P = SparseMatrix.from_triplets(np.arange(nnz_P[i]) % n, np.arange(nnz_P[i]) // n,
                                           np.ones(nnz_P[i]), (n, n))
            R = SparseMatrix.from_triplets(np.arange(nnz_R[i]) % n, np.arange(nnz_R[i]) // n,
                                           np.ones(nnz_R[i]), (n, n))
        levels.append(Level(A=A, P=P, R=R))
    return Hierarchy(levels=levels, ledger=WorkLedger(nnz_A[0]), symmetric=True)


HAND_CASES = [
    # nnz(A_l), nnz(P_l), nnz(R_l), nu
    ([100], [], [], (1, 1)),
    ([100, 25], [30], [30], (1, 1)),
    ([400, 120, 30], [200, 50], [200, 50], (1, 1)),
    ([400, 120, 30], [200, 50], [150, 60], (2, 1)),
    ([900, 400, 100, 16], [500, 180, 40], [500, 180, 40], (0, 2)),
]


@pytest.mark.parametrize("nnz_A,nnz_P,nnz_R,nu", HAND_CASES)
def test_formulas_match_hand_evaluation(nnz_A, nnz_P, nnz_R, nu):
    H = fake_hierarchy(nnz_A, nnz_P, nnz_R)
    oc = sum(nnz_A) / nnz_A[0]
    cc = sum((nu[0] + nu[1] + 1) * nnz_A[l] + nnz_P[l] + nnz_R[l]
             for l in range(len(nnz_A) - 1)) / nnz_A[0]
    assert operator_complexity(H) == oc
    assert cycle_complexity(H, *nu) == cc


def test_documented_values():
    assert operator_complexity(fake_hierarchy([100, 25], [30], [30])) == 1.25
    assert cycle_complexity(fake_hierarchy([100, 25], [30], [30]), 1, 1) == 3.6
    assert operator_complexity(fake_hierarchy([50], [], [])) == 1.0
    assert cycle_complexity(fake_hierarchy([50], [], []), 1, 1) == 0.0


def test_ledger_bucketing():
    led = WorkLedger(10)
    with ledger_scope(led, "Aggregation"):
        charge(20)
        with bucket("RAP"):
            charge(5)
        charge(10)
    charge(1000)  # no active ledger
    assert led.buckets["Aggregation"] == 3.0
    assert led.buckets["RAP"] == 0.5
    assert led.total() == 3.5 and led.setup_total() == 3.5


def test_ledger_rejects_bad_input():
    with pytest.raises(ValueError):
        WorkLedger(0)
    led = WorkLedger(1)
    with pytest.raises(KeyError):
        led.add("Smoothing", 1)
    with pytest.raises(ValueError):
        led.add("P", -1)


def test_setup_report_sums_buckets():
    pb = generate(ProblemSpec("poisson2d", 24))
    H = setup(pb.A, pb.B)
    rep = setup_report(H)
    assert rep["Total SC"] == pytest.approx(sum(rep[b] for b in SETUP_BUCKETS), rel=0, abs=1e-12)
    assert rep["Total SC"] == pytest.approx(H.ledger.setup_total(), rel=1e-15)
    assert all(rep[b] > 0 for b in SETUP_BUCKETS)


def test_single_level_report_is_zero():
    pb = generate(ProblemSpec("poisson1d", 10))
    H = setup(pb.A, pb.B)
    assert H.n_levels == 1
    assert all(v == 0 for v in setup_report(H).values())


def test_invariants_on_real_hierarchies():
    for kind, n in [("poisson2d", 30), ("aniso3d", 10), ("rotated_aniso2d", 24)]:
        pb = generate(ProblemSpec(kind, n))
        H = setup(pb.A, pb.B)
        assert H.n_levels >= 2
        assert operator_complexity(H) >= 1
        assert cycle_complexity(H, 1, 1) >= 3


@pytest.mark.parametrize("scheme", ["jacobi", "gauss_seidel"])
@pytest.mark.parametrize("kind,n", [("poisson2d", 32), ("rotated_aniso2d", 32)])
def test_instrumented_solve_matches_formula(scheme, kind, n):
    pb = generate(ProblemSpec(kind, n, psi=np.pi / 8) if kind == "rotated_aniso2d"
                  else ProblemSpec(kind, n))
    H = setup(pb.A, pb.B)
    rep = solve(H, pb.rhs, tol=1e-8, max_iters=60, relax=RelaxConfig(scheme))
    assert rep.iterations > 1
    assert abs(rep.work_units_solve - rep.iterations * rep.chi_cc) <= 1.0


def test_one_cycle_matches_formula_exactly():
    pb = generate(ProblemSpec("poisson2d", 20))
    H = setup(pb.A, pb.B)
    rep = solve(H, pb.rhs, max_iters=1, relax=RelaxConfig("jacobi"))
    assert rep.iterations == 1
    assert rep.work_units_solve == pytest.approx(H.cycle_complexity(1, 1), rel=1e-14)


def test_csv_formatting():
    text = rows_to_csv([{"a": 1.23456789, "b": None}], ["a", "b"])
    assert text == "a,b\n1.23457,--\n"
