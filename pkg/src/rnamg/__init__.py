"""Root-node algebraic multigrid with energy-minimizing, filterable interpolation."""

from .complexity import WorkLedger, cycle_complexity, operator_complexity, setup_report
from .cycle import SolveReport, convergence_factor, cycle, solve
from .hierarchy import Hierarchy, SetupOptions, cf_setup, rn_setup, sa_setup, setup
from .interpolation import CandidateSet, InterpConfig
from .problems import ProblemSpec, generate
from .relaxation import RelaxConfig, relax
from .sparse import SparseMatrix
from .strength import StrengthConfig

__all__ = [
    "CandidateSet", "Hierarchy", "InterpConfig", "ProblemSpec", "RelaxConfig",
    "SetupOptions", "SolveReport", "SparseMatrix", "StrengthConfig", "WorkLedger",
    "cf_setup", "convergence_factor", "cycle", "cycle_complexity", "generate",
    "operator_complexity", "relax", "rn_setup", "sa_setup", "setup", "setup_report",
    "solve",
]

__version__ = "0.1.0"
