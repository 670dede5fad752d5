"""bsumkit: block successive upper bound minimization and its relatives."""

from .core import (
    BlockVector,
    Coupling,
    FeasibleSet,
    KnownOptimum,
    Nonsmooth,
    PathologyFixture,
    Problem,
    build_pathology,
    directional_derivative,
    eval_objective,
    l1_norm,
    project,
    quadratic_penalty,
)
from .diagnostics import estimate_rate_exponent, stationarity_gap, verify_monotone_descent
from .engine import (
    QuadraticModel,
    StepsizeSchedule,
    StochasticStream,
    StopCriteria,
    Trace,
    run_bsum,
    run_bsumm,
    run_psca,
    run_ssum,
)
from .errors import BsumError
from .selection import SelectionRule, select_blocks
from .solvers import (
    cccp_minimize,
    cp_decompose,
    em_abundance,
    irls_solve,
    lasso_bcpg,
    nmf_factorize,
    wmmse_design,
)
from .surrogates import Surrogate, minimize_block_surrogate, validate_assumption_a

__version__ = "0.1.0"
