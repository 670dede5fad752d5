import math

import numpy as np
import pytest

from bsumkit.core import BlockVector, build_pathology
from bsumkit.diagnostics import estimate_rate_exponent, stationarity_gap, verify_monotone_descent
from bsumkit.solvers import lasso_bcpg, make_lasso_problem


def test_nonregular_point_is_coordinatewise_minimum_only():
    fx = build_pathology("ex2_l1_nonregular")
    report = stationarity_gap(fx.problem, fx.start, seed=3)
    assert report.full_method == "sampled_directions"
    assert report.coordinatewise_method == "proximal_block_solve"
    assert report.coordinatewise_gap == pytest.approx(0.0, abs=1e-9)
    assert report.full_gap >= 0.9


def test_lasso_gap_uses_prox_residual(lasso_data):
    A, b, _ = lasso_data
    lam = float(np.abs(A.T @ b).max())
    problem = make_lasso_problem(A, b, lam, 4)
    report = stationarity_gap(problem, BlockVector.zeros(problem.dims))
    assert report.full_method == "prox_residual"
    assert report.full_gap == 0.0

    moved = BlockVector.zeros(problem.dims).replace_block(0, np.ones(problem.dims[0]))
    assert stationarity_gap(problem, moved).full_gap > 0


def test_monotone_descent_on_sequences():
    check = verify_monotone_descent([3.0, 2.0, 2.0, 2.5])
    assert not check.passed
    assert check.first_violation == 3
    assert check.max_increase == pytest.approx(0.5)

    assert verify_monotone_descent([3.0, 2.0, 2.0 + 1e-13]).passed
    assert not verify_monotone_descent([3.0, 2.0, 2.0 + 1e-13], slack=0.0).passed
    assert verify_monotone_descent([1.0]).passed
    with pytest.raises(ValueError):
        verify_monotone_descent([])


def test_monotone_descent_on_trace(lasso_data):
    A, b, lam = lasso_data
    _, trace = lasso_bcpg(A, b, lam, 5)
    check = verify_monotone_descent(trace)
    assert check.passed
    assert check.max_increase <= 1e-12


def test_sublinear_rate():
    values = 1.0 / np.arange(1, 201)
    est = estimate_rate_exponent(values, 0.0)
    assert est.classification == "sublinear"
    assert est.exponent == pytest.approx(-1.0, abs=1e-6)
    assert est.n_used == 100


def test_linear_rate():
    values = 0.5 ** np.arange(1, 61)
    est = estimate_rate_exponent(values, 0.0)
    assert est.classification == "linear"


def test_stalled_rate():
    est = estimate_rate_exponent(np.full(50, 2.0), 1.0)
    assert est.classification == "stalled"
    assert est.exponent == pytest.approx(0.0, abs=1e-12)


def test_rate_truncates_at_floor():
    values = np.concatenate([1.0 / np.arange(1, 21), np.zeros(5)])
    est = estimate_rate_exponent(values, 0.0)
    assert "truncated at r=21" in est.note
    assert est.n_used == 10


def test_rate_needs_enough_points():
    with pytest.raises(ValueError):
        estimate_rate_exponent([1.0, 0.5], 0.0)
    with pytest.raises(ValueError):
        estimate_rate_exponent([1.0, 0.5, 0.25, 0.125], 0.0, tail_fraction=0.0)
    # everything at or below f* leaves nothing to fit
    with pytest.raises(ValueError):
        estimate_rate_exponent([0.0, 0.0, 0.0, 0.0], 0.0)
    assert not math.isnan(estimate_rate_exponent([4.0, 2.0, 1.0, 0.5, 0.25, 0.125], 0.0, tail_fraction=1.0).exponent)
