import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from bsumkit.core import FeasibleSet, build_pathology
from bsumkit.diagnostics import verify_monotone_descent
from bsumkit.engine import (
    TRACE_COLUMNS,
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
from bsumkit.errors import CouplingError, InfeasibleError, UnsupportedOperationError
from bsumkit.experiments import lasso_reference, least_squares_pool, pool_stream
from bsumkit.selection import SelectionRule
from bsumkit.solvers import lasso_bcpg, make_lasso_problem
from bsumkit.surrogates import Surrogate
from bsumkit.utils import soft_threshold

from conftest import no_tolerances


def test_stop_criteria_needs_one_criterion():
    with pytest.raises(ValueError):
        StopCriteria(max_iters=None, objective_rel_change_tol=None, stationarity_tol=None)
    with pytest.raises(ValueError):
        StopCriteria(max_iters=0)


def test_stepsize_schedules():
    assert StepsizeSchedule.constant(0.5).value(10) == 0.5
    s = StepsizeSchedule.diminishing()
    assert s.value(0) == 1.0
    assert s.value(2) == 0.5
    with pytest.raises(ValueError):
        StepsizeSchedule.constant(0.0)


def test_single_block_bsum_is_forward_backward(lasso_data):
    A, b, lam = lasso_data
    L = np.linalg.norm(A, 2) ** 2
    _, trace = lasso_bcpg(A, b, lam, stop=no_tolerances(20), surrogate=Surrogate.quadratic(phi=L))
    x = np.zeros(A.shape[1])
    expected = []
    for _ in range(20):
        x = soft_threshold(x - A.T @ (A @ x - b) / L, lam / L)
        r = A @ x - b
        expected.append(0.5 * r @ r + lam * np.abs(x).sum())
    assert_allclose(trace.objective_values, expected, rtol=1e-10, atol=1e-10)


def test_block_lasso_reaches_reference(lasso_data):
    A, b, lam = lasso_data
    f_ref = lasso_reference(A, b, lam, iters=5000)
    stop = StopCriteria(max_iters=50000, objective_rel_change_tol=1e-14)
    _, trace = lasso_bcpg(A, b, lam, 5, SelectionRule.cyclic(5), stop)
    assert trace.final_f <= f_ref + 1e-6
    assert verify_monotone_descent(trace).passed


def test_trace_records_start_at_one_with_initial_value(lasso_data):
    A, b, lam = lasso_data
    _, trace = lasso_bcpg(A, b, lam, 4, stop=no_tolerances(6))
    assert [rec.r for rec in trace.records] == [1, 2, 3, 4, 5, 6]
    assert [rec.blocks for rec in trace.records] == [(0,), (1,), (2,), (3,), (0,), (1,)]
    assert trace.initial_f == pytest.approx(0.5 * b @ b)
    assert trace.terminal_status == "max_iters"


def test_trace_csv_layout_and_round_trip(tmp_path, lasso_data):
    A, b, lam = lasso_data
    _, trace = lasso_bcpg(A, b, lam, 4, stop=no_tolerances(10), record_gap=True)
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(TRACE_COLUMNS)
    assert len(lines) == 11
    # wall times stay empty unless timing is requested
    assert all(line.endswith(",") for line in lines[1:])
    back = Trace.from_csv(path)
    assert [rec.blocks for rec in back.records] == [rec.blocks for rec in trace.records]
    assert_array_equal(back.objective_values, trace.objective_values)
    assert [rec.stat_gap for rec in back.records] == [rec.stat_gap for rec in trace.records]
    assert all(rec.feas_residual is None for rec in back.records)


def test_same_seed_gives_identical_trace_files(tmp_path, lasso_data):
    A, b, lam = lasso_data
    for name in ("a.csv", "b.csv"):
        _, trace = lasso_bcpg(A, b, lam, 4, SelectionRule.randomized(4, seed=9), no_tolerances(50))
        trace.to_csv(tmp_path / name)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_wall_clock_budget(lasso_data):
    A, b, lam = lasso_data
    stop = StopCriteria(max_iters=None, objective_rel_change_tol=None, stationarity_tol=None, wall_clock_limit=1e-9)
    _, trace = lasso_bcpg(A, b, lam, 4, stop=stop)
    assert trace.terminal_status == "budget"
    assert len(trace) == 1


def test_stationarity_stop(lasso_data):
    A, b, lam = lasso_data
    stop = StopCriteria(objective_rel_change_tol=None, stationarity_tol=1e-6)
    _, trace = lasso_bcpg(A, b, lam, 4, stop=stop, record_gap=True)
    assert trace.terminal_status == "converged"
    assert trace.records[-1].stat_gap <= 1e-6


def test_unbounded_linear_subproblem_diverges():
    fx = build_pathology("ex5_linear_bound", bounded=False)
    _, trace = run_bsum(fx.problem, Surrogate.linear(), SelectionRule.cyclic(2), StopCriteria(), fx.start)
    assert trace.terminal_status == "diverged"
    assert any("unbounded" in note for note in trace.notes)


def test_coupled_problems_need_bsumm():
    fx = build_pathology("ex4_coupling")
    with pytest.raises(CouplingError):
        run_bsum(fx.problem, Surrogate.exact(), SelectionRule.cyclic(2), x0=fx.start)
    with pytest.raises(CouplingError):
        run_psca(fx.problem, Surrogate.exact(), x0=fx.start)
    plain = build_pathology("ex5_linear_bound")
    with pytest.raises(CouplingError):
        run_bsumm(plain.problem, Surrogate.exact(), x0=plain.start)


def test_infeasible_start_is_rejected():
    fx = build_pathology("ex5_linear_bound")
    x0 = fx.start.replace_block(0, [2.0])
    with pytest.raises(InfeasibleError):
        run_bsum(fx.problem, Surrogate.exact(), SelectionRule.cyclic(2), x0=x0)


def test_slice_updates_stay_at_coupled_start():
    fx = build_pathology("ex4_coupling")
    x, trace = run_bsum(
        fx.problem, Surrogate.exact(), SelectionRule.cyclic(2), no_tolerances(20), fx.start, coupling="slice"
    )
    assert_array_equal(x.flatten(), [0.0, 2.0])
    assert trace.final_f == 4.0
    assert all(rec.feas_residual == 0.0 for rec in trace.records)


def test_bsumm_reaches_coupled_optimum():
    fx = build_pathology("ex4_coupling")
    stop = StopCriteria(max_iters=10000, objective_rel_change_tol=1e-14, feasibility_tol=1e-9)
    x, lam, trace = run_bsumm(fx.problem, Surrogate.proximal(1.0), rho=1.0, stop=stop, x0=fx.start)
    assert trace.final_f == pytest.approx(2.0, abs=1e-6)
    assert fx.problem.coupling.residual_norm(x) <= 1e-6
    assert_allclose(x.flatten(), [1.0, 1.0], atol=1e-5)
    assert_allclose(lam, [-2.0], atol=1e-4)
    assert_array_equal(trace.extras["dual"], lam)


def test_bsumm_notes_nonconvex_input():
    fx = build_pathology("ex4_coupling")
    fx.problem.convex = False
    _, _, trace = run_bsumm(fx.problem, Surrogate.proximal(1.0), stop=no_tolerances(4), x0=fx.start)
    assert any("not marked convex" in note for note in trace.notes)
    with pytest.raises(ValueError):
        run_bsumm(fx.problem, Surrogate.proximal(1.0), rho=0.0, x0=fx.start)


def test_psca_unit_step_matches_bsum(lasso_data):
    A, b, lam = lasso_data
    problem = make_lasso_problem(A, b, lam, 4)
    stop = no_tolerances(40)
    _, t_bsum = run_bsum(problem, Surrogate.quadratic(), SelectionRule.cyclic(4), stop)
    _, t_psca = run_psca(problem, Surrogate.quadratic(), StepsizeSchedule.constant(1.0), SelectionRule.cyclic(4), stop)
    assert_allclose(t_psca.objective_values, t_bsum.objective_values, rtol=0, atol=1e-12)


def test_psca_rejects_steps_above_one(lasso_data):
    A, b, lam = lasso_data
    problem = make_lasso_problem(A, b, lam, 4)
    with pytest.raises(ValueError, match="outside"):
        run_psca(problem, Surrogate.quadratic(), StepsizeSchedule.constant(1.5))


def test_psca_thread_pool_gives_same_run(lasso_data):
    A, b, lam = lasso_data
    problem = make_lasso_problem(A, b, lam, 4)
    schedule = StepsizeSchedule.constant(0.25)
    _, serial = run_psca(problem, Surrogate.quadratic(), schedule, stop=no_tolerances(30))
    _, pooled = run_psca(problem, Surrogate.quadratic(), schedule, stop=no_tolerances(30), n_workers=2)
    assert_array_equal(pooled.objective_values, serial.objective_values)
    assert serial.records[0].blocks == (0, 1, 2, 3)


def test_naive_parallel_oscillates_and_damping_fixes_it():
    fx = build_pathology("naive_parallel")
    _, naive = run_psca(fx.problem, Surrogate.exact(), StepsizeSchedule.constant(1.0), x0=fx.start)
    assert naive.terminal_status == "detected_cycle"
    assert naive.cycle.period == 2
    _, damped = run_psca(fx.problem, Surrogate.exact(), StepsizeSchedule.diminishing(gamma0=1.0), x0=fx.start)
    assert damped.terminal_status == "converged"
    assert damped.final_f <= 1e-6


def test_quadratic_model_least_squares():
    q = QuadraticModel.least_squares([1.0, 2.0], 3.0)
    assert q.value([1.0, 1.0]) == 0.0
    assert q.value([0.0, 0.0]) == 9.0
    assert_array_equal(q.hess_matrix(), [[2.0, 4.0], [4.0, 8.0]])


def test_ssum_aggregate_and_pool_solution():
    rng = np.random.default_rng(3)
    a, b = least_squares_pool(rng, size=20, dim=3)
    stream = pool_stream(a, b, seed=5)
    x, trace = run_ssum(stream, FeasibleSet.unconstrained(3), no_tolerances(2000), keep_iterates=True)
    assert trace.initial_f is None
    assert trace.cycle is None
    assert_allclose(x.flatten(), np.linalg.lstsq(a, b, rcond=None)[0], atol=1e-3)

    replay = np.random.default_rng(stream.seed)
    draws = [stream.sampler(replay) for _ in range(100)]
    models = [stream.builder(xi, trace.iterates[k].flatten()) for k, xi in enumerate(draws)]
    _, short = run_ssum(pool_stream(a, b, seed=5), FeasibleSet.unconstrained(3), no_tolerances(100))
    agg = short.extras["aggregate"]
    assert_allclose(agg.hess_matrix(), np.mean([m.hess_matrix() for m in models], axis=0), atol=1e-12)
    assert_allclose(agg.lin, np.mean([m.lin for m in models], axis=0), atol=1e-12)
    losses = [stream.loss(trace.iterates[k].flatten(), xi) for k, xi in enumerate(draws)]
    assert short.final_f == pytest.approx(np.mean(losses), rel=1e-12)


def test_ssum_box_constrained_pool():
    rng = np.random.default_rng(4)
    a, b = least_squares_pool(rng, size=20, dim=2)
    x, _ = run_ssum(pool_stream(a, b), FeasibleSet.box(-0.1, 0.1, 2), no_tolerances(200))
    assert FeasibleSet.box(-0.1, 0.1, 2).contains(x[0])


def test_ssum_rejects_non_quadratic_family():
    stream = StochasticStream(lambda g: 0, lambda xi, z: None, lambda x, xi: 0.0, family="jensen")
    with pytest.raises(UnsupportedOperationError):
        run_ssum(stream, FeasibleSet.unconstrained(2))
