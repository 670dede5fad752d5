import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from bsumkit.core import BlockVector, quadratic_penalty
from bsumkit.diagnostics import verify_monotone_descent
from bsumkit.engine import StopCriteria
from bsumkit.errors import BisectionError, DegenerateInstanceError, UnboundedSubproblemError
from bsumkit.selection import SelectionRule
from bsumkit.solvers import (
    ConvexFunction,
    abundance_nll,
    cccp_minimize,
    cp_decompose,
    cp_full,
    em_abundance,
    em_update,
    irls_bound,
    irls_solve,
    lasso_bcpg,
    lasso_partition,
    make_irls_problem,
    nmf_curvature,
    nmf_factorize,
    power_bisection,
    smoothed_norms,
    wmmse_design,
)
from bsumkit.surrogates import validate_assumption_a

from conftest import no_tolerances


# LASSO


def test_large_lambda_gives_exact_zero(lasso_data):
    A, b, _ = lasso_data
    lam = float(np.abs(A.T @ b).max())
    for rule in (SelectionRule.cyclic(4), SelectionRule.gauss_southwell(4), SelectionRule.randomized(4, seed=1)):
        x, _ = lasso_bcpg(A, b, lam, 4, rule, no_tolerances(40))
        assert_array_equal(x, np.zeros(A.shape[1]))


def test_lasso_partition_checks():
    assert [c.tolist() for c in lasso_partition(5, 2)] == [[0, 1, 2], [3, 4]]
    assert len(lasso_partition(5)) == 1
    with pytest.raises(ValueError):
        lasso_partition(5, 6)
    with pytest.raises(ValueError):
        lasso_partition(4, [[0, 1], [1, 2, 3]])
    with pytest.raises(ValueError):
        lasso_partition(3, [[0, 1, 2], []])


def test_lasso_explicit_partition_reassembles_columns(lasso_data):
    A, b, lam = lasso_data
    perm = np.random.default_rng(0).permutation(A.shape[1])
    partition = [perm[:15], perm[15:]]
    x_perm, _ = lasso_bcpg(A, b, lam, partition, stop=StopCriteria(objective_rel_change_tol=1e-14))
    x_plain, _ = lasso_bcpg(A, b, lam, 2, stop=StopCriteria(objective_rel_change_tol=1e-14))
    assert_allclose(x_perm, x_plain, atol=1e-5)


# NMF


def test_nmf_step_is_multiplicative_update(rng):
    V = np.abs(rng.standard_normal((6, 5)))
    W = np.abs(rng.standard_normal((6, 2))) + 0.1
    H = np.abs(rng.standard_normal((2, 5))) + 0.1
    factors, trace = nmf_factorize(V, 2, init=(W, H), stop=no_tolerances(1))
    assert trace.records[0].blocks == (0,)
    assert_allclose(factors.H, H * (W.T @ V) / (W.T @ W @ H), rtol=1e-9)
    assert_array_equal(factors.W, W)


def test_nmf_descends_and_stays_positive(rng):
    V = np.abs(rng.standard_normal((8, 6)))
    factors, trace = nmf_factorize(V, 3, stop=no_tolerances(200), seed=2)
    assert verify_monotone_descent(trace, 1e-12).passed
    assert np.all(factors.W > 0) and np.all(factors.H > 0)


def test_nmf_exact_factorization_is_a_fixed_point(rng):
    W = np.abs(rng.standard_normal((5, 2))) + 0.5
    H = np.abs(rng.standard_normal((2, 4))) + 0.5
    factors, trace = nmf_factorize(W @ H, 2, init=(W, H))
    assert trace.terminal_status == "converged"
    assert trace.final_f == 0.0
    assert_array_equal(factors.W, W)
    assert_array_equal(factors.H, H)


def test_nmf_input_checks(rng):
    V = np.abs(rng.standard_normal((4, 3)))
    with pytest.raises(ValueError):
        nmf_factorize(-V, 2)
    with pytest.raises(ValueError):
        nmf_factorize(V, 2, init=(np.zeros((4, 2)), np.ones((2, 3))))
    phi = nmf_curvature(V, 1)
    z = BlockVector((np.array([1.0, 0.0, 1.0]), np.ones(4)))
    with pytest.raises(DegenerateInstanceError):
        phi(0, z)


# IRLS


def test_irls_bound_majorizes(rng):
    terms = [(rng.standard_normal((2, 3)), rng.standard_normal(2)) for _ in range(4)]
    z = rng.standard_normal(3)
    assert irls_bound(terms, 0.1, z, z) == pytest.approx(smoothed_norms(terms, 0.1, z))
    for x in rng.standard_normal((50, 3)):
        assert irls_bound(terms, 0.1, x, z) >= smoothed_norms(terms, 0.1, x) - 1e-12


def test_irls_problem_bound_passes_validation(rng):
    A = rng.standard_normal((8, 3))
    b = rng.standard_normal(8)
    terms = [(A[j : j + 1], -b[j : j + 1]) for j in range(8)]
    problem, surrogate = make_irls_problem(terms, eta=1e-3)
    report = validate_assumption_a(surrogate, problem, BlockVector((rng.standard_normal(3),)), n_samples=200)
    assert report.passed
    assert report.verdict["A3"] == "pass"


def test_irls_l1_regression_finds_median():
    u = np.array([-0.5, -0.1, 0.2, 0.3, 0.45])
    terms = [(np.array([[1.0]]), np.array([-uj])) for uj in u]
    x, trace = irls_solve(terms, eta=1e-4, stop=StopCriteria(max_iters=20000, objective_rel_change_tol=1e-15))
    assert x[0] == pytest.approx(0.2, abs=1e-3)
    assert verify_monotone_descent(trace, 1e-12).passed


def test_irls_folds_quadratic_regularizer(rng):
    A = rng.standard_normal((12, 3))
    b = rng.standard_normal(12)
    terms = [(A[j : j + 1], -b[j : j + 1]) for j in range(12)]
    h = quadratic_penalty(np.sqrt(0.5) * np.eye(3), np.zeros(3))
    x, _ = irls_solve(terms, h=h, eta=1e-2, stop=StopCriteria(objective_rel_change_tol=1e-15, max_iters=5000))
    r = A @ x - b
    grad = A.T @ (r / np.sqrt(r**2 + 1e-4)) + 0.5 * x
    assert_allclose(grad, 0.0, atol=1e-5)


def test_irls_checks_terms():
    with pytest.raises(ValueError):
        irls_solve([(np.ones((2, 2)), np.ones(3))])
    with pytest.raises(ValueError):
        irls_solve([(np.ones((1, 2)), np.ones(1)), (np.ones((1, 3)), np.ones(1))])
    with pytest.raises(ValueError):
        irls_solve([(np.ones((1, 2)), np.ones(1))], eta=0.0)


# CP


def test_cp_recovers_exact_low_rank_tensor(rng):
    A, B, C = rng.standard_normal((6, 2)), rng.standard_normal((5, 2)), rng.standard_normal((4, 2))
    X = cp_full(A, B, C)
    factors, trace = cp_decompose(X, 2, stop=StopCriteria(max_iters=3000, objective_rel_change_tol=1e-14), seed=1)
    assert factors.fit >= 0.99
    assert verify_monotone_descent(trace, 1e-9).passed
    assert trace.records[2].blocks == (2,)


@pytest.mark.parametrize("mode", ["plain_als", "proximal_als", "diminishing_proximal"])
def test_cp_modes_descend(rng, mode):
    X = rng.standard_normal((4, 5, 3))
    _, trace = cp_decompose(X, 3, mode=mode, stop=no_tolerances(60), seed=0)
    assert verify_monotone_descent(trace, 1e-9).passed


def test_cp_unknown_mode(rng):
    with pytest.raises(ValueError, match="valid modes"):
        cp_decompose(rng.standard_normal((2, 2, 2)), 1, mode="hals")


def test_cp_rank_deficient_solve_is_noted():
    X = np.ones((3, 3, 3))
    init = (np.ones((3, 2)), np.ones((3, 2)), np.ones((3, 2)))
    _, trace = cp_decompose(X, 2, stop=no_tolerances(3), init=init)
    assert any("rank-deficient" in note for note in trace.notes)


# CCCP


def test_cccp_with_closed_form_step():
    g1 = ConvexFunction(lambda x: float(x @ x), lambda x: 2 * x, lambda c: c / 2)
    g2 = ConvexFunction(lambda x: float(2 * x.sum()), lambda x: np.full(x.size, 2.0))
    x, trace = cccp_minimize(g1, g2, np.array([5.0, -3.0]))
    assert_allclose(x, [1.0, 1.0], atol=1e-12)
    assert verify_monotone_descent(trace).passed


def test_cccp_with_numerical_step():
    g1 = ConvexFunction(lambda x: float(np.sum(x**4)) / 4, lambda x: x**3)
    g2 = ConvexFunction(lambda x: float(x @ x), lambda x: 2 * x)
    x, trace = cccp_minimize(g1, g2, np.array([0.5, -2.0]))
    # stationary points of x^4/4 - x^2 away from 0 are +-sqrt(2)
    assert_allclose(np.abs(x), np.sqrt(2.0), atol=1e-4)
    assert verify_monotone_descent(trace, 1e-10).passed


def test_cccp_unbounded_subproblem():
    g1 = ConvexFunction(lambda x: 0.0, lambda x: np.zeros_like(x), lambda c: np.full(c.size, np.inf))
    g2 = ConvexFunction(lambda x: float(x @ x), lambda x: 2 * x)
    with pytest.raises(UnboundedSubproblemError):
        cccp_minimize(g1, g2, np.array([1.0]))


# EM


def test_em_update_stays_on_simplex(rng):
    alpha = np.abs(rng.standard_normal((40, 4)))
    rho = np.full(4, 0.25)
    new = em_update(alpha, rho)
    assert new.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(new > 0)
    assert_allclose(em_update(alpha, rho, n_partitions=3), new, atol=1e-12)


def test_em_matches_grid_maximizer(rng):
    alpha = np.abs(rng.standard_normal((200, 2))) + 0.01
    model, trace = em_abundance(alpha)
    grid = np.linspace(1e-6, 1 - 1e-6, 20001)
    nll = [abundance_nll(alpha, np.array([t, 1 - t])) for t in grid]
    best = grid[int(np.argmin(nll))]
    assert model.rho[0] == pytest.approx(best, abs=1e-3)
    assert verify_monotone_descent(trace, 1e-12).passed
    assert model.log_likelihood == pytest.approx(-200 * abundance_nll(alpha, model.rho))


def test_em_rejects_uninformative_read():
    alpha = np.array([[0.5, 0.5], [0.0, 0.0]])
    with pytest.raises(ValueError, match="Read 1"):
        em_abundance(alpha)
    with pytest.raises(ValueError):
        em_abundance(np.ones((3, 2)), rho0=np.array([1.0, 0.0]))


def _mixture_reads(rng, weights, n=300):
    labels = rng.choice(len(weights), size=n, p=weights)
    alpha = 0.2 + 0.05 * rng.uniform(size=(n, len(weights)))
    alpha[np.arange(n), labels] = 1.0
    return alpha


def test_em_adds_fixed_point_stop_to_caller_stop(rng):
    alpha = _mixture_reads(rng, [0.5, 0.3, 0.2])
    stop = StopCriteria(max_iters=50000, objective_rel_change_tol=None, stationarity_tol=None)
    model, trace = em_abundance(alpha, stop=stop)
    assert trace.terminal_status == "converged"
    assert len(trace) < 50000
    assert trace.records[-1].step_norm <= 1e-12
    assert_allclose(em_update(alpha, model.rho), model.rho, atol=1e-10)


def test_em_keeps_caller_step_tol(rng):
    alpha = _mixture_reads(rng, [0.5, 0.3, 0.2])
    stop = StopCriteria(max_iters=50000, objective_rel_change_tol=None, stationarity_tol=None, step_tol=1e-3)
    _, loose = em_abundance(alpha, stop=stop)
    _, tight = em_abundance(alpha)
    assert loose.terminal_status == "converged"
    assert loose.records[-1].step_norm <= 1e-3
    assert len(loose) < len(tight)


# WMMSE


def test_single_user_rate_is_closed_form():
    h = np.array([[[[0.8 + 0.6j]]]])
    beams, trace = wmmse_design(h, 2.0, 0.5, stop=StopCriteria(max_iters=200))
    assert beams.rates[0] == pytest.approx(np.log1p(2.0 * 1.0 / 0.5), abs=1e-8)
    assert beams.powers[0] <= 2.0 + 1e-9


def test_wmmse_descends_within_power_budget(rng):
    H = (rng.standard_normal((3, 3, 2, 2)) + 1j * rng.standard_normal((3, 3, 2, 2))) / np.sqrt(2)
    beams, trace = wmmse_design(H, 1.0, 1.0, stop=StopCriteria(max_iters=100), seed=4)
    assert verify_monotone_descent(trace, 1e-10).passed
    assert np.all(beams.powers <= 1.0 + 1e-9)
    assert beams.sum_rate > 0
    assert trace.records[0].blocks == (0, 1, 2)
    assert trace.records[1].blocks == (3, 4, 5)


def test_power_bisection_respects_budget(rng):
    M = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    Q = 1e-3 * (M @ M.conj().T)
    c = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    v = power_bisection(Q, c, 0.5)
    assert np.linalg.norm(v) ** 2 <= 0.5
    assert np.linalg.norm(v) ** 2 == pytest.approx(0.5, rel=1e-8)
    assert_array_equal(power_bisection(Q, np.zeros(3, dtype=complex), 0.5), np.zeros(3))


def test_power_bisection_reports_failed_bracket():
    Q = np.zeros((2, 2))
    c = np.array([1.0, 0.0], dtype=complex)
    with pytest.raises(BisectionError) as err:
        power_bisection(Q, c, 1e-50, user=3, max_mu=1e10)
    assert err.value.diagnostics["user"] == 3
